"""Magnitude and direction drift between per-task and all-task adapters.

Magnitude drift averages, across layers, a per-layer scalar summary of
the elementwise magnitude difference (mean absolute by default, sum
absolute behind a flag). Direction drift is one minus the cosine between
the two direction matrices flattened to vectors (a per-column mean
variant exists behind a flag). The observation experiment fine-tunes one
adapter per task plus one on the pooled data, from the same base and
init, and reports how much more A's direction moves than B's and how
much more B's magnitude moves than A's.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from lorafed import linalg, lora, model
from lorafed.linalg import Matrix, Vector
from lorafed.lora import DecomposedAdapter
from lorafed.model import ToyNet, TrainState
from lorafed.rng import SplitMix64, derive_seed


def magnitude_drift(
    task_mags: list[Vector], ref_mags: list[Vector], reduction: str = "mean_abs"
) -> float:
    """Cross-layer average of the per-layer absolute magnitude difference."""
    if not task_mags or len(task_mags) != len(ref_mags):
        raise linalg.ShapeError(
            f"need matching non-empty layer lists, got {len(task_mags)} vs {len(ref_mags)}"
        )
    if reduction not in ("mean_abs", "sum_abs"):
        raise ValueError(f"unknown reduction {reduction!r}")
    total = 0.0
    for t, r in zip(task_mags, ref_mags):
        if len(t) != len(r):
            raise linalg.ShapeError(f"layer length mismatch: {len(t)} vs {len(r)}")
        s = 0.0
        for a, b in zip(t.data, r.data):
            s += abs(a - b)
        total += s / len(t) if reduction == "mean_abs" else s
    return total / len(task_mags)


def direction_drift(
    task_dir: Matrix, ref_dir: Matrix, per_column: bool = False
) -> float:
    """1 - cos between the two matrices; in [0, 2]."""
    if not per_column:
        return 1.0 - linalg.flat_cosine(task_dir, ref_dir)
    if task_dir.shape != ref_dir.shape:
        raise linalg.ShapeError(f"shape mismatch: {task_dir.shape} vs {ref_dir.shape}")
    total = 0.0
    for j in range(task_dir.cols):
        a = Matrix(task_dir.rows, 1, task_dir.column(j))
        b = Matrix(ref_dir.rows, 1, ref_dir.column(j))
        total += 1.0 - linalg.flat_cosine(a, b)
    return total / task_dir.cols


def layer_magnitudes(comp: DecomposedAdapter, which: str) -> Vector:
    """Per-layer magnitude summary: head magnitudes concatenated."""
    out: list[float] = []
    for h in comp.heads:
        d = h.a if which == "a" else h.b
        out.extend(d.magnitude.data)
    return Vector(out)


def head_directions(comp: DecomposedAdapter, which: str) -> list[Matrix]:
    return [(h.a if which == "a" else h.b).direction for h in comp.heads]


def _layer_direction_drift(
    task_comp: DecomposedAdapter, ref_comp: DecomposedAdapter, which: str
) -> float | None:
    """Mean over heads of the direction drift; None if any side is all-zero."""
    vals = []
    for td, rd in zip(head_directions(task_comp, which), head_directions(ref_comp, which)):
        if linalg.frobenius_sq(td) == 0.0 or linalg.frobenius_sq(rd) == 0.0:
            return None
        vals.append(direction_drift(td, rd))
    return sum(vals) / len(vals)


def component_drift(
    task_comps: list[DecomposedAdapter], ref_comps: list[DecomposedAdapter], which: str
) -> tuple[float | None, float | None]:
    """(magnitude drift, direction drift) for matrix `which` across layers.

    Either value is None (absent) when a participating matrix is
    all-zero, e.g. B before its first update; zeros would pollute the
    headline ratios.
    """
    mags_task = [layer_magnitudes(c, which) for c in task_comps]
    mags_ref = [layer_magnitudes(c, which) for c in ref_comps]
    if any(max(m.data, default=0.0) == 0.0 for m in mags_task + mags_ref):
        return None, None
    dm = magnitude_drift(mags_task, mags_ref)
    dds = [
        _layer_direction_drift(t, r, which) for t, r in zip(task_comps, ref_comps)
    ]
    dd = None if any(v is None for v in dds) else sum(dds) / len(dds)
    return dm, dd


@dataclass
class DriftRow:
    round_num: int
    task_id: int
    matrix: str  # "a" or "b"
    layer: int
    delta_m: float | None
    delta_d: float | None


@dataclass
class DriftReport:
    rows: list[DriftRow] = field(default_factory=list)
    # per (matrix, round): cross-layer, cross-task aggregates
    per_round: dict[str, dict[int, dict[str, float | None]]] = field(
        default_factory=dict
    )
    ratio_direction: float | None = None  # direction drift of A over B
    ratio_magnitude: float | None = None  # magnitude drift of B over A
    seed: int = 0
    rounds: int = 0
    num_tasks: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rounds": self.rounds,
            "num_tasks": self.num_tasks,
            "ratio_direction": self.ratio_direction,
            "ratio_magnitude": self.ratio_magnitude,
            "per_round": self.per_round,
            "rows": [
                {
                    "round": r.round_num,
                    "task_id": r.task_id,
                    "matrix": r.matrix,
                    "layer": r.layer,
                    "delta_m": r.delta_m,
                    "delta_d": r.delta_d,
                }
                for r in self.rows
            ],
        }


def _mean_or_none(vals: list[float | None]) -> float | None:
    present = [v for v in vals if v is not None]
    if not present:
        return None
    return sum(present) / len(present)


def build_drift_report(
    snapshots: list[tuple[int, list[list[DecomposedAdapter]], list[DecomposedAdapter]]],
    seed: int,
    num_tasks: int,
) -> DriftReport:
    """Assemble rows, per-round aggregates and headline ratios.

    `snapshots` holds (round, per-task component lists, all-task
    components) triples; components are per-layer.
    """
    report = DriftReport(seed=seed, num_tasks=num_tasks, rounds=len(snapshots))
    report.per_round = {"a": {}, "b": {}}
    for round_num, task_comps, ref_comps in snapshots:
        for which in ("a", "b"):
            layer_dms: list[float | None] = []
            layer_dds: list[float | None] = []
            for layer in range(len(ref_comps)):
                task_dms = []
                task_dds = []
                for t in range(num_tasks):
                    dm, dd = component_drift(
                        [task_comps[t][layer]], [ref_comps[layer]], which
                    )
                    task_dms.append(dm)
                    task_dds.append(dd)
                row_dm = _mean_or_none(task_dms)
                row_dd = _mean_or_none(task_dds)
                report.rows.append(
                    DriftRow(round_num, -1, which, layer, row_dm, row_dd)
                )
                layer_dms.append(row_dm)
                layer_dds.append(row_dd)
            report.per_round[which][round_num] = {
                "delta_m": _mean_or_none(layer_dms),
                "delta_d": _mean_or_none(layer_dds),
            }
        # per-task rows (full resolution, layer-averaged)
        for t in range(num_tasks):
            for which in ("a", "b"):
                dm, dd = component_drift(task_comps[t], ref_comps, which)
                report.rows.append(DriftRow(round_num, t, which, -1, dm, dd))

    dd_a = _mean_or_none(
        [report.per_round["a"][r]["delta_d"] for r, _, _ in snapshots]
    )
    dd_b = _mean_or_none(
        [report.per_round["b"][r]["delta_d"] for r, _, _ in snapshots]
    )
    dm_a = _mean_or_none(
        [report.per_round["a"][r]["delta_m"] for r, _, _ in snapshots]
    )
    dm_b = _mean_or_none(
        [report.per_round["b"][r]["delta_m"] for r, _, _ in snapshots]
    )
    if dd_a is not None and dd_b not in (None, 0.0):
        report.ratio_direction = dd_a / dd_b
    if dm_b is not None and dm_a not in (None, 0.0):
        report.ratio_magnitude = dm_b / dm_a
    return report


def observation_experiment(
    benchmark,
    base: ToyNet,
    rank: int,
    num_heads: int,
    alpha: float,
    rounds: int,
    epochs_per_round: int,
    lr: float,
    batch_size: int,
    seed: int,
) -> DriftReport:
    """Fine-tune per-task adapters and an all-task adapter from the same
    base and init, snapshotting drift after every round.

    The all-task adapter sees the pooled training data of every task; the
    per-task adapters see only their own. The report's headline ratios say
    how much more A's direction drifts than B's, and B's magnitude than
    A's.
    """
    from lorafed.datagen import concat_batches

    if len(benchmark.tasks) < 2:
        raise ValueError("observation experiment needs at least 2 distinct tasks")
    if rounds < 1:
        raise ValueError("observation experiment needs at least 1 round")

    template = model.attach_adapters(
        base, rank, num_heads, alpha, derive_seed(seed, "obs-adapter-init")
    )
    init_adapters = [layer.adapter for layer in template.layers]
    pool = concat_batches([td.train for td in benchmark.tasks])

    task_states = [
        TrainState.full_from_adapters([ad.copy() for ad in init_adapters])
        for _ in benchmark.tasks
    ]
    all_state = TrainState.full_from_adapters([ad.copy() for ad in init_adapters])

    snapshots = []
    for round_num in range(1, rounds + 1):
        for t, td in enumerate(benchmark.tasks):
            task_states[t], _ = model.train_mode_sgd(
                base,
                td.train,
                task_states[t],
                epochs_per_round,
                lr,
                batch_size,
                SplitMix64(derive_seed(seed, "obs-task", t, round_num)),
            )
        all_state, _ = model.train_mode_sgd(
            base,
            pool,
            all_state,
            epochs_per_round,
            lr,
            batch_size,
            SplitMix64(derive_seed(seed, "obs-all", round_num)),
        )
        task_comps = [
            [lora.decompose_adapter(ad) for ad in st.to_adapters()]
            for st in task_states
        ]
        ref_comps = [lora.decompose_adapter(ad) for ad in all_state.to_adapters()]
        snapshots.append((round_num, task_comps, ref_comps))

    return build_drift_report(snapshots, seed, len(benchmark.tasks))
