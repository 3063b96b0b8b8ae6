"""Federated round engine.

Three methods share the same client-training code path:

* pipeline    — (1) full-LoRA rounds with component-wise averaging,
                (2) direction-only global rounds, (3) magnitude-only
                local personalization.
* nonpipeline — (1) and (3), skipping the global direction stage.
* baseline    — full-LoRA rounds with raw-matrix averaging, no
                direction or magnitude stages.

Component-wise averaging uploads each client's decomposed A and B,
averages the four component kinds independently, and renormalizes the
averaged direction columns to unit length (the residual norm is
discarded; magnitudes were averaged separately). Averaged columns that
cancel below the zero threshold fall back to the zero-column convention
and are flagged in the report.

Clients are processed in ascending id order for every reduction, so the
result is independent of scheduling; the optional thread pool changes
wall time only.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from lorafed import linalg, lora, model
from lorafed.config import ExperimentConfig, config_digest, config_to_dict
from lorafed.datagen import Benchmark, gen_benchmark, pretrain_base
from lorafed.drift import component_drift
from lorafed.linalg import Vector
from lorafed.lora import DecomposedAdapter, LoraAdapter
from lorafed.model import GradMode, TaskBatch, ToyNet, TrainState
from lorafed.rng import SplitMix64, derive_seed


@dataclass
class ClientState:
    id: int
    task_id: int
    train: TaskBatch
    test: TaskBatch
    adapters: list[LoraAdapter] | None = None  # one per layer
    history: list[float] = field(default_factory=list)


@dataclass
class AggregateResult:
    components: list[DecomposedAdapter]  # one per layer
    zeroed: list[tuple[int, int, str, int]]  # (layer, head, matrix, column)


@dataclass
class ServerState:
    base: ToyNet  # frozen; layers carry no adapters
    components: list[DecomposedAdapter]
    round_num: int = 0


@dataclass
class RoundMetrics:
    stage: int
    round_num: int
    global_loss: float
    global_acc: float
    drift_mag_a: float | None = None
    drift_dir_a: float | None = None
    drift_mag_b: float | None = None
    drift_dir_b: float | None = None


@dataclass
class ClientMetrics:
    client_id: int
    task_id: int
    pre_loss: float
    pre_acc: float
    post_loss: float
    post_acc: float
    delta_m_norm: float


@dataclass
class RunReport:
    method: str
    seed: int
    config_digest: str
    config: dict
    pretrain: dict
    rounds: list[RoundMetrics]
    clients: list[ClientMetrics]
    stage2_rounds: int
    zeroed_columns: int
    final_global_loss: float
    final_global_acc: float

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def mean_local_acc(self) -> float:
        return sum(c.post_acc for c in self.clients) / len(self.clients)

    def per_task_local_acc(self) -> dict[int, float]:
        by_task: dict[int, list[float]] = {}
        for c in self.clients:
            by_task.setdefault(c.task_id, []).append(c.post_acc)
        return {t: sum(v) / len(v) for t, v in sorted(by_task.items())}


@dataclass
class PreparedEnv:
    benchmark: Benchmark
    base: ToyNet
    pretrain_info: dict


def prepare_env(cfg: ExperimentConfig) -> PreparedEnv:
    """Benchmark plus pretrained frozen base for one seed (shared across methods)."""
    benchmark = gen_benchmark(
        num_tasks=cfg.num_tasks,
        d_in=cfg.d_in,
        classes=cfg.classes,
        clients_per_task=cfg.clients_per_task,
        heterogeneity=cfg.heterogeneity,
        seed=derive_seed(cfg.seed, "benchmark"),
        train_per_task=cfg.train_per_task,
        test_per_task=cfg.test_per_task,
        noise_std=cfg.noise_std,
    )
    base, info = pretrain_base(
        benchmark,
        list(cfg.hidden),
        cfg.pretrain_epochs,
        cfg.pretrain_lr,
        derive_seed(cfg.seed, "pretrain"),
        cfg.pretrain_batch,
    )
    return PreparedEnv(benchmark=benchmark, base=base, pretrain_info=info)


def make_clients(benchmark: Benchmark) -> list[ClientState]:
    return [
        ClientState(
            id=cs.client_id,
            task_id=cs.task_id,
            train=cs.train,
            test=benchmark.tasks[cs.task_id].test,
        )
        for cs in benchmark.clients
    ]


def init_global_adapters(base: ToyNet, cfg: ExperimentConfig) -> list[LoraAdapter]:
    net = model.attach_adapters(
        base, cfg.rank, cfg.num_heads, cfg.alpha, derive_seed(cfg.seed, "global-adapter")
    )
    return [layer.adapter for layer in net.layers]


# ---------------------------------------------------------------------------
# Client work


def local_train_full(
    base: ToyNet,
    client: ClientState,
    adapters: list[LoraAdapter],
    epochs: int,
    lr: float,
    batch_size: int,
    rng: SplitMix64,
    dropout_p: float = 0.0,
    dropout_rng: SplitMix64 | None = None,
) -> ClientState:
    """Full-LoRA SGD on the client's split; returns a new ClientState."""
    states = TrainState.full_from_adapters(adapters)
    states, history = model.train_mode_sgd(
        base,
        client.train,
        states,
        epochs,
        lr,
        batch_size,
        rng,
        dropout_p=dropout_p,
        dropout_rng=dropout_rng,
    )
    return ClientState(
        id=client.id,
        task_id=client.task_id,
        train=client.train,
        test=client.test,
        adapters=states.to_adapters(),
        history=client.history + history,
    )


def _map_clients(fn, items: list, parallel: bool) -> list:
    if not parallel or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(8, len(items))) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Aggregation


def _mean_matrices(mats: list[linalg.Matrix], weights: list[float]) -> linalg.Matrix:
    total = None
    for m, w in zip(mats, weights):
        part = linalg.scale(m, w)
        total = part if total is None else linalg.add(total, part)
    return total


def _mean_vectors(vecs: list[Vector], weights: list[float]) -> Vector:
    total = None
    for v, w in zip(vecs, weights):
        part = linalg.vec_scale(v, w)
        total = part if total is None else linalg.vec_add(total, part)
    return total


def _client_weights(
    clients: list[ClientState], weighted: bool
) -> list[float]:
    if not weighted:
        return [1.0 / len(clients)] * len(clients)
    total = sum(c.train.size for c in clients)
    return [c.train.size / total for c in clients]


def _renormalize(
    direction: linalg.Matrix, magnitude: Vector, layer: int, head: int, which: str
) -> tuple[lora.DecomposedMatrix, list[tuple[int, int, str, int]]]:
    normed, norms = lora.normalize_columns(direction)
    zeroed = []
    mags = magnitude.copy()
    for j, n in enumerate(norms.data):
        if n < lora.EPS_ZERO_COLUMN:
            # cancelled column: zero-column convention, magnitude dropped too
            mags.data[j] = 0.0
            zeroed.append((layer, head, which, j))
    return lora.DecomposedMatrix(normed, mags), zeroed


def aggregate_decomposed(
    clients: list[ClientState], weighted: bool = False
) -> AggregateResult:
    """Component-wise mean of the clients' decomposed adapters.

    Clients are sorted by id first, so the reduction order (and hence
    every output bit) is independent of caller ordering.
    """
    if not clients:
        raise ValueError("nothing to aggregate")
    ordered = sorted(clients, key=lambda c: c.id)
    weights = _client_weights(ordered, weighted)
    uploads = [
        [lora.decompose_adapter(ad) for ad in c.adapters] for c in ordered
    ]
    n_layers = len(uploads[0])
    if any(len(u) != n_layers for u in uploads):
        raise linalg.ShapeError("clients disagree on the number of adapted layers")

    components: list[DecomposedAdapter] = []
    zeroed: list[tuple[int, int, str, int]] = []
    for layer in range(n_layers):
        ref = uploads[0][layer]
        heads = []
        for head in range(ref.num_heads):
            mean_parts = {}
            for which in ("a", "b"):
                pick = lambda u: getattr(u[layer].heads[head], which)
                dirs = [pick(u).direction for u in uploads]
                mags = [pick(u).magnitude for u in uploads]
                mean_dir = _mean_matrices(dirs, weights)
                mean_mag = _mean_vectors(mags, weights)
                comp, z = _renormalize(mean_dir, mean_mag, layer, head, which)
                mean_parts[which] = comp
                zeroed.extend(z)
            heads.append(lora.DecomposedHead(b=mean_parts["b"], a=mean_parts["a"]))
        components.append(DecomposedAdapter(heads, ref.rank, ref.alpha))
    return AggregateResult(components=components, zeroed=zeroed)


def aggregate_raw(
    clients: list[ClientState], weighted: bool = False
) -> list[LoraAdapter]:
    """Plain FedAvg on the raw A and B matrices (baseline)."""
    if not clients:
        raise ValueError("nothing to aggregate")
    ordered = sorted(clients, key=lambda c: c.id)
    weights = _client_weights(ordered, weighted)
    n_layers = len(ordered[0].adapters)
    out = []
    for layer in range(n_layers):
        ref = ordered[0].adapters[layer]
        heads = []
        for head in range(ref.num_heads):
            mean_b = _mean_matrices(
                [c.adapters[layer].heads[head].b for c in ordered], weights
            )
            mean_a = _mean_matrices(
                [c.adapters[layer].heads[head].a for c in ordered], weights
            )
            heads.append(lora.LoraHead(b=mean_b, a=mean_a))
        out.append(LoraAdapter(heads, ref.rank, ref.alpha))
    return out


# ---------------------------------------------------------------------------
# Stages


def _eval_components(
    base: ToyNet, components: list[DecomposedAdapter], batch: TaskBatch
) -> tuple[float, float]:
    adapters = [lora.recompose_adapter(c) for c in components]
    states = TrainState.full_from_adapters(adapters)
    return model.evaluate(base, batch, states)


def _eval_raw(
    base: ToyNet, adapters: list[LoraAdapter], batch: TaskBatch
) -> tuple[float, float]:
    return model.evaluate(base, batch, TrainState.full_from_adapters(adapters))


def _participants(
    clients: list[ClientState], cfg: ExperimentConfig, stage: str, round_num: int
) -> list[ClientState]:
    if cfg.participation >= 1.0:
        return clients
    k = max(1, round(cfg.participation * len(clients)))
    rng = SplitMix64(derive_seed(cfg.seed, "participation", stage, round_num))
    chosen = sorted(rng.permutation(len(clients))[:k])
    return [clients[i] for i in chosen]


def _drift_trace(
    trained: list[ClientState], components: list[DecomposedAdapter]
) -> dict[str, float | None]:
    vals: dict[str, list[float]] = {k: [] for k in ("ma", "da", "mb", "db")}
    for c in trained:
        comps = [lora.decompose_adapter(ad) for ad in c.adapters]
        dm_a, dd_a = component_drift(comps, components, "a")
        dm_b, dd_b = component_drift(comps, components, "b")
        for key, v in zip(("ma", "da", "mb", "db"), (dm_a, dd_a, dm_b, dd_b)):
            if v is not None:
                vals[key].append(v)
    mean = lambda xs: sum(xs) / len(xs) if xs else None
    return {k: mean(v) for k, v in vals.items()}


def global_direction_stage(
    server: ServerState,
    clients: list[ClientState],
    cfg: ExperimentConfig,
    metrics: list[RoundMetrics],
    global_test: TaskBatch,
    checkpoint_cb=None,
    start_round: int = 0,
    zeroed_base: int = 0,
) -> tuple[ServerState, list[tuple[int, int, str, int]]]:
    """Direction-only federated rounds: clients train the A-direction
    proxy on local data; the server averages the proxies and renormalizes.
    Every other component is carried over bit-unchanged."""
    components = server.components
    zeroed_all: list[tuple[int, int, str, int]] = []
    for round_num in range(start_round + 1, cfg.direction_rounds + 1):
        participants = _participants(clients, cfg, "stage2", round_num)

        def train_one(client: ClientState):
            states = TrainState.direction_from_components(components)
            rng = SplitMix64(
                derive_seed(cfg.seed, "stage2-shuffle", round_num, client.id)
            )
            states, _ = model.train_mode_sgd(
                server.base,
                client.train,
                states,
                cfg.direction_epochs,
                cfg.direction_lr,
                cfg.batch_size,
                rng,
            )
            return client.id, states.direction_proxies()

        results = _map_clients(train_one, participants, cfg.parallel_clients)
        results.sort(key=lambda kv: kv[0])
        weights = _client_weights(
            sorted(participants, key=lambda c: c.id), cfg.weighted_mean
        )

        new_components = []
        for layer, comp in enumerate(components):
            heads = []
            for head, old in enumerate(comp.heads):
                proxies = [proxy[layer][head] for _, proxy in results]
                mean_proxy = _mean_matrices(proxies, weights)
                a_comp, z = _renormalize(
                    mean_proxy, old.a.magnitude.copy(), layer, head, "a"
                )
                # keep the averaged magnitude even where the direction
                # survives; only cancelled columns zero it
                zeroed_all.extend(z)
                heads.append(lora.DecomposedHead(b=old.b.copy(), a=a_comp))
            new_components.append(DecomposedAdapter(heads, comp.rank, comp.alpha))
        components = new_components

        loss, acc = _eval_components(server.base, components, global_test)
        metrics.append(RoundMetrics(stage=2, round_num=round_num, global_loss=loss, global_acc=acc))
        if checkpoint_cb:
            checkpoint_cb("stage2", round_num, components, metrics, zeroed_base + len(zeroed_all))
    return ServerState(server.base, components, server.round_num), zeroed_all


def local_personalize(
    base: ToyNet,
    client: ClientState,
    components: list[DecomposedAdapter],
    cfg: ExperimentConfig,
) -> ClientMetrics:
    """Magnitude-only personalization of the global model on one client."""
    pre_loss, pre_acc = _eval_components(base, components, client.test)
    states = TrainState.magnitude_from_components(components)
    rng = SplitMix64(derive_seed(cfg.seed, "stage3-shuffle", client.id))
    states, _ = model.train_mode_sgd(
        base,
        client.train,
        states,
        cfg.personal_epochs,
        cfg.personal_lr,
        cfg.batch_size,
        rng,
        lam=cfg.lam,
    )
    post_loss, post_acc = model.evaluate(base, client.test, states)
    sq = 0.0
    for dms in states.delta_ms():
        if dms is None:
            continue
        for dm in dms:
            sq += sum(v * v for v in dm.data)
    return ClientMetrics(
        client_id=client.id,
        task_id=client.task_id,
        pre_loss=pre_loss,
        pre_acc=pre_acc,
        post_loss=post_loss,
        post_acc=post_acc,
        delta_m_norm=sq**0.5,
    )


# ---------------------------------------------------------------------------
# Full runs


def _run_stage1(
    env: PreparedEnv,
    cfg: ExperimentConfig,
    decomposed: bool,
    metrics: list[RoundMetrics],
    checkpoint_cb=None,
    resume=None,
):
    """Shared stage-1 loop.

    With `decomposed` the server state is component-wise (pipeline and
    nonpipeline); otherwise raw adapters are averaged (baseline). The
    loop is seeded identically in both cases, so methods share identical
    client training until the first aggregation diverges.
    """
    base = env.base
    clients = make_clients(env.benchmark)
    zeroed_count = 0
    start_round = 0

    if resume is not None:
        components, raw_adapters, start_round, zeroed_count = resume
    elif decomposed:
        components = [
            lora.decompose_adapter(ad) for ad in init_global_adapters(base, cfg)
        ]
        raw_adapters = None
    else:
        components = None
        raw_adapters = init_global_adapters(base, cfg)

    for round_num in range(start_round + 1, cfg.rounds + 1):
        participants = _participants(clients, cfg, "stage1", round_num)
        broadcast = (
            [lora.recompose_adapter(c) for c in components]
            if decomposed
            else [ad.copy() for ad in raw_adapters]
        )

        def train_one(client: ClientState):
            rng = SplitMix64(
                derive_seed(cfg.seed, "stage1-shuffle", round_num, client.id)
            )
            dropout_rng = (
                SplitMix64(derive_seed(cfg.seed, "stage1-dropout", round_num, client.id))
                if cfg.adapter_dropout > 0
                else None
            )
            return local_train_full(
                base,
                client,
                [ad.copy() for ad in broadcast],
                cfg.local_epochs,
                cfg.local_lr,
                cfg.batch_size,
                rng,
                cfg.adapter_dropout,
                dropout_rng,
            )

        trained = _map_clients(train_one, participants, cfg.parallel_clients)
        trained.sort(key=lambda c: c.id)

        drift = {}
        if decomposed:
            agg = aggregate_decomposed(trained, cfg.weighted_mean)
            components = agg.components
            zeroed_count += len(agg.zeroed)
            drift = _drift_trace(trained, components)
            loss, acc = _eval_components(base, components, env.benchmark.global_test)
        else:
            raw_adapters = aggregate_raw(trained, cfg.weighted_mean)
            drift = _drift_trace(
                trained, [lora.decompose_adapter(ad) for ad in raw_adapters]
            )
            loss, acc = _eval_raw(base, raw_adapters, env.benchmark.global_test)

        metrics.append(
            RoundMetrics(
                stage=1,
                round_num=round_num,
                global_loss=loss,
                global_acc=acc,
                drift_mag_a=drift.get("ma"),
                drift_dir_a=drift.get("da"),
                drift_mag_b=drift.get("mb"),
                drift_dir_b=drift.get("db"),
            )
        )
        if checkpoint_cb:
            checkpoint_cb("stage1", round_num, components or raw_adapters, metrics, zeroed_count)

    return clients, components, raw_adapters, zeroed_count


def run_method(
    cfg: ExperimentConfig,
    method: str,
    env: PreparedEnv | None = None,
    checkpointer=None,
) -> RunReport:
    """Run one method end to end and assemble its report."""
    if method not in ("pipeline", "nonpipeline", "baseline"):
        raise ValueError(f"unknown method {method!r}")
    if env is None:
        env = prepare_env(cfg)
    base = env.base
    metrics: list[RoundMetrics] = []
    decomposed = method != "baseline"

    resume = None
    stage2_done = 0
    if checkpointer is not None:
        loaded = checkpointer.load_latest(method)
        if loaded is not None:
            stage, round_num, components, raw_adapters, saved_metrics, zeroed = loaded
            metrics.extend(saved_metrics)
            if stage == "stage1":
                resume = (components, raw_adapters, round_num, zeroed)
            else:
                resume = (components, raw_adapters, cfg.rounds, zeroed)
                stage2_done = round_num

    def checkpoint_cb(stage, round_num, state, metrics_now, zeroed):
        if checkpointer is None:
            return
        if decomposed:
            checkpointer.save(method, stage, round_num, state, None, metrics_now, zeroed)
        else:
            checkpointer.save(method, stage, round_num, None, state, metrics_now, zeroed)

    clients, components, raw_adapters, zeroed_count = _run_stage1(
        env, cfg, decomposed, metrics, checkpoint_cb, resume
    )

    stage2_rounds = 0
    if method == "pipeline":
        server = ServerState(base, components)
        server, zeroed2 = global_direction_stage(
            server,
            clients,
            cfg,
            metrics,
            env.benchmark.global_test,
            checkpoint_cb,
            start_round=stage2_done,
            zeroed_base=zeroed_count,
        )
        components = server.components
        zeroed_count += len(zeroed2)
        stage2_rounds = cfg.direction_rounds

    if decomposed:
        final_components = components
    else:
        final_components = [lora.decompose_adapter(ad) for ad in raw_adapters]

    if metrics:
        final_loss, final_acc = metrics[-1].global_loss, metrics[-1].global_acc
    else:
        final_loss, final_acc = _eval_components(
            base, final_components, env.benchmark.global_test
        )

    if decomposed:
        clients_metrics = _map_clients(
            lambda c: local_personalize(base, c, final_components, cfg),
            clients,
            cfg.parallel_clients,
        )
        clients_metrics.sort(key=lambda m: m.client_id)
    else:
        # the baseline has no personalization stage: its local metric is
        # the shared global model scored on each client's task
        clients_metrics = []
        for c in clients:
            loss, acc = _eval_raw(base, raw_adapters, c.test)
            clients_metrics.append(
                ClientMetrics(
                    client_id=c.id,
                    task_id=c.task_id,
                    pre_loss=loss,
                    pre_acc=acc,
                    post_loss=loss,
                    post_acc=acc,
                    delta_m_norm=0.0,
                )
            )

    return RunReport(
        method=method,
        seed=cfg.seed,
        config_digest=config_digest(cfg),
        config=config_to_dict(cfg),
        pretrain=env.pretrain_info,
        rounds=metrics,
        clients=clients_metrics,
        stage2_rounds=stage2_rounds,
        zeroed_columns=zeroed_count,
        final_global_loss=final_loss,
        final_global_acc=final_acc,
    )


def run_pipeline(cfg: ExperimentConfig, env: PreparedEnv | None = None, checkpointer=None) -> RunReport:
    return run_method(cfg, "pipeline", env, checkpointer)


def run_nonpipeline(cfg: ExperimentConfig, env: PreparedEnv | None = None, checkpointer=None) -> RunReport:
    return run_method(cfg, "nonpipeline", env, checkpointer)


def run_baseline_lora(cfg: ExperimentConfig, env: PreparedEnv | None = None, checkpointer=None) -> RunReport:
    return run_method(cfg, "baseline", env, checkpointer)


# ---------------------------------------------------------------------------
# Digest helpers (stage-isolation checks)


def digest_matrices(mats) -> str:
    """SHA-256 over the little-endian bytes of a matrix/vector group."""
    h = hashlib.sha256()
    for m in mats:
        h.update(linalg.le_bytes(m.data))
    return h.hexdigest()


def component_digests(components: list[DecomposedAdapter]) -> dict[str, str]:
    """Digests of each frozen parameter group across all layers/heads."""
    a_dirs, a_mags, b_dirs, b_mags = [], [], [], []
    for comp in components:
        for h in comp.heads:
            a_dirs.append(h.a.direction)
            a_mags.append(h.a.magnitude)
            b_dirs.append(h.b.direction)
            b_mags.append(h.b.magnitude)
    return {
        "a_direction": digest_matrices(a_dirs),
        "a_magnitude": digest_matrices(a_mags),
        "b_direction": digest_matrices(b_dirs),
        "b_magnitude": digest_matrices(b_mags),
    }
