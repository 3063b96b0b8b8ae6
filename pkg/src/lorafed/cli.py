"""Command-line entry point.

Subcommands: ``run`` (execute the configured mode and write artifacts),
``gridsearch`` (rank x heads sweep), ``fdcheck`` (gradient oracle),
``drift`` (per-task vs all-task drift observation), ``validate``
(config check only).

Artifacts land in the output directory: ``config.resolved.txt`` (the
fully resolved config echo), ``metrics.csv`` (long-format metric rows,
schema below), ``report.json`` (structured run reports),
``comparison.csv`` (one aggregate row per method, mode=all), and
``checkpoints/`` (one container per federated round; ``--resume`` picks
up the latest). A lock file serializes experiments per directory.

metrics.csv schema (version 1):
    schema_version,method,seed,stage,round,scope,client_id,task_id,
    layer,matrix,metric,value,config_digest
Floats are rendered with repr() so rereading reproduces the exact bits;
empty fields mean "not applicable". The output directory resolves, in
order of precedence: --out-dir flag, LORAFED_OUT_DIR, the config value.

Exit codes: 0 success, 1 validation/usage error, 2 oracle failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from statistics import median

from lorafed import fed, model
from lorafed.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_digest,
    parse_config_file,
    render_config,
)
from lorafed.containers import (
    adapters_to_tensors,
    components_to_tensors,
    read_container,
    tensors_to_adapters,
    tensors_to_components,
    write_container,
)
from lorafed.drift import observation_experiment
from lorafed.linalg import BACKEND, Matrix
from lorafed.model import GradMode, TaskBatch, attach_adapters, build_net
from lorafed.rng import SplitMix64, derive_seed

CSV_SCHEMA_VERSION = 1
CSV_HEADER = (
    "schema_version,method,seed,stage,round,scope,client_id,task_id,"
    "layer,matrix,metric,value,config_digest"
)

ENV_OUT_DIR = "LORAFED_OUT_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit_(1, f"error: {message}")


class SystemExit_(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        self.message = message


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Lock:
    """One experiment process per output directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise SystemExit_(
                1,
                f"error: {self.path} exists: another run owns this directory "
                "(remove the stale lock if no process is running)",
            )
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


class FileCheckpointer:
    """Round-granular checkpoints in the documented container format."""

    def __init__(self, root: Path, cfg: ExperimentConfig, resume: bool):
        self.root = root
        self.cfg = cfg
        self.resume = resume
        root.mkdir(parents=True, exist_ok=True)

    def _path(self, method: str, stage: str, round_num: int) -> Path:
        return self.root / f"{method}-{stage}-r{round_num:04d}.lfc"

    def save(self, method, stage, round_num, components, raw_adapters, metrics, zeroed):
        if components is not None:
            meta, tensors = components_to_tensors(components)
        else:
            meta, tensors = adapters_to_tensors(raw_adapters)
        meta.update(
            {
                "method": method,
                "stage": stage,
                "round": round_num,
                "zeroed_columns": zeroed,
                "seed": self.cfg.seed,
                "config_digest": config_digest(self.cfg),
                "metrics": [vars(m) for m in metrics],
            }
        )
        write_container(self._path(method, stage, round_num), "checkpoint", meta, tensors)

    def load_latest(self, method: str):
        if not self.resume:
            return None
        best = None
        for path in self.root.glob(f"{method}-*.lfc"):
            c = read_container(path)
            if c.kind != "checkpoint" or c.meta["method"] != method:
                continue
            if c.meta["config_digest"] != config_digest(self.cfg):
                raise SystemExit_(
                    1,
                    f"error: checkpoint {path} was produced by a different config; "
                    "refusing to resume",
                )
            key = (c.meta["stage"], c.meta["round"])
            if best is None or key > best[0]:
                best = (key, c)
        if best is None:
            return None
        c = best[1]
        metrics = [fed.RoundMetrics(**m) for m in c.meta["metrics"]]
        if c.meta["storage"] == "decomposed":
            components = tensors_to_components(c.meta, c.tensors)
            raw = None
        else:
            components = None
            raw = tensors_to_adapters(c.meta, c.tensors)
        return (
            c.meta["stage"],
            c.meta["round"],
            components,
            raw,
            metrics,
            c.meta["zeroed_columns"],
        )


# ---------------------------------------------------------------------------
# Metric rows


def report_rows(report: fed.RunReport) -> list[dict]:
    rows = []
    base = {"method": report.method, "seed": report.seed}
    rows.append(
        {**base, "stage": 0, "scope": "global", "metric": "pretrain_acc",
         "value": report.pretrain["test_acc"]}
    )
    rows.append(
        {**base, "stage": 0, "scope": "global", "metric": "pretrain_loss",
         "value": report.pretrain["test_loss"]}
    )
    for m in report.rounds:
        common = {**base, "stage": m.stage, "round": m.round_num, "scope": "global"}
        rows.append({**common, "metric": "global_loss", "value": m.global_loss})
        rows.append({**common, "metric": "global_acc", "value": m.global_acc})
        for name, v in (
            ("drift_mag_a", m.drift_mag_a),
            ("drift_dir_a", m.drift_dir_a),
            ("drift_mag_b", m.drift_mag_b),
            ("drift_dir_b", m.drift_dir_b),
        ):
            if v is not None:
                rows.append({**common, "metric": name, "value": v})
    for c in report.clients:
        common = {
            **base, "stage": 3, "scope": "client",
            "client_id": c.client_id, "task_id": c.task_id,
        }
        for name in ("pre_loss", "pre_acc", "post_loss", "post_acc", "delta_m_norm"):
            rows.append({**common, "metric": name, "value": getattr(c, name)})
    rows.append({**base, "scope": "summary", "metric": "stage2_rounds",
                 "value": report.stage2_rounds})
    rows.append({**base, "scope": "summary", "metric": "zeroed_columns",
                 "value": report.zeroed_columns})
    return rows


def drift_rows(report) -> list[dict]:
    rows = []
    base = {"method": "drift", "seed": report.seed, "scope": "drift"}
    for r in report.rows:
        rows.append(
            {
                **base,
                "round": r.round_num,
                "task_id": r.task_id if r.task_id >= 0 else None,
                "layer": r.layer if r.layer >= 0 else None,
                "matrix": r.matrix,
                "metric": "delta_m",
                "value": r.delta_m,
            }
        )
        rows.append(
            {
                **base,
                "round": r.round_num,
                "task_id": r.task_id if r.task_id >= 0 else None,
                "layer": r.layer if r.layer >= 0 else None,
                "matrix": r.matrix,
                "metric": "delta_d",
                "value": r.delta_d,
            }
        )
    rows.append({**base, "metric": "ratio_direction", "value": report.ratio_direction})
    rows.append({**base, "metric": "ratio_magnitude", "value": report.ratio_magnitude})
    return rows


def write_metrics_csv(path, rows: list[dict], digest: str) -> None:
    cols = ("method", "seed", "stage", "round", "scope", "client_id",
            "task_id", "layer", "matrix", "metric", "value")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fields = [str(CSV_SCHEMA_VERSION)]
            fields.extend(_fmt(row.get(c)) for c in cols)
            fields.append(digest)
            fh.write(",".join(fields) + "\n")


def write_comparison_csv(path, reports_by_method: dict, digest: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "schema_version,method,seeds,global_acc_median,global_acc_mean,"
            "local_acc_median,local_acc_mean,local_pre_acc_mean,config_digest\n"
        )
        for method, reports in reports_by_method.items():
            g = [r.final_global_acc for r in reports]
            l = [r.mean_local_acc for r in reports]
            pre = [
                sum(c.pre_acc for c in r.clients) / len(r.clients) for r in reports
            ]
            fh.write(
                ",".join(
                    [
                        str(CSV_SCHEMA_VERSION),
                        method,
                        str(len(reports)),
                        repr(median(g)),
                        repr(sum(g) / len(g)),
                        repr(median(l)),
                        repr(sum(l) / len(l)),
                        repr(sum(pre) / len(pre)),
                        digest,
                    ]
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# Config resolution


def _resolve_config(args) -> ExperimentConfig:
    cfg = parse_config_file(args.config)
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    if getattr(args, "mode", None):
        cfg = apply_overrides(cfg, [f"mode={args.mode}"])
    out_dir = getattr(args, "out_dir", None) or os.environ.get(ENV_OUT_DIR)
    if out_dir:
        cfg = replace(cfg, out_dir=out_dir)
    return cfg


def _seed_configs(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    return [replace(cfg, seed=cfg.seed + i) for i in range(cfg.num_seeds)]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_validate(args) -> int:
    cfg = _resolve_config(args)
    sys.stdout.write(render_config(cfg))
    print(f"# config ok; digest={config_digest(cfg)}")
    return 0


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)

    with Lock(out):
        (out / "config.resolved.txt").write_text(render_config(cfg), encoding="utf-8")
        methods = {
            "pipeline": ["pipeline"],
            "nonpipeline": ["nonpipeline"],
            "baseline": ["baseline"],
            "all": ["pipeline", "nonpipeline", "baseline"],
        }
        all_rows: list[dict] = []
        report_docs: list[dict] = []

        if cfg.mode == "drift":
            for seed_cfg in _seed_configs(cfg):
                report = _run_drift(seed_cfg)
                all_rows.extend(drift_rows(report))
                report_docs.append(report.to_dict())
                print(
                    f"[drift seed={seed_cfg.seed}] "
                    f"direction ratio A/B={_fmt(report.ratio_direction)} "
                    f"magnitude ratio B/A={_fmt(report.ratio_magnitude)}"
                )
        else:
            reports_by_method: dict[str, list[fed.RunReport]] = {}
            for seed_cfg in _seed_configs(cfg):
                env = fed.prepare_env(seed_cfg)
                for method in methods[cfg.mode]:
                    ckpt = FileCheckpointer(
                        out / "checkpoints" / f"{method}-seed{seed_cfg.seed}",
                        seed_cfg,
                        resume=args.resume,
                    )
                    report = fed.run_method(seed_cfg, method, env, ckpt)
                    reports_by_method.setdefault(method, []).append(report)
                    all_rows.extend(report_rows(report))
                    report_docs.append(report.to_dict())
                    print(
                        f"[{method} seed={seed_cfg.seed}] "
                        f"global_acc={report.final_global_acc:.4f} "
                        f"local_acc={report.mean_local_acc:.4f}"
                    )
            if cfg.mode == "all":
                write_comparison_csv(out / "comparison.csv", reports_by_method, digest)

        write_metrics_csv(out / "metrics.csv", all_rows, digest)
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"config_digest": digest, "backend": BACKEND, "reports": report_docs},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    print(f"artifacts written to {out}")
    return 0


def _run_drift(cfg: ExperimentConfig):
    env = fed.prepare_env(cfg)
    return observation_experiment(
        env.benchmark,
        env.base,
        cfg.rank,
        cfg.num_heads,
        cfg.alpha,
        cfg.drift_rounds,
        cfg.local_epochs,
        cfg.local_lr,
        cfg.batch_size,
        cfg.seed,
    )


def cmd_drift(args) -> int:
    args.mode = "drift"
    return cmd_run(args)


def _parse_grid(raw: str) -> list[tuple[int, int]]:
    grid = []
    for part in raw.split(","):
        r, _, n = part.strip().partition("x")
        try:
            grid.append((int(r), int(n)))
        except ValueError:
            raise SystemExit_(1, f"error: bad grid entry {part!r} (want RxN)")
    if not grid:
        raise SystemExit_(1, "error: empty grid")
    return grid


def _param_counts(cfg: ExperimentConfig) -> tuple[int, int]:
    dims = [cfg.d_in] + list(cfg.hidden) + [cfg.classes]
    base = sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))
    adapter = sum(
        cfg.num_heads * cfg.rank * (dims[i + 1] + dims[i]) for i in range(len(dims) - 1)
    )
    return adapter, base + adapter


def cmd_gridsearch(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = _parse_grid(args.grid)

    with Lock(out):
        lines = [
            "schema_version,rank,num_heads,local_acc_mean,global_acc_mean,"
            "adapter_params,total_params,param_pct,config_digest"
        ]
        print(f"{'r x n':>8} {'local_acc':>10} {'global_acc':>11} {'%params':>9}")
        for r, n in grid:
            sub = replace(cfg, rank=r, num_heads=n)
            digest = config_digest(sub)
            local, glob = [], []
            for seed_cfg in _seed_configs(sub):
                env = fed.prepare_env(seed_cfg)
                report = fed.run_method(seed_cfg, "pipeline", env)
                local.append(report.mean_local_acc)
                glob.append(report.final_global_acc)
            adapter_params, total_params = _param_counts(sub)
            pct = adapter_params / total_params
            mean_l = sum(local) / len(local)
            mean_g = sum(glob) / len(glob)
            print(f"{r:>4}x{n:<3} {mean_l:>10.4f} {mean_g:>11.4f} {pct:>9.4f}")
            lines.append(
                ",".join(
                    [
                        str(CSV_SCHEMA_VERSION), str(r), str(n),
                        repr(mean_l), repr(mean_g),
                        str(adapter_params), str(total_params), repr(pct), digest,
                    ]
                )
            )
        (out / "gridsearch.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"grid table written to {out / 'gridsearch.csv'}")
    return 0


def run_fd_suite(seed: int, nets: int, h: float, tol: float):
    """FD-check `nets` random small nets per mode; returns per-mode reports."""
    results = {}
    for mode in GradMode:
        worst = None
        for i in range(nets):
            net = build_net([6, 5, 4], derive_seed(seed, "fdcheck-net", i))
            net = attach_adapters(net, 2, 2, 4.0, derive_seed(seed, "fdcheck-ad", i))
            rng = SplitMix64(derive_seed(seed, "fdcheck-data", i))
            # give every parameter group gradient flow: B must not be zero
            for li, layer in enumerate(net.layers):
                for hd in layer.adapter.heads:
                    hd.b = Matrix(
                        hd.b.rows, hd.b.cols,
                        [rng.gauss(0.0, 0.3) for _ in range(hd.b.rows * hd.b.cols)],
                    )
            x = Matrix(5, 6, [rng.gauss() for _ in range(30)])
            y = [rng.below(4) for _ in range(5)]
            lam = 0.1 if mode is GradMode.MAGNITUDE_B else 0.0
            rep = model.fd_check(net, TaskBatch(x, y), mode, lam=lam, h=h, tol=tol)
            if worst is None or rep.max_rel_err > worst.max_rel_err:
                worst = rep
        results[mode] = worst
    return results


def cmd_fdcheck(args) -> int:
    results = run_fd_suite(args.seed, args.nets, args.h, args.tol)
    failed = False
    for mode, rep in results.items():
        print(rep.format_block())
        failed = failed or not rep.passed
    if failed:
        print("fdcheck: FAILED")
        return 2
    print(f"fdcheck: all modes within {args.tol:.1e}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lorafed", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="key = value config file")
            sp.add_argument(
                "--set", action="append", default=[], metavar="KEY=VALUE",
                help="override a config key (repeatable)",
            )
            sp.add_argument("--out-dir", help=f"output directory (or ${ENV_OUT_DIR})")

    sp = sub.add_parser("run", help="run the configured experiment mode")
    add_common(sp)
    sp.add_argument("--mode", choices=("pipeline", "nonpipeline", "baseline", "drift", "all"))
    sp.add_argument("--resume", action="store_true", help="continue from checkpoints")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("gridsearch", help="rank x heads sweep (pipeline method)")
    add_common(sp)
    sp.add_argument("--grid", default="4x1,8x1,16x1,8x2,4x4", help="comma list of RxN")
    sp.set_defaults(fn=cmd_gridsearch)

    sp = sub.add_parser("fdcheck", help="finite-difference gradient oracle")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--nets", type=int, default=5, help="random nets per mode")
    sp.add_argument("--h", type=float, default=1e-6)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.set_defaults(fn=cmd_fdcheck)

    sp = sub.add_parser("drift", help="per-task vs all-task drift observation")
    add_common(sp)
    sp.add_argument("--resume", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(fn=cmd_drift)

    sp = sub.add_parser("validate", help="check a config file and echo it resolved")
    add_common(sp)
    sp.set_defaults(fn=cmd_validate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit_ as exc:
        if exc.message:
            print(exc.message, file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
