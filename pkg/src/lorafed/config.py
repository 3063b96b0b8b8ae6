"""Experiment configuration: plain key = value text files.

Format: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines are ignored. Unknown keys, malformed values and failed constraints
are reported with the file name and line number. ``lorafed validate``
checks a file without running anything.

The config digest covers only semantic fields: output location and
execution knobs (out_dir, parallel_clients) are excluded, so reruns of
the same experiment in different directories or thread modes produce
identical artifacts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    """Malformed or invalid configuration; message carries file:line."""


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str  # pipeline | nonpipeline | baseline | drift | all
    seed: int = 1
    num_seeds: int = 1
    out_dir: str = "runs"
    # benchmark
    num_tasks: int = 3
    clients_per_task: int = 2
    d_in: int = 32
    classes: int = 4
    train_per_task: int = 512
    test_per_task: int = 128
    heterogeneity: float = 1.0
    noise_std: float = 3.0
    # architecture / pretraining (deliberately short: adapters need headroom)
    hidden: tuple[int, ...] = (24, 16)
    pretrain_epochs: int = 3
    pretrain_lr: float = 0.1
    pretrain_batch: int = 64
    # adapter
    rank: int = 8
    num_heads: int = 2
    alpha: float = 32.0
    adapter_dropout: float = 0.0
    # stage 1: federated full-LoRA rounds
    rounds: int = 3
    local_epochs: int = 2
    local_lr: float = 0.15
    batch_size: int = 32
    # stage 2: global direction rounds; the proxy gradient is damped by
    # both magnitude vectors, hence the larger rate
    direction_rounds: int = 4
    direction_epochs: int = 2
    direction_lr: float = 0.5
    # stage 3: local magnitude personalization
    lam: float = 0.01
    personal_epochs: int = 5
    personal_lr: float = 0.1
    # drift observation experiment
    drift_rounds: int = 4
    # extensions (off by default)
    weighted_mean: bool = False
    participation: float = 1.0
    parallel_clients: bool = False


MODES = ("pipeline", "nonpipeline", "baseline", "drift", "all")

# config-file key -> dataclass field (lambda is reserved in Python)
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}

REQUIRED_KEYS = ("mode",)

# fields that do not affect results and stay out of the digest
_NON_SEMANTIC_FIELDS = ("out_dir", "parallel_clients")


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_hidden(raw: str) -> tuple[int, ...]:
    if not raw.strip():
        return ()
    dims = tuple(int(part.strip()) for part in raw.split(","))
    if any(d < 1 for d in dims):
        raise ValueError("hidden widths must be >= 1")
    return dims


def _field_parser(name: str, typ: str):
    if name == "hidden":
        return _parse_hidden
    if typ == "bool":
        return _parse_bool
    if typ == "int":
        return int
    if typ == "float":
        return float
    return str


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse a key = value document; raises ConfigError with file:line."""
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    seen: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        name = _KEY_TO_FIELD.get(key, key)
        if name not in field_types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if name in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        typ = field_types[name]
        typ_name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
        try:
            seen[name] = _field_parser(name, typ_name)(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    for key in REQUIRED_KEYS:
        name = _KEY_TO_FIELD.get(key, key)
        if name not in seen:
            raise ConfigError(f"{source}: missing required key {key!r}")
    cfg = ExperimentConfig(**seen)  # type: ignore[arg-type]
    problems = validate(cfg)
    if problems:
        raise ConfigError(f"{source}: " + "; ".join(problems))
    return cfg


def parse_config_file(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def apply_overrides(cfg: ExperimentConfig, pairs: list[str]) -> ExperimentConfig:
    """Apply KEY=VALUE command-line overrides on top of a parsed config."""
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        key, _, raw = pair.partition("=")
        key = key.strip()
        name = _KEY_TO_FIELD.get(key, key)
        if name not in field_types:
            raise ConfigError(f"override: unknown key {key!r}")
        typ = field_types[name]
        typ_name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
        try:
            updates[name] = _field_parser(name, typ_name)(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"override: bad value for {key!r}: {exc}") from exc
    cfg = replace(cfg, **updates)
    problems = validate(cfg)
    if problems:
        raise ConfigError("overrides: " + "; ".join(problems))
    return cfg


def validate(cfg: ExperimentConfig) -> list[str]:
    """Constraint check; returns human-readable problems (empty = valid)."""
    p = []
    if cfg.mode not in MODES:
        p.append(f"mode must be one of {', '.join(MODES)}; got {cfg.mode!r}")
    if cfg.num_seeds < 1:
        p.append("num_seeds must be >= 1")
    if cfg.num_tasks < 2:
        p.append("num_tasks must be >= 2")
    if cfg.clients_per_task < 1:
        p.append("clients_per_task must be >= 1")
    if cfg.d_in < 1:
        p.append("d_in must be >= 1")
    if cfg.classes < 2:
        p.append("classes must be >= 2")
    if cfg.train_per_task < cfg.clients_per_task:
        p.append("train_per_task must cover at least one sample per client")
    if cfg.test_per_task < 1:
        p.append("test_per_task must be >= 1")
    if not 0.0 <= cfg.heterogeneity <= 1.0:
        p.append("heterogeneity must be in [0, 1]")
    if cfg.noise_std < 0:
        p.append("noise_std must be >= 0")
    if cfg.rank < 1:
        p.append("rank must be >= 1")
    if cfg.num_heads < 1:
        p.append("num_heads must be >= 1")
    if cfg.alpha <= 0:
        p.append("alpha must be > 0")
    if not 0.0 <= cfg.adapter_dropout < 1.0:
        p.append("adapter_dropout must be in [0, 1)")
    for rate in ("pretrain_lr", "local_lr", "direction_lr", "personal_lr"):
        if getattr(cfg, rate) <= 0:
            p.append(f"{rate} must be > 0")
    for count in (
        "pretrain_epochs",
        "rounds",
        "local_epochs",
        "direction_rounds",
        "direction_epochs",
        "personal_epochs",
    ):
        if getattr(cfg, count) < 0:
            p.append(f"{count} must be >= 0")
    for size in ("pretrain_batch", "batch_size"):
        if getattr(cfg, size) < 1:
            p.append(f"{size} must be >= 1")
    if cfg.lam < 0:
        p.append("lambda must be >= 0")
    if cfg.drift_rounds < 1:
        p.append("drift_rounds must be >= 1")
    if not 0.0 < cfg.participation <= 1.0:
        p.append("participation must be in (0, 1]")
    return p


def _render_value(name: str, value) -> str:
    if name == "hidden":
        return ",".join(str(d) for d in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: ExperimentConfig) -> str:
    """Canonical echo; parsing it back yields an equal config."""
    lines = []
    for f in fields(ExperimentConfig):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        lines.append(f"{key} = {_render_value(f.name, getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: ExperimentConfig) -> str:
    """SHA-256 over the canonical rendering of the semantic fields."""
    lines = []
    for f in fields(ExperimentConfig):
        if f.name in _NON_SEMANTIC_FIELDS:
            continue
        key = _FIELD_TO_KEY.get(f.name, f.name)
        lines.append(f"{key} = {_render_value(f.name, getattr(cfg, f.name))}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        value = getattr(cfg, f.name)
        out[key] = list(value) if isinstance(value, tuple) else value
    return out
