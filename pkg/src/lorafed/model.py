"""Toy frozen-base network, losses, and analytic gradients.

The network is a stack of dense layers with tanh between them and a
softmax head; base weights are frozen after pretraining and adaptation
happens only through LoRA deltas. Three training modes exist, each with
its own trainable set:

* FULL_LORA      — raw A and B matrices of every head (client stage).
* DIRECTION_A    — an unnormalized proxy V per head; the forward pass
  column-normalizes V into A's direction, so the gradient flows through
  the normalization and the fixed A magnitudes rescale it (global stage).
* MAGNITUDE_B    — an additive update delta_m to B's magnitude vector,
  with an optional (lam/2)*||delta_m||^2 penalty in the loss
  (personalization stage).

Everything the backward pass returns is checked against central finite
differences by :func:`fd_check`; that oracle is the arbiter for the
chain-rule implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from lorafed import linalg, lora
from lorafed.linalg import Matrix, Vector
from lorafed.lora import EPS_ZERO_COLUMN, DecomposedAdapter, LoraAdapter
from lorafed.rng import SplitMix64, derive_seed


class GradMode(Enum):
    FULL_LORA = "full_lora"
    DIRECTION_A = "direction_a"
    MAGNITUDE_B = "magnitude_b"


@dataclass
class TaskBatch:
    x: Matrix  # batch x d_in
    y: list[int]  # class indices, len = batch

    def __post_init__(self):
        if self.x.rows != len(self.y):
            raise ValueError(f"{self.x.rows} feature rows but {len(self.y)} labels")
        if self.x.rows == 0:
            raise ValueError("empty batch")

    @property
    def size(self) -> int:
        return self.x.rows

    def take(self, indices: list[int]) -> TaskBatch:
        rows = [self.x.row(i) for i in indices]
        return TaskBatch(Matrix.from_rows(rows), [self.y[i] for i in indices])


@dataclass
class LinearLayer:
    w0: Matrix  # d_out x d_in, frozen after pretraining
    bias: Vector  # d_out, frozen after pretraining
    adapter: LoraAdapter | None = None


@dataclass
class ToyNet:
    layers: list[LinearLayer]

    @property
    def d_in(self) -> int:
        return self.layers[0].w0.cols

    @property
    def num_classes(self) -> int:
        return self.layers[-1].w0.rows

    def dims(self) -> list[int]:
        return [self.d_in] + [layer.w0.rows for layer in self.layers]


def build_net(layer_dims: list[int], seed: int) -> ToyNet:
    """Random dense net (std 1/sqrt(fan_in) weights, zero bias), no adapters."""
    if len(layer_dims) < 2:
        raise ValueError("need at least input and output dims")
    layers = []
    for i in range(len(layer_dims) - 1):
        d_in, d_out = layer_dims[i], layer_dims[i + 1]
        w0 = linalg.seeded_gaussian(
            d_out, d_in, 0.0, 1.0 / math.sqrt(d_in), derive_seed(seed, "base-w", i)
        )
        layers.append(LinearLayer(w0=w0, bias=Vector.zeros(d_out)))
    return ToyNet(layers)


def attach_adapters(net: ToyNet, r: int, n: int, alpha: float, seed: int) -> ToyNet:
    """Same frozen base, fresh zero-delta adapter on every layer."""
    layers = []
    for i, layer in enumerate(net.layers):
        ad = lora.init_adapter(
            layer.w0.rows, layer.w0.cols, r, n, alpha, derive_seed(seed, "adapter", i)
        )
        layers.append(LinearLayer(w0=layer.w0, bias=layer.bias, adapter=ad))
    return ToyNet(layers)


# ---------------------------------------------------------------------------
# Mode-specific trainable state


@dataclass
class HeadStateFull:
    a: Matrix  # trainable
    b: Matrix  # trainable


@dataclass
class HeadStateDirection:
    v: Matrix  # trainable direction proxy for A (r x d_in)
    a_mag: Vector  # fixed
    b_eff: Matrix  # fixed, recomposed B


@dataclass
class HeadStateMagnitude:
    delta_m: Vector  # trainable (len r)
    b_dir: Matrix  # fixed
    b_mag: Vector  # fixed
    a_eff: Matrix  # fixed, recomposed A


@dataclass
class LayerState:
    heads: list
    rank: int
    alpha: float


@dataclass
class TrainState:
    """Trainable parameters for one GradMode, aligned with net.layers."""

    mode: GradMode
    layers: list[LayerState | None]

    @classmethod
    def full_from_adapters(cls, adapters: list[LoraAdapter | None]) -> TrainState:
        out = []
        for ad in adapters:
            if ad is None:
                out.append(None)
            else:
                heads = [HeadStateFull(a=h.a.copy(), b=h.b.copy()) for h in ad.heads]
                out.append(LayerState(heads, ad.rank, ad.alpha))
        return cls(GradMode.FULL_LORA, out)

    @classmethod
    def direction_from_components(
        cls, components: list[DecomposedAdapter | None]
    ) -> TrainState:
        out = []
        for comp in components:
            if comp is None:
                out.append(None)
                continue
            heads = [
                HeadStateDirection(
                    v=h.a.direction.copy(),
                    a_mag=h.a.magnitude.copy(),
                    b_eff=lora.recompose(h.b),
                )
                for h in comp.heads
            ]
            out.append(LayerState(heads, comp.rank, comp.alpha))
        return cls(GradMode.DIRECTION_A, out)

    @classmethod
    def magnitude_from_components(
        cls,
        components: list[DecomposedAdapter | None],
        delta_m: list[list[Vector] | None] | None = None,
    ) -> TrainState:
        out = []
        for li, comp in enumerate(components):
            if comp is None:
                out.append(None)
                continue
            heads = []
            for hi, h in enumerate(comp.heads):
                dm = (
                    delta_m[li][hi].copy()
                    if delta_m is not None and delta_m[li] is not None
                    else Vector.zeros(comp.rank)
                )
                heads.append(
                    HeadStateMagnitude(
                        delta_m=dm,
                        b_dir=h.b.direction.copy(),
                        b_mag=h.b.magnitude.copy(),
                        a_eff=lora.recompose(h.a),
                    )
                )
            out.append(LayerState(heads, comp.rank, comp.alpha))
        return cls(GradMode.MAGNITUDE_B, out)

    def copy(self) -> TrainState:
        layers: list[LayerState | None] = []
        for ls in self.layers:
            if ls is None:
                layers.append(None)
                continue
            heads = []
            for h in ls.heads:
                if isinstance(h, HeadStateFull):
                    heads.append(HeadStateFull(h.a.copy(), h.b.copy()))
                elif isinstance(h, HeadStateDirection):
                    heads.append(HeadStateDirection(h.v.copy(), h.a_mag, h.b_eff))
                else:
                    heads.append(
                        HeadStateMagnitude(h.delta_m.copy(), h.b_dir, h.b_mag, h.a_eff)
                    )
            layers.append(LayerState(heads, ls.rank, ls.alpha))
        return TrainState(self.mode, layers)

    def to_adapters(self) -> list[LoraAdapter | None]:
        if self.mode is not GradMode.FULL_LORA:
            raise ValueError("only FULL_LORA state stores raw adapters")
        out: list[LoraAdapter | None] = []
        for ls in self.layers:
            if ls is None:
                out.append(None)
            else:
                heads = [lora.LoraHead(b=h.b.copy(), a=h.a.copy()) for h in ls.heads]
                out.append(LoraAdapter(heads, ls.rank, ls.alpha))
        return out

    def direction_proxies(self) -> list[list[Matrix] | None]:
        if self.mode is not GradMode.DIRECTION_A:
            raise ValueError("not a DIRECTION_A state")
        return [
            None if ls is None else [h.v.copy() for h in ls.heads]
            for ls in self.layers
        ]

    def delta_ms(self) -> list[list[Vector] | None]:
        if self.mode is not GradMode.MAGNITUDE_B:
            raise ValueError("not a MAGNITUDE_B state")
        return [
            None if ls is None else [h.delta_m.copy() for h in ls.heads]
            for ls in self.layers
        ]


@dataclass
class _HeadCache:
    a_eff: Matrix | None = None
    b_eff: Matrix | None = None
    direction: Matrix | None = None
    v_norms: Vector | None = None


@dataclass
class ForwardCache:
    inputs: list[Matrix] = field(default_factory=list)  # X_l, inputs[0] = data
    probs: Matrix | None = None
    w_effs: list[Matrix] = field(default_factory=list)
    deltas: list[Matrix | None] = field(default_factory=list)
    masks: list[Matrix | None] = field(default_factory=list)
    head_caches: list[list[_HeadCache] | None] = field(default_factory=list)


def _layer_delta(ls: LayerState, mode: GradMode) -> tuple[Matrix, list[_HeadCache]]:
    s = ls.alpha / ls.rank
    total: Matrix | None = None
    caches = []
    for h in ls.heads:
        hc = _HeadCache()
        if mode is GradMode.FULL_LORA:
            contrib = linalg.matmul(h.b, h.a)
        elif mode is GradMode.DIRECTION_A:
            d, norms = lora.normalize_columns(h.v)
            a_eff = linalg.scale_columns(d, h.a_mag)
            hc.direction, hc.v_norms, hc.a_eff = d, norms, a_eff
            contrib = linalg.matmul(h.b_eff, a_eff)
        else:
            b_eff = linalg.scale_columns(h.b_dir, linalg.vec_add(h.b_mag, h.delta_m))
            hc.b_eff = b_eff
            contrib = linalg.matmul(b_eff, h.a_eff)
        caches.append(hc)
        contrib = linalg.scale(contrib, s)
        total = contrib if total is None else linalg.add(total, contrib)
    assert total is not None
    return total, caches


def _states_for_net(net: ToyNet) -> TrainState:
    return TrainState.full_from_adapters([layer.adapter for layer in net.layers])


def forward_pass(
    net: ToyNet,
    x: Matrix,
    states: TrainState | None = None,
    dropout_p: float = 0.0,
    dropout_rng: SplitMix64 | None = None,
) -> ForwardCache:
    """Run the network, keeping everything backward needs.

    `states` overrides the adapters attached to the net; without it the
    net's own adapters are used (raw, FULL_LORA semantics). Dropout, when
    enabled, masks the input of the adapter branch only (inverted
    scaling), leaving the frozen path intact.
    """
    if x.cols != net.d_in:
        raise linalg.ShapeError(f"input has {x.cols} features, net expects {net.d_in}")
    if states is None:
        states = _states_for_net(net)
    if dropout_p > 0.0 and dropout_rng is None:
        raise ValueError("dropout needs an explicit RNG stream")

    cache = ForwardCache()
    cur = x
    n_layers = len(net.layers)
    for li, layer in enumerate(net.layers):
        cache.inputs.append(cur)
        ls = states.layers[li] if li < len(states.layers) else None
        if ls is not None:
            delta, head_caches = _layer_delta(ls, states.mode)
            w_eff = linalg.add(layer.w0, delta)
        else:
            delta, head_caches = None, None
            w_eff = layer.w0
        cache.deltas.append(delta)
        cache.w_effs.append(w_eff)
        cache.head_caches.append(head_caches)

        mask = None
        if dropout_p > 0.0 and delta is not None:
            keep = 1.0 / (1.0 - dropout_p)
            mask = Matrix(
                cur.rows,
                cur.cols,
                [
                    keep if dropout_rng.uniform() >= dropout_p else 0.0
                    for _ in range(cur.rows * cur.cols)
                ],
            )
        cache.masks.append(mask)

        if mask is None:
            z = linalg.matmul(cur, linalg.transpose(w_eff))
        else:
            z = linalg.add(
                linalg.matmul(cur, linalg.transpose(layer.w0)),
                linalg.matmul(linalg.hadamard(cur, mask), linalg.transpose(delta)),
            )
        z = linalg.add_row_vector(z, layer.bias)
        cur = linalg.tanh_map(z) if li < n_layers - 1 else z

    cache.probs = linalg.softmax_rows(cur)
    return cache


def forward(net: ToyNet, x: Matrix, states: TrainState | None = None) -> Matrix:
    """Class probabilities, one row per input row (rows sum to 1)."""
    return forward_pass(net, x, states).probs


def task_loss(net: ToyNet, batch: TaskBatch, states: TrainState | None = None) -> float:
    """Mean softmax cross-entropy of the network on the batch."""
    cache = forward_pass(net, batch.x, states)
    return _loss_from_cache(net, batch, cache)


def _loss_from_cache(net: ToyNet, batch: TaskBatch, cache: ForwardCache) -> float:
    probs = cache.probs
    total = 0.0
    c = probs.cols
    for b, label in enumerate(batch.y):
        total -= math.log(probs.data[b * c + label])
    return total / len(batch.y)


def regularizer(states: TrainState, lam: float) -> float:
    """(lam/2) * sum of squared magnitude updates (MAGNITUDE_B only)."""
    if lam == 0.0 or states.mode is not GradMode.MAGNITUDE_B:
        return 0.0
    acc = 0.0
    for ls in states.layers:
        if ls is None:
            continue
        for h in ls.heads:
            acc += sum(v * v for v in h.delta_m.data)
    return 0.5 * lam * acc


def mode_loss(
    net: ToyNet, batch: TaskBatch, states: TrainState, lam: float = 0.0
) -> float:
    """The objective each mode's backward differentiates."""
    return task_loss(net, batch, states) + regularizer(states, lam)


def local_loss(
    net: ToyNet,
    batch: TaskBatch,
    delta_m: list[list[Vector] | None],
    lam: float,
) -> float:
    """Task loss with B magnitudes shifted by delta_m, plus the L2 penalty."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    components = [
        None if layer.adapter is None else lora.decompose_adapter(layer.adapter)
        for layer in net.layers
    ]
    states = TrainState.magnitude_from_components(components, delta_m)
    return mode_loss(net, batch, states, lam)


# ---------------------------------------------------------------------------
# Backward


def _output_gradient(probs: Matrix, y: list[int]) -> Matrix:
    g = probs.copy()
    c = probs.cols
    for b, label in enumerate(y):
        g.data[b * c + label] -= 1.0
    return linalg.scale(g, 1.0 / len(y))


def _head_gradients(
    ls: LayerState, mode: GradMode, gw: Matrix, head_caches: list[_HeadCache]
) -> list:
    s = ls.alpha / ls.rank
    grads = []
    for h, hc in zip(ls.heads, head_caches):
        if mode is GradMode.FULL_LORA:
            gb = linalg.scale(linalg.matmul(gw, linalg.transpose(h.a)), s)
            ga = linalg.scale(linalg.matmul(linalg.transpose(h.b), gw), s)
            grads.append((ga, gb))
        elif mode is GradMode.DIRECTION_A:
            g_aeff = linalg.scale(
                linalg.matmul(linalg.transpose(h.b_eff), gw), s
            )
            g_d = linalg.scale_columns(g_aeff, h.a_mag)
            # through column normalization d = v/|v|:
            # g_v[:,j] = (g_d[:,j] - d[:,j] * <d[:,j], g_d[:,j]>) / |v_j|
            t = linalg.column_dots(hc.direction, g_d)
            inv = Vector(
                [1.0 / n if n >= EPS_ZERO_COLUMN else 0.0 for n in hc.v_norms.data]
            )
            gv = linalg.scale_columns(
                linalg.sub(g_d, linalg.scale_columns(hc.direction, t)), inv
            )
            grads.append(gv)
        else:
            g_beff = linalg.scale(linalg.matmul(gw, linalg.transpose(h.a_eff)), s)
            grads.append(linalg.column_dots(h.b_dir, g_beff))
    return grads


def backward(
    net: ToyNet,
    batch: TaskBatch,
    states: TrainState,
    lam: float = 0.0,
    cache: ForwardCache | None = None,
) -> list[list | None]:
    """Gradient of :func:`mode_loss` w.r.t. the mode's trainable set.

    Returns one entry per layer, ``None`` where the layer has no state;
    per-head entries are (ga, gb) matrices for FULL_LORA, a proxy-shaped
    matrix for DIRECTION_A, and a delta_m-shaped vector for MAGNITUDE_B.
    Frozen parameters receive no gradient by construction.
    """
    if cache is None:
        cache = forward_pass(net, batch.x, states)
    g = _output_gradient(cache.probs, batch.y)
    grads: list[list | None] = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        x_in = cache.inputs[li]
        mask = cache.masks[li]
        if mask is None:
            gw = linalg.matmul(linalg.transpose(g), x_in)
        else:
            gw = linalg.matmul(
                linalg.transpose(g), linalg.hadamard(x_in, mask)
            )
        ls = states.layers[li]
        if ls is not None:
            grads[li] = _head_gradients(ls, states.mode, gw, cache.head_caches[li])
        if li > 0:
            if mask is None:
                gx = linalg.matmul(g, cache.w_effs[li])
            else:
                gx = linalg.add(
                    linalg.matmul(g, layer.w0),
                    linalg.hadamard(linalg.matmul(g, cache.deltas[li]), mask),
                )
            g = linalg.tanh_backward(x_in, gx)
    if states.mode is GradMode.MAGNITUDE_B and lam != 0.0:
        for li, ls in enumerate(states.layers):
            if ls is None:
                continue
            grads[li] = [
                linalg.vec_add(gdm, linalg.vec_scale(h.delta_m, lam))
                for gdm, h in zip(grads[li], ls.heads)
            ]
    return grads


def base_gradients(
    net: ToyNet, batch: TaskBatch, states: TrainState | None = None
) -> list[tuple[Matrix, Vector]]:
    """Task-loss gradients w.r.t. the base (W0, bias) of every layer.

    Only pretraining uses this; the federated stages never touch the base.
    """
    if states is None:
        states = _states_for_net(net)
    cache = forward_pass(net, batch.x, states)
    g = _output_gradient(cache.probs, batch.y)
    out: list[tuple[Matrix, Vector]] = [None] * len(net.layers)  # type: ignore[list-item]
    for li in range(len(net.layers) - 1, -1, -1):
        x_in = cache.inputs[li]
        out[li] = (linalg.matmul(linalg.transpose(g), x_in), linalg.col_sums(g))
        if li > 0:
            gx = linalg.matmul(g, cache.w_effs[li])
            g = linalg.tanh_backward(x_in, gx)
    return out


def sgd_step(states: TrainState, grads: list[list | None], lr: float) -> TrainState:
    """params - lr * grads over the active trainable set only."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    new = states.copy()
    for ls, g_layer in zip(new.layers, grads):
        if ls is None or g_layer is None:
            continue
        for h, g in zip(ls.heads, g_layer):
            if isinstance(h, HeadStateFull):
                ga, gb = g
                h.a = linalg.sub(h.a, linalg.scale(ga, lr))
                h.b = linalg.sub(h.b, linalg.scale(gb, lr))
            elif isinstance(h, HeadStateDirection):
                h.v = linalg.sub(h.v, linalg.scale(g, lr))
            else:
                h.delta_m = linalg.vec_sub(h.delta_m, linalg.vec_scale(g, lr))
    return new


def sgd_step_base(
    net: ToyNet, base_grads: list[tuple[Matrix, Vector]], lr: float
) -> ToyNet:
    """Full-parameter step for pretraining (before the base is frozen)."""
    layers = []
    for layer, (gw, gb) in zip(net.layers, base_grads):
        layers.append(
            LinearLayer(
                w0=linalg.sub(layer.w0, linalg.scale(gw, lr)),
                bias=linalg.vec_sub(layer.bias, linalg.vec_scale(gb, lr)),
                adapter=layer.adapter,
            )
        )
    return ToyNet(layers)


def train_mode_sgd(
    net: ToyNet,
    batch: TaskBatch,
    states: TrainState,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: SplitMix64,
    lam: float = 0.0,
    dropout_p: float = 0.0,
    dropout_rng: SplitMix64 | None = None,
) -> tuple[TrainState, list[float]]:
    """Mini-batch SGD on the mode's trainable set.

    Shuffles once per epoch from `rng`; returns the updated state and the
    per-epoch mean training loss (mode loss, so the MAGNITUDE_B penalty
    is included).
    """
    history = []
    for _ in range(epochs):
        order = rng.permutation(batch.size)
        total = 0.0
        for start in range(0, batch.size, batch_size):
            mini = batch.take(order[start : start + batch_size])
            cache = forward_pass(net, mini.x, states, dropout_p, dropout_rng)
            grads = backward(net, mini, states, lam, cache)
            total += (
                _loss_from_cache(net, mini, cache) + regularizer(states, lam)
            ) * mini.size
            states = sgd_step(states, grads, lr)
        history.append(total / batch.size)
    return states, history


def evaluate(
    net: ToyNet, batch: TaskBatch, states: TrainState | None = None
) -> tuple[float, float]:
    """(mean cross-entropy, accuracy); argmax ties break to the lowest class."""
    cache = forward_pass(net, batch.x, states)
    loss = _loss_from_cache(net, batch, cache)
    probs = cache.probs
    c = probs.cols
    correct = 0
    for b, label in enumerate(batch.y):
        row = probs.data[b * c : (b + 1) * c]
        best, best_v = 0, row[0]
        for j in range(1, c):
            if row[j] > best_v:
                best, best_v = j, row[j]
        if best == label:
            correct += 1
    return loss, correct / len(batch.y)


# ---------------------------------------------------------------------------
# Finite-difference oracle


@dataclass
class FdReport:
    mode: GradMode
    h: float
    tol: float
    n_params: int
    max_rel_err: float
    worst: tuple[int, int, str, int] | None  # (layer, head, param, flat index)
    passed: bool

    def format_block(self) -> str:
        worst = (
            f"layer {self.worst[0]} head {self.worst[1]} {self.worst[2]}[{self.worst[3]}]"
            if self.worst
            else "n/a"
        )
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] mode={self.mode.value} params={self.n_params} "
            f"max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} worst={worst}"
        )


def _trainable_arrays(states: TrainState):
    for li, ls in enumerate(states.layers):
        if ls is None:
            continue
        for hi, h in enumerate(ls.heads):
            if isinstance(h, HeadStateFull):
                yield li, hi, "a", h.a.data
                yield li, hi, "b", h.b.data
            elif isinstance(h, HeadStateDirection):
                yield li, hi, "v", h.v.data
            else:
                yield li, hi, "delta_m", h.delta_m.data


def _grad_lookup(grads: list[list | None], li: int, hi: int, name: str):
    g = grads[li][hi]
    if name == "a":
        return g[0].data
    if name == "b":
        return g[1].data
    return g.data


def fd_check(
    net: ToyNet,
    batch: TaskBatch,
    mode: GradMode,
    lam: float = 0.0,
    h: float = 1e-6,
    tol: float = 1e-5,
    states: TrainState | None = None,
    grads: list[list | None] | None = None,
) -> FdReport:
    """Compare analytic gradients against central finite differences.

    Checks every trainable scalar: relative error is
    |analytic - fd| / max(|analytic|, |fd|, 1e-8). ``grads`` can be
    injected to test the checker itself (fault injection).
    """
    if h <= 0:
        raise ValueError(f"step size must be > 0, got {h}")
    if states is None:
        states = _default_states(net, mode)
    states = states.copy()
    if grads is None:
        grads = backward(net, batch, states, lam)

    max_rel = 0.0
    worst = None
    n_params = 0
    for li, hi, name, arr in _trainable_arrays(states):
        garr = _grad_lookup(grads, li, hi, name)
        for idx in range(len(arr)):
            orig = arr[idx]
            arr[idx] = orig + h
            up = mode_loss(net, batch, states, lam)
            arr[idx] = orig - h
            down = mode_loss(net, batch, states, lam)
            arr[idx] = orig
            fd = (up - down) / (2.0 * h)
            an = garr[idx]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            n_params += 1
            if rel > max_rel:
                max_rel = rel
                worst = (li, hi, name, idx)
    return FdReport(
        mode=mode,
        h=h,
        tol=tol,
        n_params=n_params,
        max_rel_err=max_rel,
        worst=worst,
        passed=max_rel <= tol,
    )


def _default_states(net: ToyNet, mode: GradMode) -> TrainState:
    adapters = [layer.adapter for layer in net.layers]
    if mode is GradMode.FULL_LORA:
        return TrainState.full_from_adapters(adapters)
    components = [
        None if ad is None else lora.decompose_adapter(ad) for ad in adapters
    ]
    if mode is GradMode.DIRECTION_A:
        return TrainState.direction_from_components(components)
    return TrainState.magnitude_from_components(components)
