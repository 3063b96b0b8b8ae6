"""LoRA adapters and the magnitude-direction decomposition.

A matrix factors into a per-column Euclidean-norm vector (magnitude) and
a column-normalized matrix (direction); recomposition scales the
direction's columns back up. Each adapter is a bank of low-rank head
pairs (B: d_out x r up-projection, A: r x d_in down-projection) whose
effective weight delta is sum over heads of (alpha / r) * B @ A.

Zero-column convention: a column with norm below ``EPS_ZERO_COLUMN`` has
no defined direction (standard LoRA initializes B to all zeros), so it
is stored as an exactly-zero column with magnitude 0 and is exempt from
the unit-norm invariant. Recomposition maps it back to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

from lorafed import linalg
from lorafed.linalg import Matrix, Vector
from lorafed.rng import derive_seed

EPS_ZERO_COLUMN = 1e-12

# Standard deviation of the Gaussian init for A heads; B heads start at
# zero so a fresh adapter contributes nothing.
INIT_STD = 0.02


@dataclass
class DecomposedMatrix:
    """Unit-column (or zero-column) direction plus nonnegative magnitudes."""

    direction: Matrix
    magnitude: Vector

    def copy(self) -> DecomposedMatrix:
        return DecomposedMatrix(self.direction.copy(), self.magnitude.copy())


@dataclass
class LoraHead:
    b: Matrix  # d_out x r
    a: Matrix  # r x d_in

    def copy(self) -> LoraHead:
        return LoraHead(self.b.copy(), self.a.copy())


@dataclass
class DecomposedHead:
    b: DecomposedMatrix
    a: DecomposedMatrix

    def copy(self) -> DecomposedHead:
        return DecomposedHead(self.b.copy(), self.a.copy())


@dataclass
class LoraAdapter:
    """Raw-matrix adapter storage (used while a client trains)."""

    heads: list[LoraHead]
    rank: int
    alpha: float

    def __post_init__(self):
        if not self.heads:
            raise ValueError("adapter needs at least one head")
        d_out, r = self.heads[0].b.shape
        d_in = self.heads[0].a.cols
        if r != self.rank:
            raise ValueError(f"B has {r} columns but rank is {self.rank}")
        for h in self.heads:
            if h.b.shape != (d_out, r) or h.a.shape != (r, d_in):
                raise ValueError("heads disagree on (d_out, r, d_in)")

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def d_out(self) -> int:
        return self.heads[0].b.rows

    @property
    def d_in(self) -> int:
        return self.heads[0].a.cols

    def copy(self) -> LoraAdapter:
        return LoraAdapter([h.copy() for h in self.heads], self.rank, self.alpha)


@dataclass
class DecomposedAdapter:
    """Component storage (used at aggregation/optimizer boundaries)."""

    heads: list[DecomposedHead]
    rank: int
    alpha: float

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def copy(self) -> DecomposedAdapter:
        return DecomposedAdapter([h.copy() for h in self.heads], self.rank, self.alpha)


def decompose(x: Matrix) -> DecomposedMatrix:
    """Split into unit-column direction and per-column magnitude."""
    norms = linalg.column_norms(x)
    inv = [1.0 / n if n >= EPS_ZERO_COLUMN else 0.0 for n in norms.data]
    mags = [n if n >= EPS_ZERO_COLUMN else 0.0 for n in norms.data]
    direction = linalg.scale_columns(x, Vector(inv))
    # A killed column must be exactly zero, not a mix of +/-0.0.
    for j, m in enumerate(mags):
        if m == 0.0:
            for i in range(x.rows):
                direction.data[i * x.cols + j] = 0.0
    return DecomposedMatrix(direction, Vector(mags))


def recompose(d: DecomposedMatrix) -> Matrix:
    """Inverse of :func:`decompose`: scale direction columns by magnitude."""
    return linalg.scale_columns(d.direction, d.magnitude)


def normalize_columns(x: Matrix) -> tuple[Matrix, Vector]:
    """Unit-column copy of x plus the original column norms.

    Columns under ``EPS_ZERO_COLUMN`` come back exactly zero (their norm
    is reported unchanged); both training-mode forwards and aggregation
    renormalization share this routine.
    """
    norms = linalg.column_norms(x)
    inv = Vector([1.0 / n if n >= EPS_ZERO_COLUMN else 0.0 for n in norms.data])
    d = linalg.scale_columns(x, inv)
    for j, n in enumerate(norms.data):
        if n < EPS_ZERO_COLUMN:
            for i in range(x.rows):
                d.data[i * x.cols + j] = 0.0
    return d, norms


def validate_decomposition(d: DecomposedMatrix, tol: float = 1e-9) -> None:
    """Raise if the unit-norm / zero-column / nonnegativity invariants fail."""
    if len(d.magnitude) != d.direction.cols:
        raise ValueError("magnitude length does not match direction columns")
    norms = linalg.column_norms(d.direction)
    for j, (n, m) in enumerate(zip(norms.data, d.magnitude.data)):
        if m < 0.0:
            raise ValueError(f"negative magnitude {m} at column {j}")
        if n == 0.0:
            if m != 0.0:
                raise ValueError(f"zero column {j} with nonzero magnitude {m}")
        elif abs(n - 1.0) > tol:
            raise ValueError(f"column {j} norm {n} departs from 1 by more than {tol}")


def decompose_head(h: LoraHead) -> DecomposedHead:
    return DecomposedHead(b=decompose(h.b), a=decompose(h.a))


def recompose_head(h: DecomposedHead) -> LoraHead:
    return LoraHead(b=recompose(h.b), a=recompose(h.a))


def decompose_adapter(ad: LoraAdapter) -> DecomposedAdapter:
    return DecomposedAdapter([decompose_head(h) for h in ad.heads], ad.rank, ad.alpha)


def recompose_adapter(ad: DecomposedAdapter) -> LoraAdapter:
    return LoraAdapter([recompose_head(h) for h in ad.heads], ad.rank, ad.alpha)


def init_adapter(
    d_out: int, d_in: int, r: int, n: int, alpha: float, seed: int
) -> LoraAdapter:
    """Fresh adapter: A heads Gaussian (std 0.02), B heads zero.

    With B = 0 the initial delta weight is the zero matrix, so attaching
    a fresh adapter leaves the network's function unchanged.
    """
    if d_out < 1 or d_in < 1:
        raise ValueError(f"invalid dimensions d_out={d_out}, d_in={d_in}")
    if r < 1 or n < 1:
        raise ValueError(f"rank and head count must be >= 1, got r={r}, n={n}")
    heads = []
    for head in range(n):
        a = linalg.seeded_gaussian(
            r, d_in, 0.0, INIT_STD, derive_seed(seed, "lora-init-a", head)
        )
        heads.append(LoraHead(b=linalg.zeros(d_out, r), a=a))
    return LoraAdapter(heads, rank=r, alpha=alpha)


def delta_weight(adapter: LoraAdapter | DecomposedAdapter) -> Matrix:
    """Effective weight delta: sum over heads of (alpha / r) * B @ A."""
    s = adapter.alpha / adapter.rank
    total: Matrix | None = None
    for h in adapter.heads:
        raw = h if isinstance(h, LoraHead) else recompose_head(h)
        contrib = linalg.scale(linalg.matmul(raw.b, raw.a), s)
        total = contrib if total is None else linalg.add(total, contrib)
    assert total is not None
    return total


def adapter_param_count(adapter: LoraAdapter | DecomposedAdapter) -> int:
    """Trainable scalars: n * r * (d_out + d_in)."""
    first = adapter.heads[0]
    raw = first if isinstance(first, LoraHead) else recompose_head(first)
    d_out, r = raw.b.shape
    d_in = raw.a.cols
    return adapter.num_heads * r * (d_out + d_in)
