"""Dense f64 matrices and vectors with deterministic kernels.

Every other module builds on this layer. All reductions happen in a
fixed order (see `_kernels_py`), so results are reproducible across
runs, thread counts and kernel backends. Values are immutable by
convention: operations return fresh objects and never touch their
inputs. All entries are finite for finite, sanely-scaled inputs; there
is no NaN/Inf laundering.
"""

from __future__ import annotations

import math
import sys
from array import array
from collections.abc import Iterable, Sequence

from lorafed._backend import BACKEND, kernels
from lorafed.rng import SplitMix64

__all__ = [
    "BACKEND",
    "Matrix",
    "ShapeError",
    "Vector",
    "add",
    "add_row_vector",
    "col_sums",
    "column_dots",
    "column_norms",
    "emap",
    "flat_cosine",
    "frobenius_sq",
    "hadamard",
    "identity",
    "le_bytes",
    "matmul",
    "same_bits",
    "scale",
    "scale_columns",
    "seeded_gaussian",
    "softmax_rows",
    "sub",
    "tanh_backward",
    "tanh_map",
    "transpose",
    "vec_add",
    "vec_scale",
    "vec_sub",
    "zeros",
]


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class Matrix:
    """Row-major dense matrix of 64-bit floats."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data: Iterable[float] | None = None):
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative dimensions {rows}x{cols}")
        self.rows = rows
        self.cols = cols
        if data is None:
            self.data = array("d", bytes(8 * rows * cols))
        else:
            self.data = array("d", data)
            if len(self.data) != rows * cols:
                raise ShapeError(
                    f"{rows}x{cols} matrix needs {rows * cols} entries, got {len(self.data)}"
                )

    @classmethod
    def _wrap(cls, rows: int, cols: int, data: array) -> Matrix:
        m = cls.__new__(cls)
        m.rows = rows
        m.cols = cols
        m.data = data
        return m

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> Matrix:
        r = len(rows)
        c = len(rows[0]) if r else 0
        flat = array("d")
        for row in rows:
            if len(row) != c:
                raise ShapeError("ragged rows")
            flat.extend(float(v) for v in row)
        return cls._wrap(r, c, flat)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def at(self, i: int, j: int) -> float:
        return self.data[i * self.cols + j]

    def row(self, i: int) -> list[float]:
        return list(self.data[i * self.cols : (i + 1) * self.cols])

    def column(self, j: int) -> list[float]:
        return [self.data[i * self.cols + j] for i in range(self.rows)]

    def to_rows(self) -> list[list[float]]:
        return [self.row(i) for i in range(self.rows)]

    def copy(self) -> Matrix:
        return Matrix._wrap(self.rows, self.cols, array("d", self.data))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Matrix)
            and self.shape == other.shape
            and self.data == other.data
        )

    def __hash__(self):  # pragma: no cover - value type, not hashable
        raise TypeError("Matrix is not hashable")

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


class Vector:
    """Dense vector of 64-bit floats."""

    __slots__ = ("data",)

    def __init__(self, data: Iterable[float]):
        self.data = array("d", data)

    @classmethod
    def _wrap(cls, data: array) -> Vector:
        v = cls.__new__(cls)
        v.data = data
        return v

    @classmethod
    def zeros(cls, n: int) -> Vector:
        return cls._wrap(array("d", bytes(8 * n)))

    def __len__(self) -> int:
        return len(self.data)

    def __getitem__(self, i: int) -> float:
        return self.data[i]

    def to_list(self) -> list[float]:
        return list(self.data)

    def copy(self) -> Vector:
        return Vector._wrap(array("d", self.data))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vector) and self.data == other.data

    def __hash__(self):  # pragma: no cover
        raise TypeError("Vector is not hashable")

    def __repr__(self) -> str:
        return f"Vector(len={len(self.data)})"


def zeros(rows: int, cols: int) -> Matrix:
    return Matrix(rows, cols)


def identity(n: int) -> Matrix:
    m = Matrix(n, n)
    for i in range(n):
        m.data[i * n + i] = 1.0
    return m


def _check_same_shape(a: Matrix, b: Matrix) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = kernels.matmul(a.data, a.rows, a.cols, b.data, b.rows, b.cols)
    return Matrix._wrap(a.rows, b.cols, out)


def transpose(a: Matrix) -> Matrix:
    return Matrix._wrap(a.cols, a.rows, kernels.transpose(a.data, a.rows, a.cols))


def add(a: Matrix, b: Matrix) -> Matrix:
    _check_same_shape(a, b)
    return Matrix._wrap(a.rows, a.cols, kernels.add(a.data, b.data))


def sub(a: Matrix, b: Matrix) -> Matrix:
    _check_same_shape(a, b)
    return Matrix._wrap(a.rows, a.cols, kernels.sub(a.data, b.data))


def scale(a: Matrix, c: float) -> Matrix:
    return Matrix._wrap(a.rows, a.cols, kernels.scale(a.data, c))


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    _check_same_shape(a, b)
    return Matrix._wrap(a.rows, a.cols, kernels.hadamard(a.data, b.data))


def emap(fn, a: Matrix) -> Matrix:
    """Elementwise map by an arbitrary Python function (not a hot path)."""
    return Matrix._wrap(a.rows, a.cols, array("d", [fn(v) for v in a.data]))


def scale_columns(a: Matrix, s: Vector) -> Matrix:
    if len(s) != a.cols:
        raise ShapeError(f"need {a.cols} column scales, got {len(s)}")
    return Matrix._wrap(
        a.rows, a.cols, kernels.scale_columns(a.data, a.rows, a.cols, s.data)
    )


def column_norms(a: Matrix) -> Vector:
    return Vector._wrap(kernels.column_norms(a.data, a.rows, a.cols))


def column_dots(a: Matrix, b: Matrix) -> Vector:
    _check_same_shape(a, b)
    return Vector._wrap(kernels.column_dots(a.data, b.data, a.rows, a.cols))


def col_sums(a: Matrix) -> Vector:
    return Vector._wrap(kernels.col_sums(a.data, a.rows, a.cols))


def frobenius_sq(a: Matrix) -> float:
    return kernels.frobenius_sq(a.data)


def flat_cosine(a: Matrix, b: Matrix) -> float:
    """Cosine between two same-shape matrices flattened to vectors."""
    _check_same_shape(a, b)
    na = math.sqrt(kernels.frobenius_sq(a.data))
    nb = math.sqrt(kernels.frobenius_sq(b.data))
    if na == 0.0 or nb == 0.0:
        raise ValueError("flat_cosine undefined for an all-zero matrix")
    c = kernels.dot(a.data, b.data) / (na * nb)
    return min(1.0, max(-1.0, c))


def tanh_map(a: Matrix) -> Matrix:
    return Matrix._wrap(a.rows, a.cols, kernels.tanh_map(a.data))


def tanh_backward(h: Matrix, g: Matrix) -> Matrix:
    """Gradient through tanh given its output h: g * (1 - h^2)."""
    _check_same_shape(h, g)
    return Matrix._wrap(h.rows, h.cols, kernels.tanh_backward(h.data, g.data))


def add_row_vector(a: Matrix, v: Vector) -> Matrix:
    if len(v) != a.cols:
        raise ShapeError(f"need length-{a.cols} row vector, got {len(v)}")
    return Matrix._wrap(
        a.rows, a.cols, kernels.add_row_vector(a.data, a.rows, a.cols, v.data)
    )


def softmax_rows(z: Matrix) -> Matrix:
    return Matrix._wrap(z.rows, z.cols, kernels.softmax_rows(z.data, z.rows, z.cols))


def vec_add(a: Vector, b: Vector) -> Vector:
    if len(a) != len(b):
        raise ShapeError(f"vector length mismatch: {len(a)} vs {len(b)}")
    return Vector._wrap(kernels.add(a.data, b.data))


def vec_sub(a: Vector, b: Vector) -> Vector:
    if len(a) != len(b):
        raise ShapeError(f"vector length mismatch: {len(a)} vs {len(b)}")
    return Vector._wrap(kernels.sub(a.data, b.data))


def vec_scale(a: Vector, c: float) -> Vector:
    return Vector._wrap(kernels.scale(a.data, c))


def seeded_gaussian(
    rows: int, cols: int, mean: float, std: float, seed: int
) -> Matrix:
    """Gaussian matrix filled row-major from a fresh SplitMix64 stream.

    Identical (seed, shape, mean, std) gives bit-identical output; the
    generator algorithm is pinned in `lorafed.rng`.
    """
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    gen = SplitMix64(seed)
    return Matrix._wrap(
        rows, cols, array("d", [gen.gauss(mean, std) for _ in range(rows * cols)])
    )


def le_bytes(data: array) -> bytes:
    """Raw little-endian f64 bytes (canonical form for digests and files)."""
    if sys.byteorder == "little":
        return data.tobytes()
    swapped = array("d", data)
    swapped.byteswap()
    return swapped.tobytes()


def same_bits(a: Matrix | Vector, b: Matrix | Vector) -> bool:
    """Bit-level equality (distinguishes -0.0 from 0.0, unlike ==)."""
    return le_bytes(a.data) == le_bytes(b.data)
