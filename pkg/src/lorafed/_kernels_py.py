"""Pure-Python dense kernels.

Reference implementation of the kernel contract; `_kernels.pyx` is the
compiled twin and must produce bit-identical results. The contract that
makes that possible:

* matrices are `array('d')` buffers in row-major order, f64 throughout;
* every reduction accumulates in a fixed order — ascending k for matmul,
  ascending row index for column reductions, ascending flat index for
  whole-buffer reductions;
* transcendentals (exp, log, tanh, sqrt) come from the platform libm in
  both backends.

Skipping a zero multiplier in matmul is an exact no-op on the accumulator
(finite inputs, accumulators never hold -0.0), so the sparse-friendly
loop below still matches the compiled dense loop bit-for-bit.
"""

from __future__ import annotations

import math
from array import array


def matmul(a, ar: int, ac: int, b, br: int, bc: int):
    out = [0.0] * (ar * bc)
    for i in range(ar):
        ibase = i * ac
        obase = i * bc
        row = out[obase : obase + bc]
        for k in range(ac):
            aik = a[ibase + k]
            if aik != 0.0:
                kbase = k * bc
                row = [acc + aik * x for acc, x in zip(row, b[kbase : kbase + bc])]
        out[obase : obase + bc] = row
    return array("d", out)


def transpose(a, ar: int, ac: int):
    out = array("d", bytes(8 * ar * ac))
    for i in range(ar):
        ibase = i * ac
        for j in range(ac):
            out[j * ar + i] = a[ibase + j]
    return out


def add(a, b):
    return array("d", [x + y for x, y in zip(a, b)])


def sub(a, b):
    return array("d", [x - y for x, y in zip(a, b)])


def scale(a, c: float):
    return array("d", [x * c for x in a])


def hadamard(a, b):
    return array("d", [x * y for x, y in zip(a, b)])


def scale_columns(a, ar: int, ac: int, s):
    out = array("d", bytes(8 * ar * ac))
    for i in range(ar):
        ibase = i * ac
        for j in range(ac):
            out[ibase + j] = a[ibase + j] * s[j]
    return out


def column_norms(a, ar: int, ac: int):
    sums = [0.0] * ac
    for i in range(ar):
        ibase = i * ac
        sums = [acc + v * v for acc, v in zip(sums, a[ibase : ibase + ac])]
    return array("d", [math.sqrt(s) for s in sums])


def column_dots(a, b, ar: int, ac: int):
    sums = [0.0] * ac
    for i in range(ar):
        ibase = i * ac
        sums = [
            acc + x * y
            for acc, x, y in zip(sums, a[ibase : ibase + ac], b[ibase : ibase + ac])
        ]
    return array("d", sums)


def col_sums(a, ar: int, ac: int):
    sums = [0.0] * ac
    for i in range(ar):
        ibase = i * ac
        sums = [acc + v for acc, v in zip(sums, a[ibase : ibase + ac])]
    return array("d", sums)


def frobenius_sq(a) -> float:
    s = 0.0
    for v in a:
        s += v * v
    return s


def dot(a, b) -> float:
    s = 0.0
    for x, y in zip(a, b):
        s += x * y
    return s


def tanh_map(a):
    return array("d", [math.tanh(v) for v in a])


def tanh_backward(h, g):
    return array("d", [gv * (1.0 - hv * hv) for hv, gv in zip(h, g)])


def add_row_vector(a, ar: int, ac: int, v):
    out = array("d", bytes(8 * ar * ac))
    for i in range(ar):
        ibase = i * ac
        for j in range(ac):
            out[ibase + j] = a[ibase + j] + v[j]
    return out


def softmax_rows(z, zr: int, zc: int):
    out = array("d", bytes(8 * zr * zc))
    for i in range(zr):
        ibase = i * zc
        m = z[ibase]
        for j in range(1, zc):
            v = z[ibase + j]
            if v > m:
                m = v
        s = 0.0
        for j in range(zc):
            e = math.exp(z[ibase + j] - m)
            out[ibase + j] = e
            s += e
        for j in range(zc):
            out[ibase + j] /= s
    return out
