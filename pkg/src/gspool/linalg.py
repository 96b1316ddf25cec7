"""Dense matrix/vector kernels and CSV round-trip I/O.

Matrices are C-contiguous float64 2-D numpy arrays (row-major), vectors are
1-D float64 arrays; everything downstream assumes 64-bit arithmetic (the
transport gradient checks at 1e-4 are hopeless in 32-bit).  ``matmul`` is
backed by numpy; ``solve_spd`` is a hand-rolled Cholesky so a failing pivot
can be reported by index.
"""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError, NumericalFailure


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DataFormatError(f"{name}: expected a 2-D array, got ndim={a.ndim}")
    return a


def as_vector(a, name: str = "vector") -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise DataFormatError(f"{name}: expected a 1-D array, got ndim={a.ndim}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise DataFormatError(
            f"matmul: inner dimensions differ, lhs is {a.shape[0]}x{a.shape[1]} "
            f"but rhs is {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def cholesky_spd(m) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric positive definite
    matrix.  Raises ``NumericalFailure`` naming the pivot that fails."""
    m = as_matrix(m, "cholesky")
    n, cols = m.shape
    if n != cols:
        raise DataFormatError(f"cholesky: matrix must be square, got {n}x{cols}")
    scale = np.abs(m).max()
    if scale > 0 and np.abs(m - m.T).max() > 1e-8 * scale:
        raise DataFormatError("cholesky: matrix is not symmetric")
    L = np.zeros_like(m)
    for j in range(n):
        d = m[j, j] - L[j, :j] @ L[j, :j]
        if not np.isfinite(d) or d <= 0.0:
            raise NumericalFailure(
                f"solve_spd: matrix is not positive definite, pivot {j} = {d:.6g}"
            )
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (m[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_spd(m, rhs) -> np.ndarray:
    """Solve m @ x = rhs for symmetric positive definite m via Cholesky."""
    rhs_arr = np.ascontiguousarray(rhs, dtype=np.float64)
    flat = rhs_arr.ndim == 1
    if flat:
        rhs_arr = rhs_arr[:, None]
    L = cholesky_spd(m)
    if L.shape[0] != rhs_arr.shape[0]:
        raise DataFormatError(
            f"solve_spd: rhs has {rhs_arr.shape[0]} rows, matrix is {L.shape[0]}x{L.shape[0]}"
        )
    # forward/back substitution
    y = np.zeros_like(rhs_arr)
    for i in range(L.shape[0]):
        y[i] = (rhs_arr[i] - L[i, :i] @ y[:i]) / L[i, i]
    x = np.zeros_like(rhs_arr)
    for i in range(L.shape[0] - 1, -1, -1):
        x[i] = (y[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x[:, 0] if flat else x


def write_matrix_csv(path, a) -> None:
    """Comma-separated, one matrix row per line, '.' decimal, no header.
    Floats use repr so a round-trip reproduces values exactly."""
    a = as_matrix(a, "write_matrix_csv")
    with open(path, "w", encoding="ascii") as fh:
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_matrix_csv(path) -> np.ndarray:
    rows: list[list[float]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(rows[0])} columns, "
                    f"got {len(rows[-1])}"
                )
    if not rows:
        raise DataFormatError(f"{path}: empty file, expected at least one row")
    return np.array(rows, dtype=np.float64)


def write_vector_csv(path, v) -> None:
    """One value per line (a single-column matrix)."""
    v = as_vector(v, "write_vector_csv")
    write_matrix_csv(path, v[:, None])


def read_vector_csv(path) -> np.ndarray:
    """Accepts a single column or a single row."""
    a = read_matrix_csv(path)
    if a.shape[0] == 1 or a.shape[1] == 1:
        return a.reshape(-1)
    raise DataFormatError(
        f"{path}: expected a single row or column, got shape {a.shape[0]}x{a.shape[1]}"
    )
