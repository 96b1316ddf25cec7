import numpy as np
import pytest

from gspool.errors import DataFormatError, NumericalFailure
from gspool.linalg import (matmul, read_matrix_csv, read_vector_csv, solve_spd,
                           write_matrix_csv, write_vector_csv)


def naive_matmul(a, b):
    # triple-loop reference, on purpose
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        assert np.array_equal(matmul(np.eye(2), [[3.0], [4.0]]), [[3.0], [4.0]])

    def test_dot_product(self):
        assert matmul([[1.0, 2.0]], [[3.0], [4.0]])[0, 0] == 11.0

    def test_against_triple_loop(self, rng):
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        assert np.allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-13, atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DataFormatError, match="inner dimensions"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self, rng):
        for _ in range(10):
            a = rng.normal(size=(4, 5))
            b = rng.normal(size=(5, 6))
            c = rng.normal(size=(6, 3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.allclose(left, right, rtol=1e-9)


class TestSolveSpd:
    def test_identity(self, rng):
        b = rng.normal(size=(3, 2))
        assert np.allclose(solve_spd(np.eye(3), b), b)

    def test_diagonal(self):
        x = solve_spd([[2.0, 0.0], [0.0, 4.0]], [[2.0], [8.0]])
        assert np.allclose(x, [[1.0], [2.0]])

    def test_random_spd_residual(self, rng):
        a = rng.normal(size=(6, 6))
        m = a.T @ a + np.eye(6)
        rhs = rng.normal(size=(6, 2))
        x = solve_spd(m, rhs)
        resid = np.linalg.norm(m @ x - rhs) / np.linalg.norm(rhs)
        assert resid <= 1e-10

    def test_recovers_solution(self, rng):
        # conditioning up to ~1e6
        for cond in (1.0, 1e3, 1e6):
            q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
            d = np.geomspace(1.0, cond, 5)
            m = q @ np.diag(d) @ q.T
            x_true = rng.normal(size=5)
            x = solve_spd(m, m @ x_true)
            assert np.linalg.norm(x - x_true) / np.linalg.norm(x_true) <= 1e-8

    def test_non_spd_names_pivot(self):
        with pytest.raises(NumericalFailure, match="pivot 1"):
            solve_spd([[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])

    def test_asymmetric_rejected(self):
        with pytest.raises(DataFormatError, match="symmetric"):
            solve_spd([[1.0, 0.5], [0.0, 1.0]], [1.0, 1.0])


class TestCsv:
    def test_matrix_round_trip(self, rng, tmp_path):
        a = rng.normal(size=(4, 3)) * 10.0 ** rng.integers(-8, 8, size=(4, 3))
        path = tmp_path / "m.csv"
        write_matrix_csv(path, a)
        assert np.array_equal(read_matrix_csv(path), a)  # bit-exact

    def test_vector_round_trip(self, rng, tmp_path):
        v = rng.normal(size=7)
        path = tmp_path / "v.csv"
        write_vector_csv(path, v)
        assert np.array_equal(read_vector_csv(path), v)

    def test_single_row_vector(self, tmp_path):
        path = tmp_path / "row.csv"
        path.write_text("1.0,2.0,3.0\n")
        assert np.array_equal(read_vector_csv(path), [1.0, 2.0, 3.0])

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n1.0,oops\n")
        with pytest.raises(DataFormatError, match="line 2"):
            read_matrix_csv(path)

    def test_ragged_rows_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("1.0,2.0\n3.0\n")
        with pytest.raises(DataFormatError, match="line 2"):
            read_matrix_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataFormatError, match="empty"):
            read_matrix_csv(path)
