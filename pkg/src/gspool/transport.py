"""Entropy-smoothed partial transport: forward solver, closed-form backward,
and two independent oracles (exact LP, implicit-function-theorem gradient).

The primal problem moves a fixed fraction mu of uniformly distributed feature
mass onto prototypes at cost <c, pi>, keeping the remainder as per-feature
residuals rho (column j: rho_j + sum_i pi_ij = 1/n; total: sum pi = mu).
Entropy smoothing with coefficient 1/epsilon makes the solution unique and
reachable by an alternating-scaling iteration in a single scalar dual t:

    rho <- (1/n) / (1 + t * colsum(exp(-eps c)))        (element-wise)
    t   <- mu / <colsum(exp(-eps c)), rho>

with t(0) = 1, and pi = t * exp(-eps c) * Diag(rho) on exit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, DegenerateGradientError, NumericalFailure

# exp underflow guard: entries of eps*c above this would flush exp to 0
MAX_EXPONENT = 700.0

# backward denominator guard: |1 - mu - n rho'rho| below this is degenerate
DENOM_GUARD = 1e-10

# instrumentation: number of instances solved since import (or last reset);
# used by tests to prove the transport machinery stays cold on GAP paths
solve_count = 0


@dataclass(frozen=True)
class TransportConfig:
    mu: float
    epsilon: float
    max_iters: int = 100
    tol: float = 0.0  # 0 disables early exit; positive enables it

    def validate(self) -> None:
        if not (0.0 < self.mu <= 1.0):
            raise ConfigError(f"mu must be in (0, 1], got {self.mu}")
        if not (self.epsilon > 0.0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0.0:
            raise ConfigError(f"tol must be >= 0, got {self.tol}")


@dataclass
class TransportSolution:
    rho: np.ndarray            # (n,) residual weights, each in [0, 1/n]
    plan: np.ndarray           # (m, n) transport plan pi
    t: float                   # scalar dual; +inf in the mu=1 limit
    iters_run: int
    config: TransportConfig = field(repr=False)

    @property
    def pooling_weights(self) -> np.ndarray:
        return (1.0 / self.rho.size - self.rho) / self.config.mu


def _check_cost(c: np.ndarray, epsilon: float) -> np.ndarray:
    c = np.ascontiguousarray(c, dtype=np.float64)
    if c.ndim != 2:
        raise DataFormatError(f"cost matrix must be 2-D, got ndim={c.ndim}")
    if not np.all(np.isfinite(c)):
        raise DataFormatError("cost matrix has non-finite entries")
    if (c < 0.0).any():
        raise DataFormatError("cost matrix has negative entries")
    if c.size and epsilon * float(c.max()) > MAX_EXPONENT:
        raise ConfigError(
            f"epsilon * max(cost) = {epsilon * float(c.max()):.3g} exceeds "
            f"{MAX_EXPONENT:.0f}; exp(-eps c) would underflow to zero"
        )
    return c


def solve_forward_batch(c: np.ndarray, cfg: TransportConfig):
    """Solve a batch of instances sharing one config.

    c has shape (B, m, n).  Returns (rho (B,n), plan (B,m,n), t (B,),
    iters_run).  Early exit (tol > 0) applies when every instance in the
    batch has converged.
    """
    global solve_count
    cfg.validate()
    c = np.ascontiguousarray(c, dtype=np.float64)
    if c.ndim != 3:
        raise DataFormatError(f"batched cost must be 3-D, got ndim={c.ndim}")
    _check_cost(c.reshape(-1, c.shape[-1]), cfg.epsilon)
    B, m, n = c.shape
    solve_count += B

    kappa = np.exp(-cfg.epsilon * c)          # (B, m, n)
    s = kappa.sum(axis=1)                     # (B, n) column sums

    if cfg.mu == 1.0:
        # Degenerate boundary: summing the column constraints gives
        # sum(rho) = 1 - mu = 0, so rho = 0 exactly, and the smoothed problem
        # separates per column with solution pi_ij = (1/n) kappa_ij / s_j.
        # The iteration only reaches this point at O(1/k), so the limit is
        # returned analytically.
        rho = np.zeros((B, n))
        plan = kappa / (n * s[:, None, :])
        t = np.full(B, np.inf)
        return rho, plan, t, 0

    inv_n = 1.0 / n
    t = np.ones(B)
    rho = np.full((B, n), inv_n)
    rho_prev = np.empty_like(rho)
    buf = np.empty_like(rho)
    iters = 0
    early_exit = cfg.tol > 0.0
    for it in range(cfg.max_iters):
        # rho stays in (0, 1/n] by construction while 0 < t < inf and
        # 0 <= s < inf (s is validated up front), so monitoring t per
        # iteration enforces the iterate bound without (B, n) reductions
        rho_prev, rho = rho, rho_prev
        np.multiply(t[:, None], s, out=buf)
        buf += 1.0
        np.divide(inv_n, buf, out=rho)
        np.multiply(s, rho, out=buf)
        t = cfg.mu / buf.sum(axis=1)
        iters = it + 1
        if not np.isfinite(t).all() or (t <= 0.0).any():
            raise NumericalFailure(f"solve_forward: degenerate dual at iteration {iters}")
        if early_exit and np.abs(rho - rho_prev).max() < cfg.tol:
            break
    if (rho <= 0.0).any() or (rho > inv_n * (1.0 + 1e-12)).any():
        raise NumericalFailure("solve_forward: rho left (0, 1/n]")
    plan = t[:, None, None] * kappa * rho[:, None, :]

    mass = plan.sum(axis=(1, 2))
    if np.abs(mass - cfg.mu).max() > 1e-9:
        raise NumericalFailure(
            f"solve_forward: transported mass off by {np.abs(mass - cfg.mu).max():.3g}"
        )
    return rho, plan, t, iters


def solve_forward(c, cfg: TransportConfig) -> TransportSolution:
    """Solve one instance; see module docstring for the iteration."""
    c = _check_cost(np.asarray(c), cfg.epsilon)
    rho, plan, t, iters = solve_forward_batch(c[None], cfg)
    return TransportSolution(rho=rho[0], plan=plan[0], t=float(t[0]),
                             iters_run=iters, config=cfg)


def solve_trace(c, cfg: TransportConfig) -> list[TransportSolution]:
    """Per-iteration snapshots (rho, pi, t) for k = 1..max_iters.  Test/
    diagnostic helper; the plan at step k uses the step-k dual."""
    cfg.validate()
    if cfg.mu == 1.0:
        raise ConfigError("solve_trace: mu = 1 is solved analytically, no iterates")
    c = _check_cost(np.asarray(c), cfg.epsilon)
    m, n = c.shape
    kappa = np.exp(-cfg.epsilon * c)
    s = kappa.sum(axis=0)
    t = 1.0
    out = []
    for it in range(cfg.max_iters):
        rho = (1.0 / n) / (1.0 + t * s)
        t = cfg.mu / float(s @ rho)
        out.append(TransportSolution(rho=rho.copy(), plan=t * kappa * rho[None, :],
                                     t=t, iters_run=it + 1, config=cfg))
    return out


def solve_backward_batch(rho, plan, mu, epsilon, g_rho, g_pi) -> np.ndarray:
    """Closed-form dL/dc for a batch: rho (B,n), plan (B,m,n), upstream
    g_rho (B,n) and g_pi (B,m,n).  Returns (B,m,n)."""
    if mu >= 1.0:
        raise DegenerateGradientError(
            "transport backward is undefined at mu = 1 (rho = 0 makes the "
            "denominator 1 - mu - n rho'rho exactly zero)"
        )
    rho = np.asarray(rho, dtype=np.float64)
    plan = np.asarray(plan, dtype=np.float64)
    g_rho = np.asarray(g_rho, dtype=np.float64)
    g_pi = np.asarray(g_pi, dtype=np.float64)
    B, m, n = plan.shape

    pg = plan * g_pi                                        # (B, m, n)
    q = rho * g_rho + pg.sum(axis=1)                        # (B, n)
    eta = (rho * g_rho).sum(axis=1) - n * np.einsum("bj,bj->b", q, rho)
    denom = 1.0 - mu - n * np.einsum("bj,bj->b", rho, rho)  # (B,)
    if np.abs(denom).min() < DENOM_GUARD:
        raise DegenerateGradientError(
            f"transport backward: denominator 1 - mu - n rho'rho = "
            f"{denom[np.abs(denom).argmin()]:.3g} is below the "
            f"{DENOM_GUARD:.0e} guard (degenerate instance)"
        )
    v = q - (eta / denom)[:, None] * rho                    # (B, n)
    return -epsilon * (pg - n * plan * v[:, None, :])


def solve_backward(sol: TransportSolution, g_rho, g_pi) -> np.ndarray:
    """dL/dc via the matrix-inversion-free rearrangement of the implicit
    gradient; requires a converged solution (caller contract) and mu < 1."""
    g_rho = np.asarray(g_rho, dtype=np.float64)
    g_pi = np.asarray(g_pi, dtype=np.float64)
    if g_rho.shape != sol.rho.shape or g_pi.shape != sol.plan.shape:
        raise DataFormatError(
            f"solve_backward: gradient shapes {g_rho.shape}/{g_pi.shape} do not "
            f"match solution shapes {sol.rho.shape}/{sol.plan.shape}"
        )
    out = solve_backward_batch(sol.rho[None], sol.plan[None], sol.config.mu,
                               sol.config.epsilon, g_rho[None], g_pi[None])
    return out[0]


def smoothed_objective(c, sol: TransportSolution, epsilon: float) -> float:
    """<c, pi> + (1/eps) (sum pi log pi + sum rho log rho), with 0 log 0 = 0."""
    c = np.asarray(c, dtype=np.float64)
    if (sol.plan < 0).any() or (sol.rho < 0).any():
        raise DataFormatError("smoothed_objective: negative entries in (rho, pi)")

    def xlogx(u):
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = u[pos] * np.log(u[pos])
        return out.sum()

    return float((c * sol.plan).sum() + (xlogx(sol.plan) + xlogx(sol.rho)) / epsilon)


def transport_cost(c, sol: TransportSolution) -> float:
    """Linear part <c, pi> of the objective (the quantity compared with the
    exact LP optimum)."""
    return float((np.asarray(c, dtype=np.float64) * sol.plan).sum())


# ---------------------------------------------------------------------------
# Exact LP oracle: dense two-phase simplex with Bland's rule.
# ---------------------------------------------------------------------------

def _simplex(A: np.ndarray, b: np.ndarray, cost: np.ndarray):
    """min cost'x s.t. Ax = b, x >= 0 (b >= 0, A full row rank).

    Textbook dense tableau, two phases, Bland's anti-cycling rule.  Sized for
    desk-scale instances only.
    """
    rows, cols = A.shape
    # phase 1: artificial basis
    T = np.zeros((rows + 1, cols + rows + 1))
    T[:rows, :cols] = A
    T[:rows, cols:cols + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[rows, :cols] = -A.sum(axis=0)           # reduced costs of sum of artificials
    T[rows, -1] = -b.sum()
    basis = list(range(cols, cols + rows))

    def pivot(T, basis, allowed_cols):
        while True:
            enter = -1
            for j in allowed_cols:            # Bland: first improving index
                if T[-1, j] < -1e-11:
                    enter = j
                    break
            if enter < 0:
                return True
            ratios = []
            for i in range(rows):
                if T[i, enter] > 1e-11:
                    ratios.append((T[i, -1] / T[i, enter], basis[i], i))
            if not ratios:
                return False                  # unbounded (cannot happen here)
            ratios.sort(key=lambda r: (r[0], r[1]))  # Bland: lowest basis index on ties
            leave = ratios[0][2]
            piv = T[leave, enter]
            T[leave] /= piv
            for i in range(rows + 1):
                if i != leave and T[i, enter] != 0.0:
                    T[i] -= T[i, enter] * T[leave]
            basis[leave] = enter

    pivot(T, basis, range(cols))
    if T[-1, -1] < -1e-8:
        raise NumericalFailure("simplex: phase 1 ended infeasible")
    # drive artificials out of the basis where possible
    for i in range(rows):
        if basis[i] >= cols:
            for j in range(cols):
                if abs(T[i, j]) > 1e-9:
                    piv = T[i, j]
                    T[i] /= piv
                    for r in range(rows + 1):
                        if r != i and T[r, j] != 0.0:
                            T[r] -= T[r, j] * T[i]
                    basis[i] = j
                    break

    # phase 2
    T2 = np.zeros((rows + 1, cols + 1))
    T2[:rows, :cols] = T[:rows, :cols]
    T2[:rows, -1] = T[:rows, -1]
    T2[rows, :cols] = cost
    for i, bi in enumerate(basis):
        if bi < cols:
            T2[rows] -= cost[bi] * T2[i]
    if not pivot(T2, basis, range(cols)):
        raise NumericalFailure("simplex: unbounded phase 2")

    x = np.zeros(cols)
    for i, bi in enumerate(basis):
        if bi < cols:
            x[bi] = T2[i, -1]
    return float(cost @ x), x


def lp_oracle(c, mu: float):
    """Exact optimum of the unsmoothed problem, via the compact form that
    absorbs rho as an extra zero-cost row.  Returns (objective, rho, plan);
    the vertex is one of possibly many optima, so callers should compare
    objectives only.
    """
    c = np.ascontiguousarray(c, dtype=np.float64)
    if c.ndim != 2:
        raise DataFormatError("lp_oracle: cost matrix must be 2-D")
    m, n = c.shape
    if m > 16 or n > 16:
        raise ConfigError(f"lp_oracle: sized for m, n <= 16, got {m}x{n}")
    if not (0.0 < mu <= 1.0):
        raise ConfigError(f"lp_oracle: mu must be in (0, 1], got {mu}")

    N = (m + 1) * n
    A = np.zeros((n + 1, N))
    for j in range(n):
        A[j, j] = 1.0
        for i in range(m):
            A[j, n + i * n + j] = 1.0
    A[n, n:] = 1.0
    b = np.concatenate([np.full(n, 1.0 / n), [mu]])
    cost = np.concatenate([np.zeros(n), c.reshape(-1)])

    obj, x = _simplex(A, b, cost)
    return obj, x[:n].copy(), x[n:].reshape(m, n).copy()


def ift_gradient_oracle(c, sol: TransportSolution, g_rho, g_pi, epsilon: float) -> np.ndarray:
    """dL/dc through the general implicit-function route,

        dx/dc = -eps * sel (Diag(x) - Diag(x) A' Hinv A Diag(x)),

    with H = A Diag(x) A' inverted by the closed-form block formula
    (k = 1 - mu - n rho'rho, rhat = 1 - n rho).  Dense and slow on purpose:
    it exists purely as an independent check of solve_backward.
    """
    c = np.asarray(c, dtype=np.float64)
    m, n = sol.plan.shape
    mu = sol.config.mu
    if mu >= 1.0:
        raise DegenerateGradientError("ift_gradient_oracle: undefined at mu = 1")
    rho = sol.rho
    k = 1.0 - mu - n * float(rho @ rho)
    if abs(k) < DENOM_GUARD:
        raise DegenerateGradientError(
            f"ift_gradient_oracle: block-inverse denominator {k:.3g} below guard"
        )

    N = (m + 1) * n
    x = np.concatenate([rho, sol.plan.reshape(-1)])
    A = np.zeros((n + 1, N))
    for j in range(n):
        A[j, j] = 1.0
        for i in range(m):
            A[j, n + i * n + j] = 1.0
    A[n, n:] = 1.0

    rhat = 1.0 - n * rho
    Hinv = np.zeros((n + 1, n + 1))
    Hinv[:n, :n] = n * np.eye(n) + np.outer(rhat, rhat) / k
    Hinv[:n, n] = -rhat / k
    Hinv[n, :n] = -rhat / k
    Hinv[n, n] = 1.0 / k

    D = np.diag(x)
    J = -epsilon * (D - D @ A.T @ Hinv @ A @ D)   # symmetric (m+1)n square
    g_x = np.concatenate([np.asarray(g_rho, dtype=np.float64),
                          np.asarray(g_pi, dtype=np.float64).reshape(-1)])
    return (J @ g_x)[n:].reshape(m, n)
