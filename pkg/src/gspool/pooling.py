"""Residual-weighted sum pooling as a differentiable layer.

Forward chain per sample: clip-normalize features and prototypes to the unit
ball, build the Euclidean cost map, solve the smoothed transport problem,
then pool with weights p_j = (1/n - rho_j)/mu and read per-prototype
attribute masses z_i = (1/mu) sum_j pi_ij.  The backward chain runs the same
stations in reverse, with the transport stage handled by the closed-form
gradient in :mod:`gspool.transport`.

Raw (un-normalized) features enter the pooled sum; the normalized copies are
used only inside the cost map.  Batched variants (leading B axis, shared
prototype bank) carry the training harness; they are numerically equivalent
to the per-sample functions and tested as such.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError
from .transport import (TransportConfig, TransportSolution, solve_backward_batch,
                        solve_forward, solve_forward_batch)


# --------------------------------------------------------------------------
# clip normalization  u -> u / max(1, |u|)
# --------------------------------------------------------------------------

def clip_normalize(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    nrm = float(np.linalg.norm(u))
    return u / nrm if nrm > 1.0 else u.copy()


def clip_normalize_backward(u, g_ubar) -> np.ndarray:
    """Jacobian-transpose product: identity inside the unit ball (ties at
    |u| = 1 take the identity branch), (I - ubar ubar')/|u| outside."""
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g_ubar, dtype=np.float64)
    nrm = float(np.linalg.norm(u))
    if nrm <= 1.0:
        return g.copy()
    ubar = u / nrm
    return (g - ubar * float(ubar @ g)) / nrm


def _clip_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise clip normalization for (..., d) stacks; returns (xbar, norms)."""
    norms = np.linalg.norm(x, axis=-1)
    scale = np.maximum(norms, 1.0)
    return x / scale[..., None], norms


def _clip_rows_backward(x, norms, g_xbar) -> np.ndarray:
    over = norms > 1.0
    g = np.array(g_xbar, dtype=np.float64, copy=True)
    if np.any(over):
        xb = x[over] / norms[over][..., None]
        proj = (xb * g[over]).sum(axis=-1, keepdims=True)
        g[over] = (g[over] - xb * proj) / norms[over][..., None]
    return g


# --------------------------------------------------------------------------
# cost map  c_ij = |wbar_i - fbar_j|
# --------------------------------------------------------------------------

def cost_matrix(protos_norm, feats_norm) -> np.ndarray:
    w = np.asarray(protos_norm, dtype=np.float64)
    f = np.asarray(feats_norm, dtype=np.float64)
    if w.ndim != 2 or f.ndim != 2 or w.shape[1] != f.shape[1]:
        raise DataFormatError(
            f"cost_matrix: prototype/feature dims do not match "
            f"({w.shape} vs {f.shape})"
        )
    diff = w[:, None, :] - f[None, :, :]          # (m, n, d)
    return np.sqrt((diff ** 2).sum(axis=-1))


def cost_matrix_backward(protos_norm, feats_norm, c, g_c):
    """Gradients to the normalized inputs; zero at coincident pairs (the
    c_ij = 0 kink)."""
    w = np.asarray(protos_norm, dtype=np.float64)
    f = np.asarray(feats_norm, dtype=np.float64)
    g_c = np.asarray(g_c, dtype=np.float64)
    diff = w[:, None, :] - f[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(c > 0.0, g_c / np.where(c > 0.0, c, 1.0), 0.0)
    g_w = (scale[:, :, None] * diff).sum(axis=1)
    g_f = -(scale[:, :, None] * diff).sum(axis=0)
    return g_w, g_f


# --------------------------------------------------------------------------
# pooling and attribute heads
# --------------------------------------------------------------------------

def gsp_pool(feats, rho, mu: float, p_power: float = 1.0) -> np.ndarray:
    """p = 1: weighted sum sum_j ((1/n - rho_j)/mu) f_j.  p > 1: re-weight by
    (1 - n rho)/mu then take the element-wise power mean ((1/n) sum f^p)^(1/p)
    (re-weighted features must be non-negative; caller responsibility)."""
    f = np.asarray(feats, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if mu <= 0.0:
        raise ConfigError(f"gsp_pool: mu must be positive, got {mu}")
    if p_power < 1.0:
        raise ConfigError(f"gsp_pool: p_power must be >= 1, got {p_power}")
    n = f.shape[0]
    if p_power == 1.0:
        p = (1.0 / n - rho) / mu
        return p @ f
    y = ((1.0 - n * rho) / mu)[:, None] * f
    return ((y ** p_power).mean(axis=0)) ** (1.0 / p_power)


def gsp_pool_backward(feats, rho, mu: float, g_pooled, p_power: float = 1.0):
    """Returns (g_feats, g_rho)."""
    f = np.asarray(feats, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    g = np.asarray(g_pooled, dtype=np.float64)
    n = f.shape[0]
    if p_power == 1.0:
        p = (1.0 / n - rho) / mu
        g_f = p[:, None] * g[None, :]
        g_rho = -(f @ g) / mu
        return g_f, g_rho
    w = (1.0 - n * rho) / mu
    y = w[:, None] * f
    x = ((y ** p_power).mean(axis=0)) ** (1.0 / p_power)
    # dx_k/dy_jk = x_k^(1-p) y_jk^(p-1) / n, taken as 0 where x_k = 0
    xk = np.where(x > 0.0, x, 1.0)
    g_y = np.where(x > 0.0, (xk ** (1.0 - p_power)) * g, 0.0)[None, :] \
        * (y ** (p_power - 1.0)) / n
    g_f = w[:, None] * g_y
    g_rho = -(n / mu) * (f * g_y).sum(axis=1)
    return g_f, g_rho


def attribute_vector(plan, mu: float) -> np.ndarray:
    """z_i = (1/mu) sum_j pi_ij: normalized transported mass per prototype."""
    return np.asarray(plan, dtype=np.float64).sum(axis=1) / mu


def attribute_vector_backward(plan, mu: float, g_z) -> np.ndarray:
    g_z = np.asarray(g_z, dtype=np.float64)
    m, n = np.asarray(plan).shape
    return np.repeat(g_z[:, None] / mu, n, axis=1)


# --------------------------------------------------------------------------
# full layer
# --------------------------------------------------------------------------

@dataclass
class GspOutput:
    pooled: np.ndarray          # (d,)
    attributes: np.ndarray      # (m,)
    feats: np.ndarray           # raw features, (n, d)
    protos: np.ndarray          # raw prototypes, (m, d)
    feats_norm: np.ndarray
    protos_norm: np.ndarray
    feat_norms: np.ndarray
    proto_norms: np.ndarray
    cost: np.ndarray
    solution: TransportSolution
    p_power: float


def gsp_forward(feats, protos, cfg: TransportConfig, p_power: float = 1.0) -> GspOutput:
    feats = np.asarray(feats, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    if feats.ndim != 2 or protos.ndim != 2 or feats.shape[1] != protos.shape[1]:
        raise DataFormatError(
            f"gsp_forward: feature/prototype dims do not match "
            f"({feats.shape} vs {protos.shape})"
        )
    fbar, fn = _clip_rows(feats)
    wbar, wn = _clip_rows(protos)
    c = cost_matrix(wbar, fbar)
    sol = solve_forward(c, cfg)
    pooled = gsp_pool(feats, sol.rho, cfg.mu, p_power)
    z = attribute_vector(sol.plan, cfg.mu)
    return GspOutput(pooled=pooled, attributes=z, feats=feats, protos=protos,
                     feats_norm=fbar, protos_norm=wbar, feat_norms=fn,
                     proto_norms=wn, cost=c, solution=sol, p_power=p_power)


def gsp_backward(out: GspOutput, g_pooled, g_z):
    """Chain g_pooled/g_z back to (g_feats, g_protos)."""
    mu = out.solution.config.mu
    g_feats_direct, g_rho = gsp_pool_backward(out.feats, out.solution.rho, mu,
                                              g_pooled, out.p_power)
    g_pi = attribute_vector_backward(out.solution.plan, mu, np.asarray(g_z))
    g_c = solve_backward_batch(out.solution.rho[None], out.solution.plan[None],
                               mu, out.solution.config.epsilon,
                               g_rho[None], g_pi[None])[0]
    g_wbar, g_fbar = cost_matrix_backward(out.protos_norm, out.feats_norm,
                                          out.cost, g_c)
    g_feats = g_feats_direct + _clip_rows_backward(out.feats, out.feat_norms, g_fbar)
    g_protos = _clip_rows_backward(out.protos, out.proto_norms, g_wbar)
    return g_feats, g_protos


# --------------------------------------------------------------------------
# baselines
# --------------------------------------------------------------------------

def gap(feats) -> np.ndarray:
    return np.asarray(feats, dtype=np.float64).mean(axis=0)


def gap_backward(feats, g_pooled) -> np.ndarray:
    f = np.asarray(feats)
    return np.repeat(np.asarray(g_pooled, dtype=np.float64)[None, :] / f.shape[0],
                     f.shape[0], axis=0)


def gmp(feats) -> np.ndarray:
    return np.asarray(feats, dtype=np.float64).max(axis=0)


def gemean(feats, p: float) -> np.ndarray:
    f = np.asarray(feats, dtype=np.float64)
    if (f < 0.0).any():
        raise DataFormatError("gemean: negative features are not supported")
    if p < 1.0:
        raise ConfigError(f"gemean: p must be >= 1, got {p}")
    if p == 1.0:
        return f.mean(axis=0)
    return ((f ** p).mean(axis=0)) ** (1.0 / p)


# --------------------------------------------------------------------------
# batched layer (shared prototype bank, leading batch axis on features)
# --------------------------------------------------------------------------

@dataclass
class BatchGspOutput:
    pooled: np.ndarray          # (B, d)
    attributes: np.ndarray      # (B, m)
    feats: np.ndarray           # (B, n, d)
    protos: np.ndarray          # (m, d)
    feats_norm: np.ndarray
    protos_norm: np.ndarray
    feat_norms: np.ndarray      # (B, n)
    proto_norms: np.ndarray     # (m,)
    cost: np.ndarray            # (B, m, n)
    rho: np.ndarray             # (B, n)
    plan: np.ndarray            # (B, m, n)
    config: TransportConfig


def gsp_forward_batch(feats, protos, cfg: TransportConfig) -> BatchGspOutput:
    """p_power = 1 only: the training harness uses the plain weighted sum.

    Distances use the Gram expansion |a - b|^2 = |a|^2 + |b|^2 - 2 a.b so no
    (B, m, n, d) tensor is materialized; this loses ~1e-8 absolute accuracy
    right at the c = 0 kink, which the per-sample reference path avoids.
    """
    feats = np.asarray(feats, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    if feats.ndim != 3:
        raise DataFormatError(f"gsp_forward_batch: expected (B, n, d), got {feats.shape}")
    B, n, d = feats.shape
    fbar, fn = _clip_rows(feats)
    wbar, wn = _clip_rows(protos)
    sq = (wbar ** 2).sum(axis=1)[None, :, None] + (fbar ** 2).sum(axis=2)[:, None, :] \
        - 2.0 * np.matmul(fbar, wbar.T).transpose(0, 2, 1)   # (B, m, n)
    c = np.sqrt(np.maximum(sq, 0.0))
    rho, plan, _, _ = solve_forward_batch(c, cfg)
    p = (1.0 / n - rho) / cfg.mu                             # (B, n)
    pooled = np.einsum("bj,bjd->bd", p, feats)
    z = plan.sum(axis=2) / cfg.mu
    return BatchGspOutput(pooled=pooled, attributes=z, feats=feats, protos=protos,
                          feats_norm=fbar, protos_norm=wbar, feat_norms=fn,
                          proto_norms=wn, cost=c, rho=rho, plan=plan, config=cfg)


def gsp_backward_batch(out: BatchGspOutput, g_pooled, g_z):
    """Returns (g_feats (B,n,d), g_protos (m,d)); prototype gradients are
    summed over the batch."""
    cfg = out.config
    B, n, d = out.feats.shape
    g_pooled = np.asarray(g_pooled, dtype=np.float64)
    g_z = np.asarray(g_z, dtype=np.float64)

    p = (1.0 / n - out.rho) / cfg.mu
    g_feats_direct = p[:, :, None] * g_pooled[:, None, :]
    g_rho = -np.einsum("bjd,bd->bj", out.feats, g_pooled) / cfg.mu
    g_pi = np.broadcast_to((g_z / cfg.mu)[:, :, None], out.plan.shape)
    g_c = solve_backward_batch(out.rho, out.plan, cfg.mu, cfg.epsilon, g_rho, g_pi)

    # d c_ij / d wbar_i = (wbar_i - fbar_j) / c_ij folds into matmuls:
    # sum_j w_ij (wbar_i - fbar_j) = rowsum(w)_i wbar_i - (w @ fbar)_i
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(out.cost > 0.0, g_c / np.where(out.cost > 0.0, out.cost, 1.0), 0.0)
    row = w.sum(axis=2)                                       # (B, m)
    col = w.sum(axis=1)                                       # (B, n)
    g_wbar = row.sum(axis=0)[:, None] * out.protos_norm \
        - np.einsum("bmn,bnd->md", w, out.feats_norm)
    g_fbar = col[:, :, None] * out.feats_norm \
        - np.einsum("bmn,md->bnd", w, out.protos_norm)

    g_feats = g_feats_direct + _clip_rows_backward(out.feats, out.feat_norms, g_fbar)
    g_protos = _clip_rows_backward(out.protos, out.proto_norms, g_wbar)
    return g_feats, g_protos
