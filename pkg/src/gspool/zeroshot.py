"""Cross-batch zero-shot regularization.

A batch is split into two class-disjoint halves; a ridge map from attribute
vectors to label embeddings is fit on each half in closed form,

    A = T (Z'Z + eps I)^-1 Z'        (Z: m x b, columns z_i; T: d x b),

and each half's samples are scored with the *other* half's map against the
full label-embedding table through a softmax cross-entropy.  Everything is
differentiable in closed form; backward of the ridge solve uses
d(M^-1) = -M^-1 dM M^-1.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataFormatError
from .linalg import solve_spd


def class_disjoint_split(labels, rng: np.random.Generator):
    """Partition the batch's classes (not samples) into two halves uniformly
    at random; returns index arrays (half1, half2) with
    |classes(half1)| = ceil(C / 2)."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise DataFormatError(
            f"class_disjoint_split: need at least 2 distinct classes, got {classes.size}"
        )
    perm = rng.permutation(classes)
    take = (classes.size + 1) // 2
    mask = np.isin(labels, perm[:take])
    return np.nonzero(mask)[0], np.nonzero(~mask)[0]


def ridge_fit(Z, targets, eps_ridge: float) -> np.ndarray:
    """Closed-form Gram solve; Z is m x b with attribute vectors as columns,
    targets is d x b with label embeddings as columns.  Returns the d x m
    map A."""
    Z = np.asarray(Z, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    if Z.ndim != 2 or T.ndim != 2 or Z.shape[1] != T.shape[1]:
        raise DataFormatError(
            f"ridge_fit: Z is {Z.shape}, targets is {T.shape}; column counts must match"
        )
    if eps_ridge < 0.0:
        raise ConfigError(f"ridge_fit: eps_ridge must be >= 0, got {eps_ridge}")
    b = Z.shape[1]
    G = Z.T @ Z + eps_ridge * np.eye(b)
    # solve_spd raises on a singular Gram (eps_ridge = 0 with dependent columns)
    return T @ solve_spd(G, Z.T)


def ridge_fit_backward(Z, targets, eps_ridge: float, g_A):
    """Propagate dL/dA through the Gram solve; returns (g_Z, g_targets)."""
    Z = np.asarray(Z, dtype=np.float64)
    T = np.asarray(targets, dtype=np.float64)
    W = np.asarray(g_A, dtype=np.float64)
    b = Z.shape[1]
    G = Z.T @ Z + eps_ridge * np.eye(b)
    Ginv = solve_spd(G, np.eye(b))
    g_T = W @ Z @ Ginv                            # W Z G^-1
    K = Ginv @ Z.T @ W.T @ T @ Ginv               # G^-1 Z' W' T G^-1
    g_Z = W.T @ T @ Ginv - Z @ (K + K.T)
    return g_Z, g_T


def _softmax_ce(scores: np.ndarray, labels: np.ndarray):
    """Mean CE over rows of (b, c) scores; returns (loss, d loss / d scores)."""
    mx = scores.max(axis=1, keepdims=True)
    ex = np.exp(scores - mx)
    Zs = ex.sum(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(Zs[:, 0])
    idx = np.arange(scores.shape[0])
    loss = float(np.mean(lse - scores[idx, labels]))
    g = ex / Zs
    g[idx, labels] -= 1.0
    return loss, g / scores.shape[0]


def zsr_loss(Z_batch, labels, table, eps_ridge: float, rng: np.random.Generator):
    """Returns (loss, g_Z (m x b), g_table (d x c)).

    Z_batch holds attribute vectors as columns (m x b); table holds one
    embedding column per class id (d x c).  Labels index table columns.
    """
    Z = np.asarray(Z_batch, dtype=np.float64)
    y = np.asarray(labels)
    U = np.asarray(table, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != y.size:
        raise DataFormatError(f"zsr_loss: Z is {Z.shape} but there are {y.size} labels")
    if y.min() < 0 or y.max() >= U.shape[1]:
        raise DataFormatError("zsr_loss: label outside the embedding table")

    half1, half2 = class_disjoint_split(y, rng)
    d, c = U.shape
    b = y.size

    A = {}
    for key, idx in (("1", half1), ("2", half2)):
        A[key] = ridge_fit(Z[:, idx], U[:, y[idx]], eps_ridge)

    # cross-half predictions, assembled in batch order
    Uhat = np.zeros((d, b))
    Uhat[:, half1] = A["2"] @ Z[:, half1]
    Uhat[:, half2] = A["1"] @ Z[:, half2]

    scores = Uhat.T @ U                      # (b, c)
    loss, g_scores = _softmax_ce(scores, y)

    g_Uhat = U @ g_scores.T                  # (d, b)
    g_U = Uhat @ g_scores                    # (d, c), from the score table side

    g_Z = np.zeros_like(Z)
    for key, own, other in (("2", half1, half2), ("1", half2, half1)):
        # A[key] was fit on `other` and applied to `own`
        g_A = g_Uhat[:, own] @ Z[:, own].T
        g_Z[:, own] += A[key].T @ g_Uhat[:, own]
        g_Zf, g_Tf = ridge_fit_backward(Z[:, other], U[:, y[other]], eps_ridge, g_A)
        g_Z[:, other] += g_Zf
        np.add.at(g_U.T, y[other], g_Tf.T)   # scatter target grads per class
    return loss, g_Z, g_U


def combined_loss(l_dml: float, l_zs: float, lam: float) -> float:
    """(1 - lambda) L_DML + lambda L_ZS."""
    if not (0.0 <= lam <= 1.0):
        raise ConfigError(f"combined_loss: lambda must be in [0, 1], got {lam}")
    return (1.0 - lam) * l_dml + lam * l_zs
