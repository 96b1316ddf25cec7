"""Sample-based metric-learning losses over a batch of embeddings.

Pairs and triples are enumerated over the full batch (no mining).  Each loss
returns (value, gradient wrt embeddings); gradients are zero at hinge
boundaries and at coincident pairs (distance kinks).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataFormatError


def pairwise_distances(batch) -> np.ndarray:
    """D_ij = |e_i - e_j|, computed from explicit differences (no Gram
    shortcut) so the kink convention and tests line up exactly."""
    e = np.asarray(batch, dtype=np.float64)
    if e.ndim != 2:
        raise DataFormatError(f"pairwise_distances: expected (b, d), got {e.shape}")
    diff = e[:, None, :] - e[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def pairwise_distances_backward(batch, dist, g_dist) -> np.ndarray:
    """Accumulate dL/dD into dL/de; zero gradient at coincident pairs."""
    e = np.asarray(batch, dtype=np.float64)
    g = np.asarray(g_dist, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(dist > 0.0, (g + g.T) / np.where(dist > 0.0, dist, 1.0), 0.0)
    # d|e_i - e_j|/de_i = (e_i - e_j)/D_ij, symmetrized over (i,j) and (j,i)
    return w.sum(axis=1)[:, None] * e - w @ e


def _pair_masks(labels) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels)
    same = y[:, None] == y[None, :]
    iu = np.triu(np.ones_like(same, dtype=bool), k=1)   # unordered pairs i < j
    return same & iu, (~same) & iu


def contrastive_c2(batch, labels, m_pos: float, m_neg: float):
    """Contrastive loss with positive margin: mean over positive pairs of
    max(0, D - m_pos) plus mean over negative pairs of max(0, m_neg - D)."""
    if not (m_neg > m_pos >= 0.0):
        raise ConfigError(f"contrastive_c2: need m_neg > m_pos >= 0, got ({m_pos}, {m_neg})")
    e = np.asarray(batch, dtype=np.float64)
    pos, neg = _pair_masks(labels)
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0:
        raise DataFormatError("contrastive_c2: batch contains no positive pairs")
    if n_neg == 0:
        raise DataFormatError("contrastive_c2: batch contains no negative pairs")

    D = pairwise_distances(e)
    pos_hinge = np.where(pos, np.maximum(0.0, D - m_pos), 0.0)
    neg_hinge = np.where(neg, np.maximum(0.0, m_neg - D), 0.0)
    loss = float(pos_hinge.sum() / n_pos + neg_hinge.sum() / n_neg)

    g_D = np.zeros_like(D)
    g_D += np.where(pos & (D > m_pos), 1.0 / n_pos, 0.0)
    g_D -= np.where(neg & (D < m_neg), 1.0 / n_neg, 0.0)
    return loss, pairwise_distances_backward(e, D, g_D)


def triplet(batch, labels, margin: float):
    """Mean over all valid (anchor, positive, negative) triples of
    max(0, D_ap - D_an + margin)."""
    if margin < 0.0:
        raise ConfigError(f"triplet: margin must be >= 0, got {margin}")
    e = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels)
    b = e.shape[0]
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)                 # positives exclude the anchor
    diff = y[:, None] != y[None, :]

    n_trip = int((same.sum(axis=1) * diff.sum(axis=1)).sum())
    if n_trip == 0:
        raise DataFormatError("triplet: batch contains no valid (a, p, n) triple")

    D = pairwise_distances(e)
    # hinge over the (a, p, n) grid
    H = D[:, :, None] - D[:, None, :] + margin    # (a, p, n)
    valid = same[:, :, None] & diff[:, None, :]
    active = valid & (H > 0.0)
    loss = float(np.where(active, H, 0.0).sum() / n_trip)

    g_D = np.zeros_like(D)
    g_D += active.sum(axis=2) / n_trip            # + for (a, p) distances
    g_D -= active.sum(axis=1) / n_trip            # - for (a, n) distances
    return loss, pairwise_distances_backward(e, D, g_D)
