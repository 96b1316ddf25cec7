"""Seeded oracle battery behind the `gradcheck` CLI command.

Each check compares an analytic gradient against an independent route
(implicit-function oracle or central finite differences) on deterministic
random instances and reports the worst relative error.  Agreement is judged
with |a - b| <= atol + rtol * max(|a|, |b|) entry-wise, so exact zeros
(the 1x1 transport Jacobian) do not blow up the relative measure.
"""

from __future__ import annotations

import numpy as np

from .losses import contrastive_c2, pairwise_distances, pairwise_distances_backward, triplet
from .pooling import (clip_normalize, clip_normalize_backward, cost_matrix,
                      cost_matrix_backward, gsp_backward, gsp_forward)
from .transport import (TransportConfig, ift_gradient_oracle, solve_backward,
                        solve_forward)
from .zeroshot import zsr_loss

FD_STEP = 1e-6


def max_mismatch(a, b, rtol: float, atol: float) -> float:
    """Worst entry-wise violation ratio: 1.0 means exactly at tolerance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = atol + rtol * np.maximum(np.abs(a), np.abs(b))
    return float((np.abs(a - b) / denom).max())


def fd_gradient(fun, x, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fun(x)
        flat[i] = orig - h
        dn = fun(x)
        flat[i] = orig
        gf[i] = (up - dn) / (2.0 * h)
    return g


def _transport_instance(seed: int, m: int, n: int, mu=0.3, eps=5.0):
    rng = np.random.default_rng([41, seed])
    c = rng.uniform(0.1, 2.0, size=(m, n))
    g_rho = rng.normal(size=n)
    g_pi = rng.normal(size=(m, n))
    return c, g_rho, g_pi, TransportConfig(mu=mu, epsilon=eps, max_iters=2000)


def check_transport_closed_vs_ift(seed: int, m: int, n: int) -> float:
    c, g_rho, g_pi, cfg = _transport_instance(seed, m, n)
    sol = solve_forward(c, cfg)
    a = solve_backward(sol, g_rho, g_pi)
    b = ift_gradient_oracle(c, sol, g_rho, g_pi, cfg.epsilon)
    return max_mismatch(a, b, rtol=1e-8, atol=1e-12)


def check_transport_closed_vs_fd(seed: int, m: int, n: int) -> float:
    c, g_rho, g_pi, cfg = _transport_instance(seed, m, n)
    sol = solve_forward(c, cfg)
    a = solve_backward(sol, g_rho, g_pi)

    def loss(cm):
        s = solve_forward(cm, cfg)
        return float(g_rho @ s.rho + (g_pi * s.plan).sum())

    return max_mismatch(a, fd_gradient(loss, c.copy()), rtol=1e-4, atol=1e-8)


def _gsp_instance(seed: int, m=2, n=4, d=3):
    rng = np.random.default_rng([42, seed])
    # keep row norms away from the unit-sphere kink of clip normalization
    while True:
        feats = rng.normal(0.0, 0.8, size=(n, d))
        protos = rng.normal(0.0, 0.8, size=(m, d))
        norms = np.concatenate([np.linalg.norm(feats, axis=1),
                                np.linalg.norm(protos, axis=1)])
        if np.abs(norms - 1.0).min() > 5e-2:
            break
    g_pooled = rng.normal(size=d)
    g_z = rng.normal(size=m)
    return feats, protos, g_pooled, g_z, TransportConfig(mu=0.3, epsilon=5.0,
                                                         max_iters=2000)


def check_gsp_chain_vs_fd(seed: int) -> float:
    feats, protos, g_pooled, g_z, cfg = _gsp_instance(seed)
    out = gsp_forward(feats, protos, cfg)
    g_f, g_w = gsp_backward(out, g_pooled, g_z)

    def loss_f(fm):
        o = gsp_forward(fm, protos, cfg)
        return float(g_pooled @ o.pooled + g_z @ o.attributes)

    def loss_w(wm):
        o = gsp_forward(feats, wm, cfg)
        return float(g_pooled @ o.pooled + g_z @ o.attributes)

    err_f = max_mismatch(g_f, fd_gradient(loss_f, feats.copy()), rtol=1e-3, atol=1e-8)
    err_w = max_mismatch(g_w, fd_gradient(loss_w, protos.copy()), rtol=1e-3, atol=1e-8)
    return max(err_f, err_w)


def check_zsr_vs_fd(seed: int, n_classes=4, per_class=4, m=6, d=3) -> float:
    rng = np.random.default_rng([43, seed])
    b = n_classes * per_class
    Z = rng.uniform(0.05, 1.0, size=(m, b))
    labels = np.repeat(np.arange(n_classes), per_class)
    table = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, n_classes))
    split_seed = int(rng.integers(0, 2 ** 31))

    _, g_Z, g_U = zsr_loss(Z, labels, table, 0.05,
                           np.random.default_rng(split_seed))

    def loss_Z(Zm):
        l, _, _ = zsr_loss(Zm, labels, table, 0.05, np.random.default_rng(split_seed))
        return l

    def loss_U(Um):
        l, _, _ = zsr_loss(Z, labels, Um, 0.05, np.random.default_rng(split_seed))
        return l

    err_Z = max_mismatch(g_Z, fd_gradient(loss_Z, Z.copy()), rtol=1e-4, atol=1e-9)
    err_U = max_mismatch(g_U, fd_gradient(loss_U, table.copy()), rtol=1e-4, atol=1e-9)
    return max(err_Z, err_U)


def check_local_ops_vs_fd(seed: int) -> float:
    rng = np.random.default_rng([44, seed])
    errs = []

    u = rng.normal(0.0, 1.5, size=5)
    if abs(np.linalg.norm(u) - 1.0) < 5e-2:
        u = u * 1.3
    g_out = rng.normal(size=5)
    a = clip_normalize_backward(u, g_out)
    b = fd_gradient(lambda x: float(g_out @ clip_normalize(x)), u.copy())
    errs.append(max_mismatch(a, b, rtol=1e-6, atol=1e-10))

    w = rng.normal(0.0, 0.7, size=(4, 3))
    f = rng.normal(0.0, 0.7, size=(6, 3))
    g_c = rng.normal(size=(4, 6))
    c = cost_matrix(w, f)
    g_w, g_f = cost_matrix_backward(w, f, c, g_c)
    b_w = fd_gradient(lambda x: float((g_c * cost_matrix(x, f)).sum()), w.copy())
    b_f = fd_gradient(lambda x: float((g_c * cost_matrix(w, x)).sum()), f.copy())
    errs.append(max_mismatch(g_w, b_w, rtol=1e-6, atol=1e-10))
    errs.append(max_mismatch(g_f, b_f, rtol=1e-6, atol=1e-10))
    return max(errs)


def check_losses_vs_fd(seed: int) -> float:
    rng = np.random.default_rng([45, seed])
    emb = rng.normal(size=(8, 3))
    labels = np.repeat(np.arange(4), 2)
    errs = []

    D = pairwise_distances(emb)
    g_D = rng.normal(size=D.shape)
    a = pairwise_distances_backward(emb, D, g_D)
    b = fd_gradient(lambda x: float((g_D * pairwise_distances(x)).sum()), emb.copy())
    errs.append(max_mismatch(a, b, rtol=1e-6, atol=1e-9))

    _, g1 = contrastive_c2(emb, labels, 0.0, 0.3841)
    b1 = fd_gradient(lambda x: contrastive_c2(x, labels, 0.0, 0.3841)[0], emb.copy())
    errs.append(max_mismatch(g1, b1, rtol=1e-5, atol=1e-9))

    _, g2 = triplet(emb, labels, 0.1)
    b2 = fd_gradient(lambda x: triplet(x, labels, 0.1)[0], emb.copy())
    errs.append(max_mismatch(g2, b2, rtol=1e-5, atol=1e-9))
    return max(errs)


def run_battery(seed: int = 0, sizes=((3, 5), (1, 1), (8, 16)),
                tolerance_scale: float = 1.0) -> list[dict]:
    """Run every check; `tolerance_scale` multiplies each check's built-in
    tolerance (a scale of 1e-8 will make healthy finite differences fail,
    which is the intended smoke test of the harness itself)."""
    rows = []

    def add(name, detail, ratio):
        # ratio is the worst |a-b| / (atol + rtol max(|a|,|b|)) at scale 1
        rows.append({
            "check": name,
            "detail": detail,
            "violation_ratio": float(ratio),
            "tolerance_scale": tolerance_scale,
            "passed": bool(ratio <= tolerance_scale),
        })

    for i, (m, n) in enumerate(sizes):
        add("transport_closed_vs_ift", f"m={m} n={n} seed={seed + i}",
            check_transport_closed_vs_ift(seed + i, m, n))
        add("transport_closed_vs_fd", f"m={m} n={n} seed={seed + i}",
            check_transport_closed_vs_fd(seed + i, m, n))
    for i in range(3):
        add("gsp_chain_vs_fd", f"seed={seed + i}", check_gsp_chain_vs_fd(seed + i))
        add("zsr_vs_fd", f"seed={seed + i}", check_zsr_vs_fd(seed + i))
    add("local_ops_vs_fd", f"seed={seed}", check_local_ops_vs_fd(seed))
    add("losses_vs_fd", f"seed={seed}", check_losses_vs_fd(seed))
    return rows
