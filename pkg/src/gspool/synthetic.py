"""Desk-scale synthetic study: classes defined over trainable tokens.

Each of 16 classes owns 4 trainable tokens; 4 further tokens are shared by
all classes as background.  A sample is a 50-long feature collection drawn
from its class tokens and the shared tokens according to a mixing ratio
drawn from N(0.5, 0.1).  Tokens, prototypes and label embeddings are trained
jointly through the pooling layer (GAP baseline or the transport layer) with
a contrastive loss, optionally mixed with the zero-shot regularizer, using
Adam with token-range clipping and MAP@R early stopping against a fixed
evaluation pool.

Everything is deterministic given (seed, config): the RNG streams
(init / train / eval / final) are derived from the seed, and gradient
accumulation order is fixed.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import transport
from .errors import ConfigError, DataFormatError, NumericalFailure
from .losses import contrastive_c2, triplet
from .metrics import evaluate
from .pooling import gsp_backward_batch, gsp_forward_batch
from .transport import TransportConfig
from .zeroshot import combined_loss, zsr_loss

POOLING_MODES = ("gap", "gsp")
DML_LOSSES = ("contrastive_c2", "triplet")


@dataclass
class SyntheticConfig:
    # data generator
    n_classes: int = 16
    tokens_per_class: int = 4
    shared_tokens: int = 4
    sample_len: int = 50          # features per sample (n)
    token_dim: int = 2
    mix_mean: float = 0.5
    mix_std: float = 0.1
    token_range: float = 0.3
    # pooling layer: epsilon follows the feature scale, not the real-data
    # recipe; tokens live in a 0.3-box so costs run ~4x smaller than for
    # unit-normalized CNN features and the smoothing must tighten to match
    pooling: str = "gsp"
    n_prototypes: int = 64
    mu: float = 0.3
    epsilon: float = 10.0
    iters: int = 100
    # losses
    dml_loss: str = "contrastive_c2"
    c2_pos_margin: float = 0.0
    c2_neg_margin: float = 0.3841
    triplet_margin: float = 0.0961
    zsr_enabled: bool = False
    eps_ridge: float = 0.05
    lam: float = 0.1
    # optimization
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps_adam: float = 1e-8
    samples_per_class: int = 4
    steps_per_epoch: int = 50
    max_epochs: int = 100
    patience: int = 30
    eval_per_class: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.dml_loss not in DML_LOSSES:
            raise ConfigError(f"dml_loss must be one of {DML_LOSSES}, got {self.dml_loss!r}")
        if self.pooling == "gsp" and not (0.0 < self.mu < 1.0):
            raise ConfigError(
                f"gsp training needs mu in (0, 1): the transport backward pass "
                f"is undefined at mu = 1 (got mu = {self.mu})"
            )
        if self.zsr_enabled and self.pooling != "gsp":
            raise ConfigError("zsr requires pooling='gsp' (attribute vectors come "
                              "from the transport plan)")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lam must be in [0, 1], got {self.lam}")
        for name in ("n_classes", "tokens_per_class", "shared_tokens", "sample_len",
                     "token_dim", "n_prototypes", "iters", "samples_per_class",
                     "steps_per_epoch", "max_epochs", "patience", "eval_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.token_range <= 0 or self.lr <= 0 or self.eps_adam <= 0:
            raise ConfigError("token_range, lr and eps_adam must be positive")
        if self.mix_std < 0:
            raise ConfigError("mix_std must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def transport_config(self) -> TransportConfig:
        return TransportConfig(mu=self.mu, epsilon=self.epsilon,
                               max_iters=self.iters, tol=0.0)


# --------------------------------------------------------------------------
# data generator
# --------------------------------------------------------------------------

def sample_batch(cfg: SyntheticConfig, rng: np.random.Generator,
                 per_class: int | None = None):
    """Draw token indices for one batch: per sample of class c, a mixing
    ratio from N(mix_mean, mix_std) clipped to [0, 1] decides how many of the
    sample_len slots are filled (with replacement) from class-c tokens; the
    rest come from the shared tokens.  Returns (ids (B, n), labels (B,));
    features are tokens[ids], so gradients flow back to token rows."""
    per_class = cfg.samples_per_class if per_class is None else per_class
    n = cfg.sample_len
    tpc = cfg.tokens_per_class
    shared_base = cfg.n_classes * tpc
    B = cfg.n_classes * per_class
    labels = np.repeat(np.arange(cfg.n_classes), per_class)

    mix = np.clip(rng.normal(cfg.mix_mean, cfg.mix_std, size=B), 0.0, 1.0)
    k = np.rint(mix * n).astype(np.int64)                      # class draws per row
    class_ids = labels[:, None] * tpc + rng.integers(0, tpc, size=(B, n))
    shared_ids = shared_base + rng.integers(0, cfg.shared_tokens, size=(B, n))
    ids = np.where(np.arange(n)[None, :] < k[:, None], class_ids, shared_ids)
    return ids, labels


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_param(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adam_step(param, grad, state: AdamState, lr: float, beta1: float, beta2: float,
              eps_adam: float = 1e-8, clip_range: float | None = None) -> np.ndarray:
    """One bias-corrected Adam update; optionally clips the result
    element-wise to [-clip_range, clip_range]."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise DataFormatError(
            f"adam_step: param shape {param.shape} != grad shape {grad.shape}"
        )
    if eps_adam <= 0:
        raise ConfigError("adam_step: eps_adam must be positive")
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1 ** state.step)
    vhat = state.v / (1.0 - beta2 ** state.step)
    out = param - lr * mhat / (np.sqrt(vhat) + eps_adam)
    if clip_range is not None:
        np.clip(out, -clip_range, clip_range, out=out)
    return out


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class RunReport:
    config: dict
    seed: int
    status: str                      # "completed" | "diverged"
    epochs: list                     # per-epoch dicts
    best_epoch: int
    best_map_at_r: float
    transport_solves: int
    final: dict                      # tokens / prototypes / label_embeddings /
                                     # embeddings / embedding_labels
    wall_clock_sec: float = field(default=0.0, compare=False)

    def to_json_dict(self) -> dict:
        # wall clock deliberately left out: reports must be byte-identical
        # across repeated runs under one seed
        return {
            "config": self.config,
            "seed": self.seed,
            "status": self.status,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_map_at_r": self.best_map_at_r,
            "transport_solves": self.transport_solves,
            "final": self.final,
        }


def _embed_pool(tokens, ids, protos, cfg: SyntheticConfig):
    """Forward pooling only (evaluation path); returns (B, d) embeddings."""
    feats = tokens[ids]
    if cfg.pooling == "gap":
        return feats.mean(axis=1)
    out = gsp_forward_batch(feats, protos, cfg.transport_config())
    return out.pooled


def _dml_loss(cfg: SyntheticConfig, emb, labels):
    if cfg.dml_loss == "contrastive_c2":
        return contrastive_c2(emb, labels, cfg.c2_pos_margin, cfg.c2_neg_margin)
    return triplet(emb, labels, cfg.triplet_margin)


def train(cfg: SyntheticConfig) -> RunReport:
    cfg.validate()
    t_start = time.perf_counter()
    solves_before = transport.solve_count

    init_rng = np.random.default_rng([cfg.seed, 0])
    train_rng = np.random.default_rng([cfg.seed, 1])
    eval_rng = np.random.default_rng([cfg.seed, 2])
    final_rng = np.random.default_rng([cfg.seed, 3])

    d = cfg.token_dim
    n_tokens = cfg.n_classes * cfg.tokens_per_class + cfg.shared_tokens
    tokens = init_rng.uniform(-cfg.token_range, cfg.token_range, size=(n_tokens, d))
    use_gsp = cfg.pooling == "gsp"
    protos = (init_rng.uniform(-cfg.token_range, cfg.token_range,
                               size=(cfg.n_prototypes, d)) if use_gsp else None)
    upsilon = (init_rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, cfg.n_classes))
               if cfg.zsr_enabled else None)

    params = {"tokens": tokens}
    if protos is not None:
        params["prototypes"] = protos
    if upsilon is not None:
        params["label_embeddings"] = upsilon
    states = {k: AdamState.for_param(v) for k, v in params.items()}
    tcfg = cfg.transport_config() if use_gsp else None

    # one fixed evaluation pool per run: early stopping on a freshly
    # resampled pool turned out to trip on sampling noise mid-training
    ids_ev, labels_ev = sample_batch(cfg, eval_rng, per_class=cfg.eval_per_class)

    epochs = []
    best = {"epoch": -1, "map": -1.0, "params": None}
    status = "completed"

    for epoch in range(cfg.max_epochs):
        loss_sum = 0.0
        diverged = False
        for _ in range(cfg.steps_per_epoch):
            ids, labels = sample_batch(cfg, train_rng)
            feats = params["tokens"][ids]                     # (B, n, d)
            grads = {k: np.zeros_like(v) for k, v in params.items()}

            if use_gsp:
                out = gsp_forward_batch(feats, params["prototypes"], tcfg)
                emb = out.pooled
            else:
                out = None
                emb = feats.mean(axis=1)

            l_dml, g_emb = _dml_loss(cfg, emb, labels)
            if cfg.zsr_enabled:
                l_zs, g_Z, g_U = zsr_loss(out.attributes.T, labels,
                                          params["label_embeddings"],
                                          cfg.eps_ridge, train_rng)
                loss = combined_loss(l_dml, l_zs, cfg.lam)
                g_emb = (1.0 - cfg.lam) * g_emb
                g_z = cfg.lam * g_Z.T
                grads["label_embeddings"] = cfg.lam * g_U
            else:
                loss = l_dml
                g_z = np.zeros_like(out.attributes) if use_gsp else None

            if not np.isfinite(loss):
                diverged = True
                break
            loss_sum += loss

            if use_gsp:
                g_feats, g_protos = gsp_backward_batch(out, g_emb, g_z)
                grads["prototypes"] = g_protos
            else:
                g_feats = np.broadcast_to(g_emb[:, None, :] / cfg.sample_len,
                                          feats.shape)
            np.add.at(grads["tokens"], ids.reshape(-1),
                      g_feats.reshape(-1, d))

            for name in params:
                clip = cfg.token_range if name == "tokens" else None
                params[name] = adam_step(params[name], grads[name], states[name],
                                         cfg.lr, cfg.beta1, cfg.beta2,
                                         cfg.eps_adam, clip_range=clip)

        if diverged:
            status = "diverged"
            break

        rep = evaluate(_embed_pool(params["tokens"], ids_ev,
                                   params.get("prototypes"), cfg), labels_ev)
        epochs.append({
            "epoch": epoch,
            "train_loss": loss_sum / cfg.steps_per_epoch,
            "map_at_r": rep.map_at_r,
            "p_at_1": rep.p_at_1,
            "p_at_r": rep.p_at_r,
        })
        if rep.map_at_r > best["map"]:
            best = {"epoch": epoch, "map": rep.map_at_r,
                    "params": {k: v.copy() for k, v in params.items()}}
        elif epoch - best["epoch"] >= cfg.patience:
            break

    if best["params"] is not None:
        params = best["params"]

    ids_fin, labels_fin = sample_batch(cfg, final_rng, per_class=cfg.eval_per_class)
    emb_fin = _embed_pool(params["tokens"], ids_fin, params.get("prototypes"), cfg)

    report = RunReport(
        config=cfg.to_dict(),
        seed=cfg.seed,
        status=status,
        epochs=epochs,
        best_epoch=int(best["epoch"]),
        best_map_at_r=float(best["map"]),
        transport_solves=transport.solve_count - solves_before,
        final={
            "tokens": params["tokens"].tolist(),
            "prototypes": params["prototypes"].tolist() if "prototypes" in params else None,
            "label_embeddings": (params["label_embeddings"].tolist()
                                 if "label_embeddings" in params else None),
            "embeddings": emb_fin.tolist(),
            "embedding_labels": labels_fin.tolist(),
        },
        wall_clock_sec=time.perf_counter() - t_start,
    )
    if status == "diverged" and not epochs:
        raise NumericalFailure("training diverged before completing one epoch")
    return report


# --------------------------------------------------------------------------
# exports
# --------------------------------------------------------------------------

def export_geometry(report: RunReport, path) -> None:
    """Plot-ready CSV: final embeddings with labels plus token positions.
    Header row always written; floats use repr for exact round-trips."""
    cfg = SyntheticConfig.from_dict(report.config)
    d = cfg.token_dim
    cols = ",".join(f"c{i}" for i in range(d))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"kind,label,{cols}\n")
        final = report.final
        embs = final.get("embeddings") or []
        labs = final.get("embedding_labels") or []
        for vec, lab in zip(embs, labs):
            fh.write("embedding," + str(int(lab)) + ","
                     + ",".join(repr(float(v)) for v in vec) + "\n")
        tokens = final.get("tokens") or []
        tpc = cfg.tokens_per_class
        shared_base = cfg.n_classes * tpc
        for row, vec in enumerate(tokens):
            if row < shared_base:
                kind, lab = "class_token", row // tpc
            else:
                kind, lab = "shared_token", -1
            fh.write(f"{kind},{lab}," + ",".join(repr(float(v)) for v in vec) + "\n")


def export_epoch_csv(report: RunReport, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,train_loss,map_at_r,p_at_1,p_at_r\n")
        for row in report.epochs:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row['map_at_r']!r},"
                     f"{row['p_at_1']!r},{row['p_at_r']!r}\n")
