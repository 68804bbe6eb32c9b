"""Semantic optimization on fixed geometry.

Fits per-Gaussian compact features and uncertainties, the index decoder,
and the spatial smoothing network against per-pixel index targets. The
loss is

    total = lambda_s * (lambda_ce * L_ce + lambda_u * L_u) + lambda_smo * L_smo

where L_ce is an uncertainty-weighted cross entropy on rendered index
distributions, L_u = mean(u) regularizes uncertainties toward zero, and
L_smo ties per-Gaussian features to a smooth field of position:

    L_smo = mean_g ||s_mlp - sg(s_g)||^2 + max(sg(u_g), w_s) * ||sg(s_mlp) - s_g||^2

with sg(.) marking stop-gradient: the detached argument contributes value
but no derivative. Optimization is plain gradient descent with a fixed
learning rate; uncertainties are clipped back into [0, 1] after each step.
All gradients are hand-derived and checked against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .mlp import (
    DecoderMLP,
    SmoothingMLP,
    decoder_backward,
    decoder_forward,
    positional_encoding,
    smoother_backward,
    smoother_forward,
)
from .render import contribution_weights
from .scene import Camera, Scene

LOG_FLOOR = 1e-12
IGNORE_INDEX = -1


@dataclass(frozen=True)
class TrainConfig:
    lambda_s: float = 0.5
    lambda_ce: float = 0.1
    lambda_u: float = 0.1
    lambda_smo: float = 0.1
    w_s: float = 0.1  # minimal smoothing weight
    learning_rate: float = 0.05
    # The smoothing network's quadratic objective is far stiffer than the
    # heavily down-weighted cross-entropy path, so its parameters step with
    # their own fixed rate: learning_rate * smoother_lr_scale.
    smoother_lr_scale: float = 0.05
    epochs: int = 500
    seed: int = 0
    feature_dim: int = 8
    hidden: int = 64
    init_uncertainty: float = 0.1

    def __post_init__(self):
        for name in ("lambda_s", "lambda_ce", "lambda_u", "lambda_smo"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.w_s <= 1.0:
            raise ValueError("w_s must lie in (0, 1]")
        if self.smoother_lr_scale <= 0:
            raise ValueError("smoother_lr_scale must be positive")


# --- loss terms -----------------------------------------------------------


def loss_ce(pred: np.ndarray, target: np.ndarray, u: np.ndarray) -> float:
    """Uncertainty-weighted cross entropy: mean of (1 - u) * -log pred[target]."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_1d(np.asarray(target))
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    p_t = np.maximum(pred[np.arange(len(target)), target], LOG_FLOOR)
    return float(np.mean((1.0 - u) * -np.log(p_t)))


def loss_ce_grads(pred, target, u):
    """Gradients of `loss_ce` w.r.t. pred and u."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_1d(np.asarray(target))
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    n = len(target)
    idx = np.arange(n)
    p_raw = pred[idx, target]
    p_t = np.maximum(p_raw, LOG_FLOOR)
    dpred = np.zeros_like(pred)
    # gradient vanishes where the floor is active
    dpred[idx, target] = np.where(p_raw > LOG_FLOOR, -(1.0 - u) / p_t / n, 0.0)
    du = -(-np.log(p_t)) / n
    return dpred, du


def loss_uncertainty(u: np.ndarray) -> float:
    """Mean uncertainty; pulls u toward zero."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if u.size == 0:
        raise ValueError("uncertainty loss needs at least one value")
    return float(np.mean(u))


def loss_smoothing(s_mlp, s_g, u_g, w_s: float) -> float:
    """Adaptive smoothing loss (value only; see module docstring)."""
    s_mlp = np.atleast_2d(np.asarray(s_mlp, dtype=np.float64))
    s_g = np.atleast_2d(np.asarray(s_g, dtype=np.float64))
    u_g = np.atleast_1d(np.asarray(u_g, dtype=np.float64))
    sq = np.sum((s_mlp - s_g) ** 2, axis=1)
    return float(np.mean(sq * (1.0 + np.maximum(u_g, w_s))))


def loss_smoothing_grads(s_mlp, s_g, u_g, w_s: float):
    """Stop-gradient-aware gradients of `loss_smoothing`.

    The first term only moves the smoothed features, the second only the
    per-Gaussian features; u never receives gradient here.
    """
    s_mlp = np.atleast_2d(np.asarray(s_mlp, dtype=np.float64))
    s_g = np.atleast_2d(np.asarray(s_g, dtype=np.float64))
    u_g = np.atleast_1d(np.asarray(u_g, dtype=np.float64))
    n = s_mlp.shape[0]
    diff = s_mlp - s_g
    d_s_mlp = 2.0 * diff / n
    d_s_g = -2.0 * np.maximum(u_g, w_s)[:, None] * diff / n
    return d_s_mlp, d_s_g


@dataclass(frozen=True)
class LossParts:
    ce: float
    u: float
    smo: float


def total_loss(parts: LossParts, cfg: TrainConfig) -> float:
    semantic = cfg.lambda_ce * parts.ce + cfg.lambda_u * parts.u
    return cfg.lambda_s * semantic + cfg.lambda_smo * parts.smo


# --- full objective over rendered views ------------------------------------


@dataclass(frozen=True)
class TrainBatch:
    """Precomputed fixed-geometry quantities for the semantic objective."""

    weights: sparse.csr_matrix  # (total pixels, n_gaussians)
    targets: np.ndarray  # (total pixels,) int, IGNORE_INDEX for unsupervised
    encoded_positions: np.ndarray  # (n_gaussians, 27)
    position_scale: float
    n_gaussians: int
    k: int


def build_train_batch(scene: Scene, views, k: int) -> TrainBatch:
    """Stack contribution weights and targets across (camera, index map) views."""
    mats, targets = [], []
    for cam, target in views:
        target = np.asarray(target)
        if target.shape != (cam.height, cam.width):
            raise ValueError("target map shape must match the camera dimensions")
        mats.append(contribution_weights(scene, cam))
        targets.append(target.reshape(-1).astype(np.int64))
    weights = sparse.vstack(mats).tocsr()
    if weights.nnz == 0:
        raise ValueError("no Gaussian is visible from any training view")
    positions = np.stack([g.position for g in scene.gaussians])
    # normalize coordinates so the smoother sees O(1) inputs at any scene scale
    position_scale = max(1.0, float(np.max(np.abs(positions))))
    return TrainBatch(
        weights=weights,
        targets=np.concatenate(targets),
        encoded_positions=positional_encoding(positions, position_scale),
        position_scale=position_scale,
        n_gaussians=len(scene),
        k=k,
    )


def semantic_loss_and_grad(
    params: dict, batch: TrainBatch, cfg: TrainConfig, detach_reference: dict | None = None
):
    """Total loss and analytic gradients for every trainable array.

    ``params`` holds "s" (n, feature_dim), "u" (n,), and the decoder /
    smoother layers under "dec_*" / "smo_*" keys.

    ``detach_reference`` pins the stop-gradient occurrences of the
    smoothing loss (the detached features/uncertainty) to a frozen
    parameter snapshot instead of the live values. The training loop never
    needs it (live and detached values coincide at the evaluation point),
    but finite-difference verification does: perturbing a parameter must
    not move its detached occurrences.
    """
    dec = {k[4:]: v for k, v in params.items() if k.startswith("dec_")}
    smo = {k[4:]: v for k, v in params.items() if k.startswith("smo_")}
    s, u = params["s"], params["u"]
    valid = batch.targets != IGNORE_INDEX
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no supervised pixels in the training batch")

    probs, dec_cache = decoder_forward(dec, s)
    rendered = batch.weights @ probs  # (pixels, k)
    u_pixel = batch.weights @ u

    l_ce = loss_ce(rendered[valid], batch.targets[valid], u_pixel[valid])
    l_u = loss_uncertainty(u)
    s_mlp, smo_cache = smoother_forward(smo, batch.encoded_positions)
    if detach_reference is None:
        s_detached, u_detached, s_mlp_detached = s, u, s_mlp
    else:
        ref_smo = {k[4:]: v for k, v in detach_reference.items() if k.startswith("smo_")}
        s_detached = detach_reference["s"]
        u_detached = detach_reference["u"]
        s_mlp_detached = smoother_forward(ref_smo, batch.encoded_positions)[0]
    n = s.shape[0]
    smoothing_weight = np.maximum(u_detached, cfg.w_s)
    diff_mlp = s_mlp - s_detached  # term 1: only the smoothed field moves
    diff_g = s_mlp_detached - s  # term 2: only the per-Gaussian features move
    l_smo = float(
        np.mean(np.sum(diff_mlp**2, axis=1) + smoothing_weight * np.sum(diff_g**2, axis=1))
    )
    parts = LossParts(ce=l_ce, u=l_u, smo=l_smo)
    value = total_loss(parts, cfg)

    # cross-entropy path: pixels -> rendered distribution -> decoder -> s
    dpred_valid, du_pixel_valid = loss_ce_grads(
        rendered[valid], batch.targets[valid], u_pixel[valid]
    )
    drendered = np.zeros_like(rendered)
    drendered[valid] = dpred_valid
    du_pixel = np.zeros_like(u_pixel)
    du_pixel[valid] = du_pixel_valid
    ce_scale = cfg.lambda_s * cfg.lambda_ce
    dprobs = ce_scale * (batch.weights.T @ drendered)
    dec_grads, ds_ce = decoder_backward(dec, dec_cache, dprobs)
    du = ce_scale * (batch.weights.T @ du_pixel)

    # uncertainty regularizer
    du += cfg.lambda_s * cfg.lambda_u / u.size

    # smoothing path (stop-gradient aware)
    d_s_mlp = 2.0 * diff_mlp / n
    d_s_g = -2.0 * smoothing_weight[:, None] * diff_g / n
    smo_grads = smoother_backward(smo, smo_cache, cfg.lambda_smo * d_s_mlp)

    grads = {"s": ds_ce + cfg.lambda_smo * d_s_g, "u": du}
    grads.update({f"dec_{k}": v for k, v in dec_grads.items()})
    grads.update({f"smo_{k}": v for k, v in smo_grads.items()})
    return value, grads, parts


@dataclass
class TrainResult:
    scene: Scene
    decoder: DecoderMLP
    smoother: SmoothingMLP
    trace: list[dict] = field(default_factory=list)

    def trace_csv(self) -> str:
        lines = ["epoch,loss_ce,loss_u,loss_smo,total"]
        for row in self.trace:
            lines.append(
                f"{row['epoch']},{row['loss_ce']!r},{row['loss_u']!r},"
                f"{row['loss_smo']!r},{row['total']!r}"
            )
        return "\n".join(lines) + "\n"


def init_params(n_gaussians: int, k: int, cfg: TrainConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    decoder = DecoderMLP.init(cfg.feature_dim, k, hidden=cfg.hidden, seed=cfg.seed)
    smoother = SmoothingMLP.init(cfg.feature_dim, hidden=cfg.hidden, seed=cfg.seed + 1)
    params = {
        "s": rng.normal(0.0, 0.01, size=(n_gaussians, cfg.feature_dim)),
        "u": np.full(n_gaussians, cfg.init_uncertainty),
    }
    params.update({f"dec_{k_}": v for k_, v in decoder.params().items()})
    params.update({f"smo_{k_}": v for k_, v in smoother.params().items()})
    return params


def _params_to_models(params: dict, position_scale: float = 1.0):
    decoder = DecoderMLP(
        w1=params["dec_w1"], b1=params["dec_b1"], w2=params["dec_w2"], b2=params["dec_b2"]
    )
    smoother = SmoothingMLP(
        w1=params["smo_w1"], b1=params["smo_b1"], w2=params["smo_w2"], b2=params["smo_b2"],
        position_scale=position_scale,
    )
    return decoder, smoother


def train_semantics(scene: Scene, views, k: int, cfg: TrainConfig) -> TrainResult:
    """Gradient-descend the semantic objective on fixed geometry.

    ``views`` is a sequence of (Camera, target index map) pairs where the
    map holds codebook indices with IGNORE_INDEX marking unsupervised
    pixels. Deterministic for a fixed config seed.
    """
    batch = build_train_batch(scene, views, k)
    params = init_params(len(scene), k, cfg)
    trace = []
    for epoch in range(cfg.epochs):
        value, grads, parts = semantic_loss_and_grad(params, batch, cfg)
        trace.append(
            {
                "epoch": epoch,
                "loss_ce": parts.ce,
                "loss_u": parts.u,
                "loss_smo": parts.smo,
                "total": value,
            }
        )
        for name, g in grads.items():
            rate = cfg.learning_rate
            if name.startswith("smo_"):
                rate *= cfg.smoother_lr_scale
            params[name] = params[name] - rate * g
        np.clip(params["u"], 0.0, 1.0, out=params["u"])
    decoder, smoother = _params_to_models(params, batch.position_scale)
    trained = scene.with_semantics(params["s"], params["u"])
    return TrainResult(scene=trained, decoder=decoder, smoother=smoother, trace=trace)


# --- gradient verification --------------------------------------------------


def finite_diff_check(loss_and_grad, params: dict, eps: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_and_grad(params)`` must return ``(value, grads)`` with one
    gradient array per parameter array. The relative error per element is
    |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|).
    """
    _, grads = loss_and_grad(params)[:2]
    worst = 0.0
    for name, array in params.items():
        g_a = np.asarray(grads[name], dtype=np.float64)
        flat = array.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_and_grad(params)[0]
            flat[i] = orig - eps
            f_minus = loss_and_grad(params)[0]
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            g_ai = g_a.reshape(-1)[i]
            err = abs(g_ai - g_fd) / max(1e-8, abs(g_ai) + abs(g_fd))
            worst = max(worst, err)
    return worst
