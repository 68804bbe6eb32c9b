"""Forward splatting: project Gaussians to 2D and alpha-composite per pixel.

Every pixel composites the full depth-sorted splat list front to back:
``out = sum_i T_i * alpha_i * payload_i`` with ``T_1 = 1`` and
``T_{i+1} = T_i * (1 - alpha_i)``. The payload is an RGB color for image
rendering or a distribution over codebook indices for semantic rendering.
Pixels are sampled at integer coordinates (x = column, y = row). Depth ties
are broken by Gaussian index via a stable sort, so output never depends on
input order beyond that rule.

Rendering favors correctness over throughput: no tile binning, full-image
Gaussian evaluation per splat, and a per-pixel early-exit threshold chosen
far below the renderer's agreement tolerance with the brute-force
reference (1e-6).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .mlp import DecoderMLP, decode
from .scene import Camera, Gaussian3D, Scene, covariance

NEAR_PLANE = 0.01
COV2D_REGULARIZER = 0.3
ALPHA_MAX = 0.99
MIN_COV2D_DET = 1e-12
# Dropping contributions once T falls below this bounds the deviation from
# the exact compositing sum by the same amount.
DEFAULT_EARLY_EXIT_T = 1e-7


@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    source_index: int


@dataclass(frozen=True)
class RenderedImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) floats in [0, 1]


@dataclass(frozen=True)
class SemanticDistributionMap:
    """Per-pixel nonnegative mass over k codebook indices.

    Sums are at most 1; the residual 1 - sum is unassigned (background)
    mass and is intentionally not renormalized away.
    """

    width: int
    height: int
    k: int
    values: np.ndarray  # (height, width, k)


def project(g: Gaussian3D, cam: Camera, source_index: int = 0) -> Splat2D | None:
    """Perspective-project one Gaussian; None if behind the near plane.

    The 2D covariance uses the affine approximation J W Sigma W^T J^T with
    J the projection Jacobian and W the camera rotation, plus a 0.3 * I
    regularizer that keeps the splat invertible.
    """
    p_cam = cam.rotation @ g.position + cam.translation
    z = p_cam[2]
    if z <= NEAR_PLANE:
        return None
    x, y = p_cam[0], p_cam[1]
    mean2d = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
    jac = np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
            [0.0, cam.fy / z, -cam.fy * y / (z * z)],
        ]
    )
    jw = jac @ cam.rotation
    cov2d = jw @ covariance(g) @ jw.T + COV2D_REGULARIZER * np.eye(2)
    return Splat2D(mean2d=mean2d, cov2d=cov2d, depth=float(z), source_index=source_index)


def composite(ordered, early_exit_t: float = 0.0):
    """Front-to-back compositing of (alpha, payload) pairs.

    Returns (accumulated payload, final transmittance). The input must be
    sorted front to back with every alpha in [0, 1). An empty input yields
    an empty payload vector and T = 1.
    """
    transmittance = 1.0
    out = None
    for alpha, payload in ordered:
        if not 0.0 <= alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
        if early_exit_t > 0.0 and transmittance < early_exit_t:
            break
        payload = np.asarray(payload, dtype=np.float64)
        if out is None:
            out = np.zeros_like(payload)
        out = out + transmittance * alpha * payload
        transmittance *= 1.0 - alpha
    if out is None:
        out = np.zeros(0)
    return out, transmittance


def _sorted_splats(scene: Scene, cam: Camera) -> list[Splat2D]:
    splats = []
    for i, g in enumerate(scene.gaussians):
        s = project(g, cam, source_index=i)
        if s is not None:
            splats.append(s)
    depths = np.array([s.depth for s in splats])
    order = np.argsort(depths, kind="stable")
    return [splats[i] for i in order]


def _alpha_map(splat: Splat2D, opacity: float, xs: np.ndarray, ys: np.ndarray):
    """Alpha of one splat over a pixel grid; None if its footprint is degenerate."""
    a, b = splat.cov2d[0, 0], splat.cov2d[0, 1]
    c = splat.cov2d[1, 1]
    det = a * c - b * b
    if det <= MIN_COV2D_DET:
        return None
    dx = xs - splat.mean2d[0]
    dy = ys - splat.mean2d[1]
    # quadratic form with the closed-form 2x2 inverse
    q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    alpha = opacity * np.exp(-0.5 * np.maximum(q, 0.0))
    return np.minimum(alpha, ALPHA_MAX)


def _composite_rows(scene, splats, payloads, y0, y1, width, early_exit_t):
    """Composite one horizontal band of rows; returns (band, final T band)."""
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(y0, y1, dtype=np.float64)[:, None]
    channels = payloads.shape[1]
    out = np.zeros((y1 - y0, width, channels))
    transmittance = np.ones((y1 - y0, width))
    for s in splats:
        if transmittance.max() < early_exit_t:
            break
        alpha = _alpha_map(s, scene.gaussians[s.source_index].opacity, xs, ys)
        if alpha is None:
            continue
        weight = np.where(transmittance >= early_exit_t, transmittance * alpha, 0.0)
        out += weight[:, :, None] * payloads[s.source_index]
        transmittance *= 1.0 - alpha
    return out, transmittance


def _render_payloads(scene, cam, payloads, early_exit_t, threads):
    splats = _sorted_splats(scene, cam)
    h, w = cam.height, cam.width
    if threads <= 1 or h == 1:
        return _composite_rows(scene, splats, payloads, 0, h, w, early_exit_t)
    bounds = np.linspace(0, h, min(threads, h) + 1, dtype=int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(
            pool.map(
                lambda se: _composite_rows(scene, splats, payloads, se[0], se[1], w, early_exit_t),
                zip(bounds[:-1], bounds[1:]),
            )
        )
    out = np.concatenate([p[0] for p in parts], axis=0)
    transmittance = np.concatenate([p[1] for p in parts], axis=0)
    return out, transmittance


def render_color(
    scene: Scene,
    cam: Camera,
    early_exit_t: float = DEFAULT_EARLY_EXIT_T,
    threads: int = 1,
) -> RenderedImage:
    """Composite Gaussian colors and blend leftover transmittance into the background."""
    if len(scene) == 0:
        pixels = np.broadcast_to(scene.background_color, (cam.height, cam.width, 3)).copy()
        return RenderedImage(width=cam.width, height=cam.height, pixels=pixels)
    payloads = np.stack([g.color for g in scene.gaussians])
    out, transmittance = _render_payloads(scene, cam, payloads, early_exit_t, threads)
    out += transmittance[:, :, None] * scene.background_color
    return RenderedImage(width=cam.width, height=cam.height, pixels=out)


def render_semantic_distribution(
    scene: Scene,
    cam: Camera,
    decoder: DecoderMLP,
    early_exit_t: float = DEFAULT_EARLY_EXIT_T,
    threads: int = 1,
) -> SemanticDistributionMap:
    """Composite decoded per-Gaussian index distributions; no background mass."""
    k = decoder.k
    if len(scene) == 0:
        return SemanticDistributionMap(
            width=cam.width, height=cam.height, k=k,
            values=np.zeros((cam.height, cam.width, k)),
        )
    features = np.stack([g.semantic_feature for g in scene.gaussians])
    if features.shape[1] != decoder.feature_dim:
        raise ValueError("decoder input dimension does not match scene features")
    payloads = decode(decoder, features)
    out, _ = _render_payloads(scene, cam, payloads, early_exit_t, threads)
    return SemanticDistributionMap(width=cam.width, height=cam.height, k=k, values=out)


def contribution_weights(
    scene: Scene,
    cam: Camera,
    early_exit_t: float = DEFAULT_EARLY_EXIT_T,
) -> sparse.csr_matrix:
    """Per-(pixel, Gaussian) compositing weights T_i * alpha_i.

    Returns a (height * width, n_gaussians) CSR matrix in row-major pixel
    order. Because geometry and opacity stay fixed during semantic
    training, composited payload maps are exactly ``weights @ payloads``.
    """
    splats = _sorted_splats(scene, cam)
    h, w = cam.height, cam.width
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    transmittance = np.ones((h, w))
    rows, cols, vals = [], [], []
    pixel_ids = np.arange(h * w).reshape(h, w)
    for s in splats:
        if transmittance.max() < early_exit_t:
            break
        alpha = _alpha_map(s, scene.gaussians[s.source_index].opacity, xs, ys)
        if alpha is None:
            continue
        weight = np.where(transmittance >= early_exit_t, transmittance * alpha, 0.0)
        nz = weight > 0.0
        if np.any(nz):
            rows.append(pixel_ids[nz])
            cols.append(np.full(int(nz.sum()), s.source_index))
            vals.append(weight[nz])
        transmittance *= 1.0 - alpha
    if rows:
        mat = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(h * w, len(scene)),
        )
    else:
        mat = sparse.coo_matrix((h * w, len(scene)))
    return mat.tocsr()
