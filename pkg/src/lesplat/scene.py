"""Scene primitives: 3D Gaussians, cameras, and synthetic labeled scenes.

A scene is an ordered list of Gaussians, each carrying geometry (position,
per-axis scale, rotation), appearance (opacity, flat RGB color), and the
semantic payload learned later: a compact feature vector plus a scalar
uncertainty. Scenes and cameras are immutable after construction and safe
to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_FEATURE_DIM = 8

_QUAT_NORM_TOL = 1e-9
_ROTATION_TOL = 1e-6


def _as_vec(x, n, name):
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for a unit quaternion in (w, x, y, z) order."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Gaussian3D:
    """One anisotropic Gaussian primitive.

    Scale holds per-axis standard deviations in scene units; rotation is a
    unit quaternion (w, x, y, z). Color is a flat RGB triple (no view
    dependence). ``semantic_feature`` and ``uncertainty`` are the learned
    semantic payload.
    """

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray
    semantic_feature: np.ndarray = field(
        default_factory=lambda: np.zeros(DEFAULT_FEATURE_DIM)
    )
    uncertainty: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec(self.position, 3, "position"))
        object.__setattr__(self, "scale", _as_vec(self.scale, 3, "scale"))
        object.__setattr__(self, "rotation", _as_vec(self.rotation, 4, "rotation"))
        object.__setattr__(self, "color", _as_vec(self.color, 3, "color"))
        feat = np.asarray(self.semantic_feature, dtype=np.float64)
        if feat.ndim != 1 or not np.all(np.isfinite(feat)):
            raise ValueError("semantic_feature must be a finite 1-D vector")
        object.__setattr__(self, "semantic_feature", feat)

        if abs(np.linalg.norm(self.rotation) - 1.0) > _QUAT_NORM_TOL:
            raise ValueError("rotation quaternion must be unit norm")
        if np.any(self.scale <= 0):
            raise ValueError("scale components must be strictly positive")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError("opacity must lie in [0, 1]")
        if not 0.0 <= self.uncertainty <= 1.0:
            raise ValueError("uncertainty must lie in [0, 1]")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValueError("color channels must lie in [0, 1]")


def covariance(g: Gaussian3D) -> np.ndarray:
    """3x3 covariance R diag(scale^2) R^T of a Gaussian."""
    r = quaternion_to_rotation(g.rotation)
    return r @ np.diag(g.scale**2) @ r.T


@dataclass(frozen=True)
class Scene:
    """Ordered collection of Gaussians plus a background color."""

    gaussians: tuple[Gaussian3D, ...]
    background_color: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "gaussians", tuple(self.gaussians))
        object.__setattr__(
            self, "background_color", _as_vec(self.background_color, 3, "background_color")
        )

    def __len__(self):
        return len(self.gaussians)

    def with_semantics(self, features: np.ndarray, uncertainties: np.ndarray) -> "Scene":
        """New scene with replaced per-Gaussian semantic features/uncertainties."""
        feats = np.asarray(features, dtype=np.float64)
        us = np.asarray(uncertainties, dtype=np.float64)
        if feats.shape[0] != len(self) or us.shape != (len(self),):
            raise ValueError("semantics arrays must match the Gaussian count")
        updated = tuple(
            Gaussian3D(
                position=g.position,
                scale=g.scale,
                rotation=g.rotation,
                opacity=g.opacity,
                color=g.color,
                semantic_feature=feats[i],
                uncertainty=float(us[i]),
            )
            for i, g in enumerate(self.gaussians)
        )
        return Scene(gaussians=updated, background_color=self.background_color)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a rigid world-to-camera transform.

    ``rotation`` (3x3) and ``translation`` (3,) map world points to camera
    space via ``R @ p + t``; the camera looks along +z.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1")
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(r @ r.T, np.eye(3), atol=_ROTATION_TOL):
            raise ValueError("rotation must be orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(
            self, "translation", _as_vec(self.translation, 3, "translation")
        )

    def to_json_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            translation=np.asarray(d["translation"], dtype=np.float64),
        )


# --- scene serialization -------------------------------------------------

SCENE_FORMAT_VERSION = 1


def scene_to_json(scene: Scene) -> str:
    doc = {
        "version": SCENE_FORMAT_VERSION,
        "background_color": scene.background_color.tolist(),
        "gaussians": [
            {
                "position": g.position.tolist(),
                "scale": g.scale.tolist(),
                "rotation": g.rotation.tolist(),
                "opacity": g.opacity,
                "color": g.color.tolist(),
                "semantic_feature": g.semantic_feature.tolist(),
                "uncertainty": g.uncertainty,
            }
            for g in scene.gaussians
        ],
    }
    return json.dumps(doc, indent=2)


def scene_from_json(text: str) -> Scene:
    doc = json.loads(text)
    if doc.get("version") != SCENE_FORMAT_VERSION:
        raise ValueError(f"unsupported scene format version: {doc.get('version')!r}")
    gaussians = [
        Gaussian3D(
            position=np.asarray(e["position"], dtype=np.float64),
            scale=np.asarray(e["scale"], dtype=np.float64),
            rotation=np.asarray(e["rotation"], dtype=np.float64),
            opacity=float(e["opacity"]),
            color=np.asarray(e["color"], dtype=np.float64),
            semantic_feature=np.asarray(e["semantic_feature"], dtype=np.float64),
            uncertainty=float(e["uncertainty"]),
        )
        for e in doc["gaussians"]
    ]
    return Scene(
        gaussians=tuple(gaussians),
        background_color=np.asarray(doc["background_color"], dtype=np.float64),
    )


# --- synthetic labeled scenes --------------------------------------------


@dataclass(frozen=True)
class ClassSpec:
    """One labeled population of Gaussians filling an axis-aligned box."""

    name: str
    center: np.ndarray
    extent: np.ndarray  # box half-widths
    count: int
    color: np.ndarray
    opacity: float = 0.8
    scale: np.ndarray | None = None  # per-axis Gaussian std; derived if None

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec(self.center, 3, "center"))
        object.__setattr__(self, "extent", _as_vec(self.extent, 3, "extent"))
        object.__setattr__(self, "color", _as_vec(self.color, 3, "color"))
        if self.count < 1:
            raise ValueError("class count must be at least 1")
        if self.scale is not None:
            object.__setattr__(self, "scale", _as_vec(self.scale, 3, "scale"))


@dataclass(frozen=True)
class SyntheticSceneSpec:
    classes: tuple[ClassSpec, ...]
    noise: float = 0.0
    seed: int = 0
    background_color: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ValueError("at least one class is required")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        object.__setattr__(
            self, "background_color", _as_vec(self.background_color, 3, "background_color")
        )


# Additive-recurrence lattice (generalization of the golden ratio to 3D);
# gives deterministic, seed-independent quasi-uniform base positions.
_PLASTIC = 1.2207440846057596
_LATTICE_ALPHA = np.array([1 / _PLASTIC, 1 / _PLASTIC**2, 1 / _PLASTIC**3])


def _lattice_points(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros((1, 3))
    idx = np.arange(1, n + 1)[:, None]
    return np.mod(0.5 + idx * _LATTICE_ALPHA[None, :], 1.0) - 0.5


def make_synthetic_scene(spec: SyntheticSceneSpec) -> tuple[Scene, np.ndarray]:
    """Build a labeled scene; returns (scene, per-Gaussian class index).

    Base positions come from a deterministic lattice inside each class box;
    ``spec.noise`` adds seeded Gaussian jitter on top. Identical specs yield
    bit-identical scenes.
    """
    rng = np.random.default_rng(spec.seed)
    gaussians: list[Gaussian3D] = []
    labels: list[int] = []
    identity_quat = np.array([1.0, 0.0, 0.0, 0.0])
    for class_index, cls in enumerate(spec.classes):
        base = cls.center[None, :] + 2.0 * cls.extent[None, :] * _lattice_points(cls.count)
        jitter = rng.normal(0.0, 1.0, size=(cls.count, 3)) * spec.noise
        positions = base + jitter
        if cls.scale is not None:
            scale = cls.scale
        else:
            # Sized so the population roughly tiles its box.
            per_axis = 2.0 * cls.extent / max(1.0, cls.count ** (1.0 / 3.0))
            scale = np.maximum(per_axis * 0.5, 1e-3)
        for i in range(cls.count):
            gaussians.append(
                Gaussian3D(
                    position=positions[i],
                    scale=scale,
                    rotation=identity_quat,
                    opacity=cls.opacity,
                    color=cls.color,
                )
            )
            labels.append(class_index)
    scene = Scene(gaussians=tuple(gaussians), background_color=spec.background_color)
    return scene, np.asarray(labels, dtype=np.int64)
