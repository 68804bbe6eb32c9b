"""Per-pixel language feature maps and relevancy scoring.

The feature map is the rendered index distribution times the codebook.
A pixel's relevancy is a softmax-style contest: the best cosine similarity
over the positive phrases is pitted against each canonical phrase's
similarity, and the worst (minimum) contest value wins. Scores live
strictly inside (0, 1); 0.5 means "no preference", which is also the score
assigned to pixels without feature evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quantize import Codebook
from .render import SemanticDistributionMap

# Canonical phrases used by the fixed-baseline inference mode.
PREDEFINED_CANONICALS = ("object", "things", "stuff", "texture")

UNIT_TOL = 1e-6
ZERO_EVIDENCE_NORM = 1e-12

HELPING_RANGE = (1, 4)
CANONICAL_RANGE = (4, 6)


@dataclass(frozen=True)
class EmbeddingTable:
    """Phrase-to-vector lookup with unit-norm rows.

    ``provenance`` records whether the vectors were synthesized for tests
    or exported from a real text encoder.
    """

    phrases: tuple[str, ...]
    vectors: np.ndarray  # (n, dim)
    provenance: str = "synthetic"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "phrases", tuple(self.phrases))
        if v.ndim != 2 or v.shape[0] != len(self.phrases):
            raise ValueError("vectors must be one row per phrase")
        if len(set(self.phrases)) != len(self.phrases):
            raise ValueError("phrases must be unique")
        norms = np.linalg.norm(v, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("embedding vectors must be unit norm")
        if self.provenance not in ("synthetic", "exported"):
            raise ValueError("provenance must be 'synthetic' or 'exported'")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, phrase: str) -> np.ndarray:
        try:
            return self.vectors[self.phrases.index(phrase)]
        except ValueError:
            raise KeyError(f"phrase not in embedding table: {phrase!r}") from None


@dataclass(frozen=True)
class QuerySpec:
    """A main query plus its helping positives and canonical phrases."""

    main_positive: str
    helping_positives: tuple[str, ...]
    canonicals: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "helping_positives", tuple(self.helping_positives))
        object.__setattr__(self, "canonicals", tuple(self.canonicals))
        lo, hi = HELPING_RANGE
        if not lo <= len(self.helping_positives) <= hi:
            raise ValueError(
                f"expected {lo}-{hi} helping positives, got {len(self.helping_positives)}"
            )
        lo, hi = CANONICAL_RANGE
        if not lo <= len(self.canonicals) <= hi:
            raise ValueError(f"expected {lo}-{hi} canonicals, got {len(self.canonicals)}")
        positives = {self.main_positive, *self.helping_positives}
        overlap = positives & set(self.canonicals)
        if overlap:
            raise ValueError(f"phrases cannot be both positive and canonical: {sorted(overlap)}")

    def positives(self) -> tuple[str, ...]:
        return (self.main_positive, *self.helping_positives)

    def to_json_dict(self) -> dict:
        return {
            "main_positive": self.main_positive,
            "helping_positives": list(self.helping_positives),
            "canonicals": list(self.canonicals),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "QuerySpec":
        return cls(
            main_positive=d["main_positive"],
            helping_positives=tuple(d["helping_positives"]),
            canonicals=tuple(d["canonicals"]),
        )


@dataclass(frozen=True)
class FeatureMap:
    width: int
    height: int
    values: np.ndarray  # (height, width, dim)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape[:2] != (self.height, self.width) or v.ndim != 3:
            raise ValueError("values must have shape (height, width, dim)")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature map must be finite")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class RelevancyMap:
    """Scores strictly inside (0, 1); ``evidence`` is False where the pixel
    had no feature mass and the neutral 0.5 was assigned."""

    width: int
    height: int
    scores: np.ndarray
    evidence: np.ndarray = field(default=None)

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.shape != (self.height, self.width):
            raise ValueError("scores must have shape (height, width)")
        object.__setattr__(self, "scores", s)
        ev = self.evidence
        if ev is None:
            ev = np.ones_like(s, dtype=bool)
        object.__setattr__(self, "evidence", np.asarray(ev, dtype=bool))


@dataclass(frozen=True)
class SegMask:
    width: int
    height: int
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (self.height, self.width):
            raise ValueError("mask must have shape (height, width)")
        object.__setattr__(self, "mask", m)


def feature_map(m: SemanticDistributionMap, cb: Codebook) -> FeatureMap:
    """Per-pixel language feature: index distribution times codebook."""
    if m.k != cb.k:
        raise ValueError(f"distribution has k={m.k} but codebook has k={cb.k}")
    values = m.values @ cb.entries
    return FeatureMap(width=m.width, height=m.height, values=values)


def _unit_rows(vectors, name) -> np.ndarray:
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if v.shape[0] == 0:
        raise ValueError(f"{name} set must be non-empty")
    if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > UNIT_TOL):
        raise ValueError(f"{name} vectors must be unit norm")
    return v


def relevancy_score(fmap: FeatureMap, positives, canonicals) -> RelevancyMap:
    """Score each pixel's feature against positives and canonicals.

    Per pixel with unit-normalized feature f: sigma_pos is the best cosine
    over the positives, and the score is

        min_i exp(sigma_pos) / (exp(sigma_canon_i) + exp(sigma_pos))

    over the canonicals. Pixels with feature norm below 1e-12 get exactly
    0.5 and are flagged in the evidence mask.
    """
    pos = _unit_rows(positives, "positive")
    canon = _unit_rows(canonicals, "canonical")
    if pos.shape[1] != fmap.dim or canon.shape[1] != fmap.dim:
        raise ValueError("embedding dimensions must match the feature map")

    flat = fmap.values.reshape(-1, fmap.dim)
    norms = np.linalg.norm(flat, axis=1)
    evidence = norms >= ZERO_EVIDENCE_NORM
    unit = np.zeros_like(flat)
    unit[evidence] = flat[evidence] / norms[evidence, None]

    sigma_pos = np.max(unit @ pos.T, axis=1)
    sigma_canon = unit @ canon.T
    exp_pos = np.exp(sigma_pos)
    ratios = exp_pos[:, None] / (np.exp(sigma_canon) + exp_pos[:, None])
    scores = np.min(ratios, axis=1)
    scores[~evidence] = 0.5
    return RelevancyMap(
        width=fmap.width,
        height=fmap.height,
        scores=scores.reshape(fmap.height, fmap.width),
        evidence=evidence.reshape(fmap.height, fmap.width),
    )


def score_query(fmap: FeatureMap, spec: QuerySpec, table: EmbeddingTable) -> RelevancyMap:
    """Relevancy of a QuerySpec with phrase vectors looked up in a table."""
    positives = np.stack([table.lookup(p) for p in spec.positives()])
    canonicals = np.stack([table.lookup(p) for p in spec.canonicals])
    return relevancy_score(fmap, positives, canonicals)


def segment(r: RelevancyMap, threshold: float = 0.5) -> SegMask:
    """Pixels scoring strictly above the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return SegMask(width=r.width, height=r.height, mask=r.scores > threshold)
