"""Multi-target groundtruth sets: the top-voted smoothed images with weights.

A GroundTruthSet bundles up to five smoothed versions of one source image
together with vote-proportional weights. Both the quality metrics and the
training losses consume this type, so the weight semantics live here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WEIGHT_SUM_TOL = 1e-12
MAX_TARGETS = 5


class GroundTruthError(ValueError):
    """Raised when a groundtruth set violates its invariants."""


@dataclass(frozen=True)
class GroundTruthSet:
    """Top-voted smoothed images for one source image, with weights.

    targets: list of H x W x 3 float arrays sharing the source dimensions.
    weights: non-negative, summing to 1 within 1e-12.
    source_id: identifier of the source image the targets smooth.
    """

    targets: list[np.ndarray]
    weights: np.ndarray
    source_id: str = ""
    picks: tuple = field(default_factory=tuple)  # optional (method, param) per target

    def __post_init__(self):
        if not self.targets:
            raise GroundTruthError(f"groundtruth set for {self.source_id!r} has no targets")
        if len(self.targets) > MAX_TARGETS:
            raise GroundTruthError(
                f"groundtruth set for {self.source_id!r} has {len(self.targets)} targets; "
                f"at most {MAX_TARGETS} are kept")
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.shape != (len(self.targets),):
            raise GroundTruthError(
                f"{len(self.targets)} targets but {w.shape} weights for {self.source_id!r}")
        if np.any(w < 0):
            raise GroundTruthError(f"negative weight in groundtruth set {self.source_id!r}")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise GroundTruthError(
                f"weights sum to {w.sum():.17g}, not 1, in groundtruth set {self.source_id!r}")
        shape = self.targets[0].shape
        for k, t in enumerate(self.targets):
            if t.shape != shape:
                raise GroundTruthError(
                    f"target {k} of {self.source_id!r} has shape {t.shape}, expected {shape}")

    def __len__(self) -> int:
        return len(self.targets)

    @classmethod
    def from_counts(cls, targets: list[np.ndarray], counts, source_id: str = "",
                    picks: tuple = ()) -> "GroundTruthSet":
        """Build with weights proportional to vote counts, normalized over the kept targets."""
        c = np.asarray(counts, dtype=np.float64)
        total = float(c.sum())
        if total <= 0:
            raise GroundTruthError(f"no positive vote counts for {source_id!r}")
        return cls(targets=targets, weights=c / total, source_id=source_id, picks=picks)
