"""Vote-weighted quality metrics and the top-5 voting strategy.

Errors are pooled over all pixels of all images and reported on the 0-255
scale. Two pooling conventions are supported:

- "entry" (default): the denominator counts scalar entries (pixels x 3
  channels). This keeps WRMSE >= WMAE (the weights form a probability
  measure over entries) and matches common practice.
- "paper": the denominator counts pixels while the numerator norm spans the
  3 channels, so values are sqrt(3)x (RMSE) and 3x (MAE) the entry-mode
  values for identical per-channel errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .groundtruth import GroundTruthSet

N_METHODS = 7
N_PARAMS = 8
VOTES_PER_IMAGE = 14

POOLING_MODES = ("entry", "paper")


class MetricError(ValueError):
    """Raised on malformed metric inputs (missing selections, bad weights)."""


# ---------------------------------------------------------------------------
# Vote tallies and the voting strategy


class VoteTally:
    """Per-image choice counts over the (method, parameter) grid.

    count(t, m, p) is the number of volunteers who chose method m with
    parameter setting p for image t; COUNT(m, p) sums that over all images.
    Methods and parameters are 1-indexed.
    """

    def __init__(self, per_image: Mapping[str, np.ndarray]):
        self.per_image = {t: np.asarray(c, dtype=np.int64) for t, c in per_image.items()}
        for t, c in self.per_image.items():
            if c.shape != (N_METHODS, N_PARAMS):
                raise MetricError(
                    f"tally for image {t!r} has shape {c.shape}, "
                    f"expected ({N_METHODS}, {N_PARAMS})")
        self.global_counts = (
            sum(self.per_image.values())
            if self.per_image else np.zeros((N_METHODS, N_PARAMS), dtype=np.int64))

    @classmethod
    def from_records(cls, records: Iterable) -> "VoteTally":
        """Accumulate (image_id, method, param) triples or VoteRecord-likes."""
        per_image: dict[str, np.ndarray] = {}
        for r in records:
            t, m, p = (r.image_id, r.method, r.param) if hasattr(r, "image_id") else r
            counts = per_image.setdefault(t, np.zeros((N_METHODS, N_PARAMS), dtype=np.int64))
            counts[m - 1, p - 1] += 1
        return cls(per_image)

    def count(self, t: str, m: int, p: int) -> int:
        return int(self.per_image[t][m - 1, p - 1])

    def images(self) -> list[str]:
        return sorted(self.per_image)

    def check_votes_per_image(self, expected: int = VOTES_PER_IMAGE) -> None:
        for t in self.images():
            total = int(self.per_image[t].sum())
            if total != expected:
                raise MetricError(
                    f"image {t!r} has {total} votes, expected {expected}")


def rank_votes(tally: VoteTally, t: str) -> list[tuple[int, int, int]]:
    """All voted (method, param, count) cells for image t in ranking order.

    Descending per-image count, ties broken by descending global COUNT,
    remaining ties by (method, param) lexicographic order so the ranking is
    total and reproducible.
    """
    counts = tally.per_image[t]
    cells = [(m, p, int(counts[m - 1, p - 1]))
             for m in range(1, N_METHODS + 1)
             for p in range(1, N_PARAMS + 1)
             if counts[m - 1, p - 1] > 0]
    if not cells:
        raise MetricError(f"image {t!r} has no voted (method, parameter) cells")
    cells.sort(key=lambda c: (-c[2], -int(tally.global_counts[c[0] - 1, c[1] - 1]),
                              c[0], c[1]))
    return cells


def select_top5(tally: VoteTally, t: str,
                resolve: Callable[[int, int], np.ndarray]) -> GroundTruthSet:
    """Keep the five highest-ranked voted cells and weight them by count.

    resolve(m, p) must return the smoothed image for that cell. Images with
    fewer than five distinct voted cells keep all of them; weights normalize
    over the kept cells.
    """
    kept = rank_votes(tally, t)[:5]
    targets = [np.asarray(resolve(m, p)) for m, p, _ in kept]
    counts = [c for _, _, c in kept]
    picks = tuple((m, p) for m, p, _ in kept)
    return GroundTruthSet.from_counts(targets, counts, source_id=t, picks=picks)


# ---------------------------------------------------------------------------
# Pooled error metrics


def _pixel_count(img: np.ndarray) -> int:
    return img.shape[0] * img.shape[1]


def _accumulate(out: np.ndarray, targets: list[np.ndarray], weights: np.ndarray,
                scale: float) -> tuple[float, float, int]:
    """Weighted squared/absolute error sums over all entries, plus pixel count."""
    if any(t.shape != out.shape for t in targets):
        raise MetricError(
            f"output shape {out.shape} does not match groundtruth shapes "
            f"{[t.shape for t in targets]}")
    diff = (np.stack(targets) - out[None]) * scale
    sq = float(np.einsum("k,kijc->", weights, diff * diff))
    ab = float(np.einsum("k,kijc->", weights, np.abs(diff)))
    return sq, ab, _pixel_count(out)


def pooled_errors(outputs: Mapping[str, np.ndarray],
                  groundtruth_sets: Mapping[str, GroundTruthSet],
                  mode: str = "entry", scale: float = 255.0,
                  weight_tol: float = 1e-9) -> tuple[float, float]:
    """(WRMSE, WMAE) of outputs against weighted groundtruth sets.

    Both metrics share one pass; images pool by their entry (or pixel)
    counts, reduced in sorted image order so results are order-stable.
    """
    if mode not in POOLING_MODES:
        raise MetricError(f"unknown pooling mode {mode!r}; use one of {POOLING_MODES}")
    if not outputs:
        raise MetricError("no outputs to evaluate")
    sq_sum = ab_sum = 0.0
    pixels = 0
    for t in sorted(outputs):
        if t not in groundtruth_sets:
            raise MetricError(f"missing groundtruth set for image {t!r}")
        gts = groundtruth_sets[t]
        w = np.asarray(gts.weights, dtype=np.float64)
        if abs(float(w.sum()) - 1.0) > weight_tol:
            raise MetricError(
                f"groundtruth weights for image {t!r} sum to {w.sum():.17g}, not 1")
        sq, ab, px = _accumulate(np.asarray(outputs[t]), gts.targets, w, scale)
        sq_sum += sq
        ab_sum += ab
        pixels += px
    den = pixels * 3 if mode == "entry" else pixels
    return float(np.sqrt(sq_sum / den)), ab_sum / den


def wrmse(outputs, groundtruth_sets, mode: str = "entry", scale: float = 255.0) -> float:
    """Weighted RMSE against the top-5 voted groundtruths (0-255 scale)."""
    return pooled_errors(outputs, groundtruth_sets, mode=mode, scale=scale)[0]


def wmae(outputs, groundtruth_sets, mode: str = "entry", scale: float = 255.0) -> float:
    """Weighted MAE against the top-5 voted groundtruths (0-255 scale)."""
    return pooled_errors(outputs, groundtruth_sets, mode=mode, scale=scale)[1]


def _pooled_uniform(outputs, groundtruths, power_select: int, mode: str,
                    scale: float) -> float:
    if mode not in POOLING_MODES:
        raise MetricError(f"unknown pooling mode {mode!r}; use one of {POOLING_MODES}")
    if not outputs:
        raise MetricError("no outputs to evaluate")
    num = 0.0
    pixels = 0
    for t in sorted(outputs):
        if t not in groundtruths:
            raise MetricError(f"missing selections for image {t!r}")
        sels = groundtruths[t]
        if len(sels) != VOTES_PER_IMAGE:
            raise MetricError(
                f"image {t!r} has {len(sels)} selections, expected {VOTES_PER_IMAGE}")
        w = np.full(len(sels), 1.0 / len(sels))
        sq, ab, px = _accumulate(np.asarray(outputs[t]), list(sels), w, scale)
        num += sq if power_select == 2 else ab
        pixels += px
    den = pixels * 3 if mode == "entry" else pixels
    return float(np.sqrt(num / den)) if power_select == 2 else num / den


def rmse14(outputs: Mapping[str, np.ndarray],
           groundtruths: Mapping[str, list[np.ndarray]],
           mode: str = "entry", scale: float = 255.0) -> float:
    """Plain RMSE against all 14 human selections with uniform 1/14 weight."""
    return _pooled_uniform(outputs, groundtruths, 2, mode, scale)


def mae14(outputs: Mapping[str, np.ndarray],
          groundtruths: Mapping[str, list[np.ndarray]],
          mode: str = "entry", scale: float = 255.0) -> float:
    """Plain MAE against all 14 human selections with uniform 1/14 weight."""
    return _pooled_uniform(outputs, groundtruths, 1, mode, scale)


# ---------------------------------------------------------------------------
# Greedy optimal-parameter search over the 8-setting grid


@dataclass
class MethodResult:
    """Grid search outcome for one method: errors per setting and the minima."""

    name: str
    wrmse_by_param: dict[int, float] = field(default_factory=dict)
    wmae_by_param: dict[int, float] = field(default_factory=dict)
    wrmse_min: float = float("inf")
    wrmse_argp: Optional[int] = None
    wmae_min: float = float("inf")
    wmae_argp: Optional[int] = None


@dataclass
class MetricReport:
    """Leaderboard data: one MethodResult per method, ready for formatting."""

    methods: list[MethodResult]
    mode: str = "entry"

    def best(self, metric: str = "wrmse") -> MethodResult:
        key = (lambda m: m.wrmse_min) if metric == "wrmse" else (lambda m: m.wmae_min)
        return min(self.methods, key=key)


def greedy_param_search(grid_outputs: Mapping[str, Mapping[int, Mapping[str, np.ndarray]]],
                        groundtruth_sets: Mapping[str, GroundTruthSet],
                        mode: str = "entry", scale: float = 255.0) -> MetricReport:
    """Evaluate every parameter setting of every method; keep the minima.

    grid_outputs: method name -> parameter setting -> image id -> output.
    Every image in groundtruth_sets must be present in every grid cell.
    """
    results = []
    for name in grid_outputs:
        res = MethodResult(name=name)
        for p in sorted(grid_outputs[name]):
            outputs = grid_outputs[name][p]
            missing = set(groundtruth_sets) - set(outputs)
            if missing:
                raise MetricError(
                    f"method {name!r} setting {p} is missing outputs for "
                    f"{sorted(missing)[:3]}")
            r, a = pooled_errors(
                {t: outputs[t] for t in groundtruth_sets}, groundtruth_sets,
                mode=mode, scale=scale)
            res.wrmse_by_param[p] = r
            res.wmae_by_param[p] = a
            if r < res.wrmse_min:
                res.wrmse_min, res.wrmse_argp = r, p
            if a < res.wmae_min:
                res.wmae_min, res.wmae_argp = a, p
        if not res.wrmse_by_param:
            raise MetricError(f"method {name!r} has no parameter settings")
        results.append(res)
    return MetricReport(methods=results, mode=mode)
