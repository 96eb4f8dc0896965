"""Training losses over multi-target groundtruth sets.

Three losses: a vote-weighted L2, a vote-weighted L1, and a neighborhood
loss that penalizes deviations of pairwise pixel differences inside a
window (a gradient-domain fidelity term). All are written as raw sums over
pixels; pass normalize=True to divide by the pixel count so learning rates
transfer across patch sizes.

Each loss is exposed twice: an image-level function taking an H x W x 3
prediction tensor and a GroundTruthSet, and a batch-level function on
N x C x H x W tensors with per-sample weights, which the trainer uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor
from .groundtruth import GroundTruthSet


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Window for the pairwise-difference loss; extent must be odd.

    boundary="clip" skips pairs whose partner falls outside the image,
    which avoids fabricating pixel values at the borders.
    """

    extent: int = 5
    boundary: str = "clip"

    def __post_init__(self):
        if self.extent < 1 or self.extent % 2 == 0:
            raise ValueError(f"window extent must be odd and >= 1, got {self.extent}")
        if self.boundary != "clip":
            raise ValueError(f"unsupported boundary policy {self.boundary!r}")


# ---------------------------------------------------------------------------
# Fused numeric cores on batch layout: pred (N,C,H,W), targets (K,N,C,H,W),
# weights (N,K). Each returns (raw value, d(raw)/d(pred)).


def _l2_core(pred, targets, weights):
    diff = pred[None] - targets
    wk = weights.T[:, :, None, None, None]
    value = float(np.sum(wk * diff * diff))
    grad = 2.0 * np.sum(wk * diff, axis=0)
    return value, grad


def _l1_core(pred, targets, weights):
    diff = pred[None] - targets
    wk = weights.T[:, :, None, None, None]
    value = float(np.sum(wk * np.abs(diff)))
    grad = np.sum(wk * np.sign(diff), axis=0)
    return value, grad


def _nb_core(pred, targets, weights, extent):
    K, N, C, H, W = targets.shape
    r = extent // 2
    wk = weights.T[:, :, None, None, None]
    value = 0.0
    grad = np.zeros_like(pred)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue  # self-pair contributes zero
            cy0, cy1 = max(0, -dy), H - max(0, dy)
            cx0, cx1 = max(0, -dx), W - max(0, dx)
            pc = pred[:, :, cy0:cy1, cx0:cx1]
            ps = pred[:, :, cy0 + dy:cy1 + dy, cx0 + dx:cx1 + dx]
            tc = targets[:, :, :, cy0:cy1, cx0:cx1]
            ts = targets[:, :, :, cy0 + dy:cy1 + dy, cx0 + dx:cx1 + dx]
            d = (pc - ps)[None] - (tc - ts)
            value += float(np.sum(wk * np.abs(d)))
            s = np.sum(wk * np.sign(d), axis=0)
            grad[:, :, cy0:cy1, cx0:cx1] += s
            grad[:, :, cy0 + dy:cy1 + dy, cx0 + dx:cx1 + dx] -= s
    return value, grad


_CORES = {
    "l2": lambda p, t, w, nb: _l2_core(p, t, w),
    "l1": lambda p, t, w, nb: _l1_core(p, t, w),
    "nb": lambda p, t, w, nb: _nb_core(p, t, w, nb.extent),
}


def batch_loss(pred: Tensor, targets: np.ndarray, weights: np.ndarray,
               kind: str = "l1", nb: NeighborhoodSpec | None = None,
               lambda_nb: float = 1.0, normalize: bool = False) -> Tensor:
    """Loss over a batch: pred (N,C,H,W), targets (K,N,C,H,W), weights (N,K).

    kind is "l2", "l1", "nb" or "l1+nb" (weighted L1 plus lambda_nb times the
    neighborhood term). Weight rows must each sum to 1 over the targets that
    carry weight; zero-weight rows pad images with fewer targets.
    """
    if kind not in ("l2", "l1", "nb", "l1+nb"):
        raise ValueError(f"unknown loss kind {kind!r}")
    if lambda_nb < 0:
        raise ValueError(f"lambda_nb must be >= 0, got {lambda_nb}")
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=np.float64)
    if targets.ndim != 5 or targets.shape[1:] != pred.shape:
        raise ShapeError(
            f"targets must be (K,) + {pred.shape}, got {targets.shape}")
    if weights.shape != (pred.shape[0], targets.shape[0]):
        raise ShapeError(
            f"weights must be ({pred.shape[0]}, {targets.shape[0]}), got {weights.shape}")
    nb = nb or NeighborhoodSpec()

    if kind == "l1+nb":
        v1, g1 = _l1_core(pred.data, targets, weights)
        vn, gn = _nb_core(pred.data, targets, weights, nb.extent)
        value, grad = v1 + lambda_nb * vn, g1 + lambda_nb * gn
    else:
        value, grad = _CORES[kind](pred.data, targets, weights, nb)

    scale = 1.0
    if normalize:
        n, _, h, w = pred.shape
        scale = 1.0 / (n * h * w)

    def backward(g: np.ndarray) -> None:
        if pred.needs_grad():
            pred.accumulate_grad(float(g) * scale * grad)

    return Tensor.from_op(np.asarray(value * scale), (pred,), backward)


# ---------------------------------------------------------------------------
# Image-level API: pred is an H x W x 3 tensor, targets come from a
# GroundTruthSet. Internally routed through the batch cores.


def _image_args(pred: Tensor, gts: GroundTruthSet):
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise ShapeError(f"prediction must be H x W x 3, got {pred.shape}")
    tshape = gts.targets[0].shape
    if tshape != pred.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match targets {tshape}")
    targets = np.stack([np.transpose(t, (2, 0, 1))[None] for t in gts.targets])
    weights = gts.weights[None, :]
    return np.transpose(pred.data, (2, 0, 1))[None], targets, weights


def _image_loss(pred: Tensor, gts: GroundTruthSet, core, normalize: bool) -> Tensor:
    pred_b, targets, weights = _image_args(pred, gts)
    value, grad_b = core(pred_b, targets, weights)
    scale = 1.0 / (pred.shape[0] * pred.shape[1]) if normalize else 1.0

    def backward(g: np.ndarray) -> None:
        if pred.needs_grad():
            pred.accumulate_grad(float(g) * scale * np.transpose(grad_b[0], (1, 2, 0)))

    return Tensor.from_op(np.asarray(value * scale), (pred,), backward)


def weighted_l2_loss(pred: Tensor, gts: GroundTruthSet, normalize: bool = False) -> Tensor:
    """Sum over pixels of the weighted squared Euclidean distance to each target."""
    return _image_loss(pred, gts, _l2_core, normalize)


def weighted_l1_loss(pred: Tensor, gts: GroundTruthSet, normalize: bool = False) -> Tensor:
    """Sum over pixels of the weighted per-channel absolute distance to each target."""
    return _image_loss(pred, gts, _l1_core, normalize)


def neighborhood_loss(pred: Tensor, gts: GroundTruthSet,
                      spec: NeighborhoodSpec | None = None,
                      normalize: bool = False) -> Tensor:
    """Weighted L1 penalty on pairwise pixel differences inside the window.

    For every pixel and every window partner, penalizes the deviation of the
    prediction's difference from the target's difference; constant offsets
    between prediction and target cancel exactly.
    """
    spec = spec or NeighborhoodSpec()
    return _image_loss(
        pred, gts, lambda p, t, w: _nb_core(p, t, w, spec.extent), normalize)


def combined_loss(pred: Tensor, gts: GroundTruthSet, lambda_nb: float = 1.0,
                  spec: NeighborhoodSpec | None = None,
                  normalize: bool = False) -> Tensor:
    """weighted_l1_loss + lambda_nb * neighborhood_loss (the benchmark's training loss)."""
    if lambda_nb < 0:
        raise ValueError(f"lambda_nb must be >= 0, got {lambda_nb}")
    if lambda_nb == 0.0:
        return weighted_l1_loss(pred, gts, normalize=normalize)
    spec = spec or NeighborhoodSpec()

    def core(p, t, w):
        v1, g1 = _l1_core(p, t, w)
        vn, gn = _nb_core(p, t, w, spec.extent)
        return v1 + lambda_nb * vn, g1 + lambda_nb * gn

    return _image_loss(pred, gts, core, normalize)
