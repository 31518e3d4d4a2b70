"""RPN and mask-head losses with their analytic gradients."""

from dataclasses import dataclass
import math

import numpy as np

from .imaging import resize_bilinear

EPS = 1e-7


def smooth_l1(x):
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside. Works elementwise."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    out = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)
    return float(out) if out.ndim == 0 else out


def smooth_l1_grad(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.where(np.abs(x) < 1.0, x, np.sign(x))
    return float(out) if out.ndim == 0 else out


def l_reg(t, t_star):
    """Sum of smooth L1 over the four delta components."""
    diff = np.asarray(t, dtype=np.float64) - np.asarray(t_star, dtype=np.float64)
    if diff.shape != (4,):
        raise ValueError("box deltas must have 4 components")
    total = 0.0
    for d in diff:
        total += smooth_l1(d)
    return total


def l_cls(p, p_star):
    """Binary negative log likelihood with probabilities clamped to [EPS, 1-EPS]."""
    p = min(max(float(p), EPS), 1.0 - EPS)
    if p_star not in (0, 1):
        raise ValueError(f"p_star must be 0 or 1, got {p_star}")
    return -math.log(p) if p_star == 1 else -math.log(1.0 - p)


def l_cls_multiclass(probs, label):
    """Categorical NLL of ``label`` under ``probs`` (K+1 classes incl. background)."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < len(probs):
        raise ValueError(f"label {label} out of range for {len(probs)} classes")
    return -math.log(min(max(float(probs[label]), EPS), 1.0 - EPS))


@dataclass
class RpnBatch:
    p: np.ndarray
    p_star: np.ndarray
    t: np.ndarray
    t_star: np.ndarray
    n_cls: int = 1
    n_reg: int = 1
    lam: float = 10.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1)
        self.p_star = np.asarray(self.p_star).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1, 4)
        self.t_star = np.asarray(self.t_star, dtype=np.float64).reshape(-1, 4)
        n = len(self.p)
        if not (len(self.p_star) == len(self.t) == len(self.t_star) == n):
            raise ValueError("p, p_star, t and t_star must have equal length")
        if self.n_cls < 1 or self.n_reg < 1:
            raise ValueError("n_cls and n_reg must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not np.isin(self.p_star, (0, 1)).all():
            raise ValueError("p_star entries must be 0 or 1 (drop ignored anchors first)")


def rpn_loss(batch):
    """Return ``(total, cls_term, reg_term)`` for an RPN mini-batch.

    Regression only counts anchors with ``p_star == 1``.
    """
    cls_sum = 0.0
    reg_sum = 0.0
    for p, ps, t, ts in zip(batch.p, batch.p_star, batch.t, batch.t_star):
        cls_sum += l_cls(p, int(ps))
        if ps == 1:
            reg_sum += l_reg(t, ts)
    cls_term = cls_sum / batch.n_cls
    reg_term = batch.lam * reg_sum / batch.n_reg
    return cls_term + reg_term, cls_term, reg_term


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _check_mask_shapes(logits, k, target):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3 or logits.shape[1] != logits.shape[2]:
        raise ValueError(f"mask logits must be (K, m, m), got {logits.shape}")
    if not 0 <= k < logits.shape[0]:
        raise ValueError(f"class {k} out of range for K={logits.shape[0]}")
    target = np.asarray(target)
    if target.shape != logits.shape[1:]:
        raise ValueError(f"target mask {target.shape} does not match logits {logits.shape[1:]}")
    return logits, target.astype(np.float64)


def mask_loss(logits, k, target):
    """Mean per-pixel binary cross-entropy of channel ``k`` against ``target``.

    Only channel ``k`` is read. Computed from logits in the overflow-free
    form ``max(z, 0) - z*y + log1p(exp(-|z|))``.
    """
    logits, y = _check_mask_shapes(logits, k, target)
    z = logits[k]
    per_pixel = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(per_pixel.mean())


def mask_loss_grad(logits, k, target):
    """Gradient of :func:`mask_loss` w.r.t. all logits (zero off channel k)."""
    logits, y = _check_mask_shapes(logits, k, target)
    grad = np.zeros_like(logits)
    grad[k] = (_sigmoid(logits[k]) - y) / y.size
    return grad


def mask_postprocess(logits, k_hat, roi_w, roi_h):
    """Turn channel ``k_hat`` into a roi_h x roi_w boolean mask (prob > 0.5)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= k_hat < logits.shape[0]:
        raise ValueError(f"class {k_hat} out of range for K={logits.shape[0]}")
    if roi_w <= 0 or roi_h <= 0:
        raise ValueError("roi dimensions must be positive")
    prob = _sigmoid(logits[k_hat])
    return resize_bilinear(prob, int(roi_h), int(roi_w)) > 0.5


def multi_task_total(rpn_cls, rpn_reg, head_cls, head_reg, mask):
    """Plain sum of the five Mask R-CNN training terms."""
    terms = (rpn_cls, rpn_reg, head_cls, head_reg, mask)
    for term in terms:
        if not math.isfinite(term) or term < 0:
            raise ValueError(f"loss terms must be finite and non-negative, got {terms}")
    return float(sum(terms))
