"""Gradient descent on pixel values."""

from dataclasses import dataclass, field
import csv
import logging
import math
import os

import numpy as np

from ..annotations import ImageTensor
from ..imaging import write_png
from .objective import compute_targets, loss_and_gradient

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MAX_HALVINGS = 60


class NonFiniteLoss(FloatingPointError):
    """Loss became NaN or infinite; ``result`` holds everything recorded so far."""

    def __init__(self, iteration, result):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.result = result


@dataclass
class NstResult:
    image: ImageTensor
    snapshots: list = field(default_factory=list)  # (iteration, ImageTensor)
    history: list = field(default_factory=list)  # (iteration, LossTerms)

    def write(self, out_dir):
        """Write ``snap_%06d.png`` files, ``final.png`` and ``loss.csv``."""
        os.makedirs(out_dir, exist_ok=True)
        for it, snap in self.snapshots:
            write_png(os.path.join(out_dir, f"snap_{it:06d}.png"), snap.denormalized().values)
        write_png(os.path.join(out_dir, "final.png"), self.image.denormalized().values)
        write_loss_csv(os.path.join(out_dir, "loss.csv"), self.history)


def write_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "total", "content", "style", "tv"])
        for it, t in history:
            writer.writerow([it, f"{t.total:.10e}", f"{t.content:.10e}", f"{t.style:.10e}", f"{t.tv:.10e}"])


def _initial(content, cfg, low, high):
    if cfg.init == "content":
        return content.values.copy()
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(low, high, size=content.values.shape)


def optimize(content, style, extractor, cfg):
    """Stylize ``content`` toward ``style``.

    Both inputs are :class:`ImageTensor` with the same normalization state.
    Pixels are clamped to the valid range after every step. The loss is
    recorded at iteration 0 and after every step; a snapshot is kept every
    ``cfg.snapshot_interval`` iterations and after the last one.

    With ``optimizer="gd"`` a step that would raise the loss is halved until
    it does not (up to ``MAX_HALVINGS`` times, after which the image is
    left unchanged), so the recorded trajectory never increases.
    """
    if content.normalized != style.normalized:
        raise ValueError("content and style images must share the same normalization state")
    targets = compute_targets(extractor, content.values, style.values, cfg)
    low, high = content.value_range()
    x = np.clip(_initial(content, cfg, low, high), low, high)

    def wrap(values):
        return ImageTensor(values.copy(), content.mean, content.std)

    result = NstResult(wrap(x))
    terms, grad = loss_and_gradient(x, targets, extractor, cfg)
    result.history.append((0, terms))
    if not math.isfinite(terms.total):
        raise NonFiniteLoss(0, result)

    m = np.zeros_like(x)
    v = np.zeros_like(x)
    step = cfg.step_size
    for it in range(1, cfg.iterations + 1):
        if cfg.optimizer == "adam":
            m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * grad * grad
            m_hat = m / (1 - ADAM_BETA1**it)
            v_hat = v / (1 - ADAM_BETA2**it)
            x = np.clip(x - cfg.step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS), low, high)
            terms, grad = loss_and_gradient(x, targets, extractor, cfg)
        else:
            for _ in range(MAX_HALVINGS):
                cand = np.clip(x - step * grad, low, high)
                cand_terms, cand_grad = loss_and_gradient(cand, targets, extractor, cfg)
                if cand_terms.total <= terms.total:
                    x, terms, grad = cand, cand_terms, cand_grad
                    break
                step /= 2
            else:
                log.debug("iteration %d: no decreasing step found", it)
        result.history.append((it, terms))
        if not math.isfinite(terms.total):
            result.image = wrap(x)
            raise NonFiniteLoss(it, result)
        if it % cfg.snapshot_interval == 0 or it == cfg.iterations:
            result.snapshots.append((it, wrap(x)))
    result.image = wrap(x)
    return result
