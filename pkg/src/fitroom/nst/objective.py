"""Content, style and total-variation losses and their pixel gradients."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _upper(n):
    return np.triu_indices(n, 1)


def gram(features):
    """C x C Gram matrix of a (C, H, W) or (C, M) feature map.

    The lower triangle is copied from the upper one, so the result is
    exactly symmetric.
    """
    f = np.asarray(features, dtype=np.float64)
    f = f.reshape(f.shape[0], -1)
    g = f @ f.T
    iu = _upper(len(g))
    g[(iu[1], iu[0])] = g[iu]
    return g


def content_loss(current, target, weight):
    current = np.asarray(current, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if current.shape != target.shape:
        raise ValueError(f"feature shapes differ: {current.shape} vs {target.shape}")
    return weight * float(np.sum((current - target) ** 2))


def style_loss(grams_current, grams_style, weights):
    """Sum over layers of ``w_l * ||G_l - A_l||_F^2``; all three are keyed by layer."""
    if set(grams_current) != set(grams_style) or set(grams_current) != set(weights):
        raise ValueError(
            f"style layer sets differ: current={sorted(grams_current)}, style={sorted(grams_style)}, weights={sorted(weights)}"
        )
    total = 0.0
    for layer in sorted(grams_current):
        g = np.asarray(grams_current[layer])
        a = np.asarray(grams_style[layer])
        if g.shape != a.shape:
            raise ValueError(f"layer {layer}: gram shapes differ {g.shape} vs {a.shape}")
        total += weights[layer] * float(np.sum((g - a) ** 2))
    return total


def tv_loss(values, weight):
    """Squared differences between vertically and horizontally adjacent pixels.

    ``values`` is (H, W, C).
    """
    x = np.asarray(values, dtype=np.float64)
    down = np.sum((x[1:] - x[:-1]) ** 2)
    right = np.sum((x[:, 1:] - x[:, :-1]) ** 2)
    return weight * float(down + right)


def tv_grad(values, weight):
    x = np.asarray(values, dtype=np.float64)
    g = np.zeros_like(x)
    dv = 2.0 * (x[1:] - x[:-1])
    g[1:] += dv
    g[:-1] -= dv
    dh = 2.0 * (x[:, 1:] - x[:, :-1])
    g[:, 1:] += dh
    g[:, :-1] -= dh
    return weight * g


@dataclass
class NstConfig:
    """Style-transfer settings.

    ``content_layer`` and ``style_layers`` index the extractor's layer list;
    ``None`` picks the second conv (or the only one) for content and every
    conv for style, each weighted by ``style_weight``.
    """

    content_layer: int = None
    content_weight: float = 0.1
    style_layers: dict = None
    style_weight: float = 1e-5
    tv_weight: float = 1.0
    iterations: int = 100
    step_size: float = 0.05
    optimizer: str = "adam"
    snapshot_interval: int = 10
    init: str = "content"
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"optimizer must be 'adam' or 'gd', got {self.optimizer!r}")
        if self.init not in ("content", "noise"):
            raise ValueError(f"init must be 'content' or 'noise', got {self.init!r}")
        if self.iterations < 1 or self.snapshot_interval < 1:
            raise ValueError("iterations and snapshot_interval must be >= 1")
        if min(self.content_weight, self.style_weight, self.tv_weight) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.style_layers is not None and min(self.style_layers.values(), default=0) < 0:
            raise ValueError("style layer weights must be non-negative")

    def resolved(self, extractor):
        """Concrete ``(content_layer, {style_layer: weight})`` for ``extractor``."""
        convs = extractor.conv_indices()
        content = self.content_layer
        if content is None:
            content = convs[1] if len(convs) > 1 else convs[0]
        style = self.style_layers
        if style is None:
            style = {i: self.style_weight for i in convs}
        n = len(extractor.layers)
        for idx in [content, *style]:
            if not 0 <= idx < n:
                raise ValueError(f"layer index {idx} out of range for {n} layers")
        return content, dict(style)


@dataclass
class Targets:
    content: np.ndarray
    style_grams: dict = field(default_factory=dict)


def _chw(values):
    return np.ascontiguousarray(np.transpose(np.asarray(values, dtype=np.float64), (2, 0, 1)))


def compute_targets(extractor, content_values, style_values, cfg):
    """Content features and style Grams from (H, W, 3) content and style rasters."""
    content_layer, style = cfg.resolved(extractor)
    c_acts = extractor.forward(_chw(content_values), upto=content_layer)
    top = max(style, default=0)
    s_acts = extractor.forward(_chw(style_values), upto=top) if style else []
    return Targets(c_acts[content_layer].copy(), {i: gram(s_acts[i]) for i in style})


@dataclass
class LossTerms:
    total: float
    content: float
    style: float
    tv: float


def loss_and_gradient(values, targets, extractor, cfg, need_grad=True):
    """Total objective and its exact gradient w.r.t. the (H, W, 3) pixels."""
    content_layer, style = cfg.resolved(extractor)
    x = _chw(values)
    top = max([content_layer, *style])
    acts = extractor.forward(x, upto=top)

    f = acts[content_layer]
    l_c = content_loss(f, targets.content, cfg.content_weight)
    grads = {content_layer: 2.0 * cfg.content_weight * (f - targets.content)}

    current = {}
    for layer in style:
        current[layer] = gram(acts[layer])
    l_s = style_loss(current, {i: targets.style_grams[i] for i in style}, style) if style else 0.0
    for layer, w in style.items():
        feat = acts[layer]
        flat = feat.reshape(feat.shape[0], -1)
        g = 4.0 * w * ((current[layer] - targets.style_grams[layer]) @ flat)
        g = g.reshape(feat.shape)
        grads[layer] = grads[layer] + g if layer in grads else g

    l_tv = tv_loss(values, cfg.tv_weight)
    terms = LossTerms(l_c + l_s + l_tv, l_c, l_s, l_tv)
    if not need_grad:
        return terms, None
    dx = extractor.backward(x, acts, grads)
    grad = np.transpose(dx, (1, 2, 0)) + tv_grad(values, cfg.tv_weight)
    return terms, grad


def total_loss(values, targets, extractor, cfg):
    return loss_and_gradient(values, targets, extractor, cfg, need_grad=False)[0]


def pixel_gradient(values, targets, extractor, cfg):
    return loss_and_gradient(values, targets, extractor, cfg)[1]
