"""Small convolutional feature extractor with exact reverse-mode gradients.

Weight file layout (all integers little-endian ``u32`` unless noted)::

    b"NSTW" | version | layer_count | layer* | crc32
    layer := u8 tag, then
        tag 1 (conv):    out_ch in_ch kh kw stride pad,
                         out_ch*in_ch*kh*kw f64 weights (C order), out_ch f64 bias
        tag 2 (relu):    nothing
        tag 3 (avgpool): window stride

The trailing CRC32 covers every preceding byte. Convolutions use the
cross-correlation convention (kernels are not flipped).
"""

from dataclasses import dataclass
import struct
import zlib

import numpy as np

from .. import kernels

MAGIC = b"NSTW"
VERSION = 1
_TAG_CONV, _TAG_RELU, _TAG_POOL = 1, 2, 3


class ExtractorError(ValueError):
    pass


@dataclass
class Conv:
    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype="<f8")
        self.bias = np.ascontiguousarray(self.bias, dtype="<f8")
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise ExtractorError(f"conv weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if self.stride < 1 or self.pad < 0:
            raise ExtractorError("conv stride must be >= 1 and pad >= 0")

    @property
    def out_ch(self):
        return self.weight.shape[0]

    @property
    def in_ch(self):
        return self.weight.shape[1]

    def out_shape(self, shape):
        c, h, w = shape
        kh, kw = self.weight.shape[2:]
        return (
            self.out_ch,
            kernels.conv_out_size(h, kh, self.stride, self.pad),
            kernels.conv_out_size(w, kw, self.stride, self.pad),
        )

    def forward(self, x):
        return kernels.conv2d_forward(x, self.weight, self.bias, self.stride, self.pad)

    def backward(self, grad, x, out):
        return kernels.conv2d_backward_input(grad, self.weight, x.shape, self.stride, self.pad)


class ReLU:
    def out_shape(self, shape):
        return shape

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, grad, x, out):
        return grad * (x > 0)

    def __eq__(self, other):
        return isinstance(other, ReLU)

    def __repr__(self):
        return "ReLU()"


@dataclass
class AvgPool:
    window: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ExtractorError("pool window and stride must be >= 1")

    def out_shape(self, shape):
        c, h, w = shape
        return c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1

    def forward(self, x):
        c, ho, wo = self.out_shape(x.shape)
        s, k = self.stride, self.window
        out = np.zeros((c, ho, wo))
        for di in range(k):
            for dj in range(k):
                out += x[:, di : di + s * (ho - 1) + 1 : s, dj : dj + s * (wo - 1) + 1 : s]
        return out / (k * k)

    def backward(self, grad, x, out):
        _, ho, wo = grad.shape
        s, k = self.stride, self.window
        dx = np.zeros_like(x)
        share = grad / (k * k)
        for di in range(k):
            for dj in range(k):
                dx[:, di : di + s * (ho - 1) + 1 : s, dj : dj + s * (wo - 1) + 1 : s] += share
        return dx


class FeatureExtractor:
    """Ordered stack of conv / relu / avgpool layers.

    ``forward`` returns the activation after every layer; layer indices used
    elsewhere (content and style layers) refer to positions in that list.
    """

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ExtractorError("extractor needs at least one layer")
        convs = self.conv_indices()
        if not convs:
            raise ExtractorError("extractor needs at least one conv layer")
        channels = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if channels is not None and layer.in_ch != channels:
                    raise ExtractorError(f"layer {i}: conv expects {layer.in_ch} input channels, previous layer gives {channels}")
                channels = layer.out_ch
            elif not isinstance(layer, (ReLU, AvgPool)):
                raise ExtractorError(f"layer {i}: unsupported layer {layer!r}")

    @property
    def in_channels(self):
        return self.layers[self.conv_indices()[0]].in_ch

    def conv_indices(self):
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv)]

    def shapes(self, in_shape):
        """Activation shape after each layer for a (C, H, W) input."""
        out = []
        shape = tuple(in_shape)
        for i, layer in enumerate(self.layers):
            shape = layer.out_shape(shape)
            if shape[1] < 1 or shape[2] < 1:
                raise ExtractorError(f"layer {i} shrinks the input {tuple(in_shape)} below 1 pixel")
            out.append(shape)
        return out

    def forward(self, x, upto=None):
        """Run a (C, H, W) array through the layers; returns every activation."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ExtractorError(f"input must be ({self.in_channels}, H, W), got {x.shape}")
        self.shapes(x.shape)
        last = len(self.layers) - 1 if upto is None else upto
        acts = []
        for layer in self.layers[: last + 1]:
            x = layer.forward(x)
            acts.append(x)
        return acts

    def backward(self, x, acts, grads):
        """Gradient w.r.t. the input ``x``.

        ``grads`` maps layer index to dLoss/d(activation at that layer); the
        contributions are summed while walking back through the stack.
        """
        if not grads:
            return np.zeros_like(x)
        top = max(grads)
        g = np.array(grads[top], dtype=np.float64)
        for i in range(top, -1, -1):
            inp = acts[i - 1] if i > 0 else x
            g = self.layers[i].backward(g, inp, acts[i])
            if i - 1 in grads:
                g = g + grads[i - 1]
        return g

    def __eq__(self, other):
        if not isinstance(other, FeatureExtractor) or len(self.layers) != len(other.layers):
            return False
        for a, b in zip(self.layers, other.layers):
            if type(a) is not type(b):
                return False
            if isinstance(a, Conv):
                if not (a.stride == b.stride and a.pad == b.pad and np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)):
                    return False
            elif a != b:
                return False
        return True

    def to_bytes(self):
        parts = [MAGIC, struct.pack("<II", VERSION, len(self.layers))]
        for layer in self.layers:
            if isinstance(layer, Conv):
                o, c, kh, kw = layer.weight.shape
                parts.append(struct.pack("<B6I", _TAG_CONV, o, c, kh, kw, layer.stride, layer.pad))
                parts.append(layer.weight.astype("<f8").tobytes())
                parts.append(layer.bias.astype("<f8").tobytes())
            elif isinstance(layer, ReLU):
                parts.append(struct.pack("<B", _TAG_RELU))
            else:
                parts.append(struct.pack("<B2I", _TAG_POOL, layer.window, layer.stride))
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < 16 or data[:4] != MAGIC:
            raise ExtractorError("not an NSTW weight file")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) != crc:
            raise ExtractorError("weight file checksum mismatch (file truncated or corrupted)")
        version, count = struct.unpack_from("<II", body, 4)
        if version != VERSION:
            raise ExtractorError(f"unsupported weight file version {version}")
        pos = 12
        layers = []
        try:
            for _ in range(count):
                (tag,) = struct.unpack_from("<B", body, pos)
                pos += 1
                if tag == _TAG_CONV:
                    o, c, kh, kw, stride, pad = struct.unpack_from("<6I", body, pos)
                    pos += 24
                    n = o * c * kh * kw
                    weight = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(o, c, kh, kw)
                    pos += 8 * n
                    bias = np.frombuffer(body, dtype="<f8", count=o, offset=pos)
                    pos += 8 * o
                    layers.append(Conv(weight.copy(), bias.copy(), stride, pad))
                elif tag == _TAG_RELU:
                    layers.append(ReLU())
                elif tag == _TAG_POOL:
                    window, stride = struct.unpack_from("<2I", body, pos)
                    pos += 8
                    layers.append(AvgPool(window, stride))
                else:
                    raise ExtractorError(f"unknown layer tag {tag} at byte {pos - 1}")
        except (struct.error, ValueError) as exc:
            if isinstance(exc, ExtractorError):
                raise
            raise ExtractorError(f"weight file truncated at byte {pos}") from None
        if pos != len(body):
            raise ExtractorError(f"{len(body) - pos} trailing bytes after last layer")
        return cls(layers)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())


def load_extractor(path):
    with open(path, "rb") as fh:
        return FeatureExtractor.from_bytes(fh.read())


def reference_extractor(seed=0):
    """Three 3x3 convs (3 -> 8 -> 16 -> 16) with relu and one 2x2 average pool.

    Weights are He-scaled normals from ``numpy.random.default_rng(seed)``.
    """
    rng = np.random.default_rng(seed)

    def conv(cin, cout):
        w = rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), size=(cout, cin, 3, 3))
        b = rng.normal(0.0, 0.05, size=cout)
        return Conv(w, b, stride=1, pad=1)

    return FeatureExtractor([conv(3, 8), ReLU(), conv(8, 16), ReLU(), AvgPool(2, 2), conv(16, 16), ReLU()])
