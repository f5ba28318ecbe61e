"""Minimal convolutional network runtime for channels x time inputs.

Everything is plain float64 numpy. A sample of shape ``(channels, time)`` is
fed to the network as a single-depth map ``(1, channels, time)``. The layer
primitives accept any number of leading batch axes; the forward/backward
drivers always work on a leading sample axis internally.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidSelector, InvalidShape, SwitchMismatch

# Forward passes are chunked so the im2col copies stay small.
DEFAULT_CHUNK = 64


class Kind(str, enum.Enum):
    CONV = "conv"
    MAXPOOL = "maxpool"
    DROPOUT = "dropout"
    RELU = "relu"
    FLATTEN = "flatten"
    FC = "fc"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a model.

    ``units`` is the filter count for convolutions and the output size for
    fully connected layers. Convolutions always use stride 1 and no padding;
    pooling is always a 2x2 window with stride 2.
    """

    kind: Kind
    units: int = 0
    kernel: tuple[int, int] = (0, 0)
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.kind is Kind.CONV:
            if self.units < 1 or min(self.kernel) < 1:
                raise InvalidShape(f"conv needs positive filters and kernel, got {self}")
        if self.kind is Kind.FC and self.units < 1:
            raise InvalidShape(f"fully connected layer needs units >= 1, got {self.units}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "units": self.units,
            "kernel": list(self.kernel),
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(Kind(d["kind"]), int(d["units"]), tuple(d["kernel"]), float(d["dropout_rate"]))


def conv(filters: int, kh: int, kw: int) -> LayerSpec:
    return LayerSpec(Kind.CONV, filters, (kh, kw))


def maxpool() -> LayerSpec:
    return LayerSpec(Kind.MAXPOOL)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec(Kind.DROPOUT, dropout_rate=rate)


def relu_layer() -> LayerSpec:
    return LayerSpec(Kind.RELU)


def flatten() -> LayerSpec:
    return LayerSpec(Kind.FLATTEN)


def fc(units: int) -> LayerSpec:
    return LayerSpec(Kind.FC, units)


def softmax_layer() -> LayerSpec:
    return LayerSpec(Kind.SOFTMAX)


def _propagate(layers, input_shape) -> list[tuple[int, ...]]:
    if len(input_shape) != 2 or min(input_shape) < 1:
        raise InvalidShape(f"input shape must be two positive dims, got {tuple(input_shape)}")
    shape: tuple[int, ...] = (1, int(input_shape[0]), int(input_shape[1]))
    shapes = []
    for i, layer in enumerate(layers):
        k = layer.kind
        if k in (Kind.CONV, Kind.MAXPOOL, Kind.FLATTEN) and len(shape) != 3:
            raise InvalidShape(f"layer {i} ({k.value}) needs a feature map, got {shape}")
        if k in (Kind.FC, Kind.SOFTMAX) and len(shape) != 1:
            raise InvalidShape(f"layer {i} ({k.value}) needs a flat vector, got {shape}")
        if k is Kind.CONV:
            kh, kw = layer.kernel
            h, w = shape[1] - kh + 1, shape[2] - kw + 1
            if h < 1 or w < 1:
                raise InvalidShape(
                    f"layer {i}: {kh}x{kw} kernel does not fit a {shape[1]}x{shape[2]} map"
                )
            shape = (layer.units, h, w)
        elif k is Kind.MAXPOOL:
            shape = (shape[0], -(-shape[1] // 2), -(-shape[2] // 2))
        elif k is Kind.FLATTEN:
            shape = (math.prod(shape),)
        elif k is Kind.FC:
            shape = (layer.units,)
        shapes.append(shape)
    return shapes


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int] = (24, 256)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if len(self.layers) < 2:
            raise InvalidShape("a model needs at least FullyConnected(2) and Softmax")
        last, penult = self.layers[-1], self.layers[-2]
        if last.kind is not Kind.SOFTMAX or penult.kind is not Kind.FC or penult.units != 2:
            raise InvalidShape("a model must end with FullyConnected(2) followed by Softmax")
        _propagate(self.layers, self.input_shape)

    @property
    def classifier_layer(self) -> int:
        """Index of the final fully connected layer (the pre-softmax logits)."""
        return len(self.layers) - 2

    def shapes(self) -> list[tuple[int, ...]]:
        return _propagate(self.layers, self.input_shape)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(LayerSpec.from_dict(x) for x in d["layers"]), tuple(d["input_shape"]))


def shape_propagate(spec: ModelSpec, input_shape=None) -> list[tuple[int, ...]]:
    """Output shape after every layer of ``spec`` for a ``(channels, time)`` input."""
    return _propagate(spec.layers, spec.input_shape if input_shape is None else input_shape)


def rscnn(input_shape=(24, 256), dropout_rate: float = 0.25, hidden: int = 6144) -> ModelSpec:
    """The full six-convolution classifier (100, 100, 300, 300, 100, 100 filters)."""
    layers = []
    for filters, kh, kw in [(100, 3, 3), (100, 3, 3), (300, 2, 3), (300, 1, 7)]:
        layers += [conv(filters, kh, kw), relu_layer(), maxpool(), dropout(dropout_rate)]
    for filters, kh, kw in [(100, 1, 3), (100, 1, 3)]:
        layers += [conv(filters, kh, kw), relu_layer()]
    layers += [flatten(), fc(hidden), relu_layer(), fc(2), softmax_layer()]
    return ModelSpec(tuple(layers), input_shape)


def toy_cnn(
    input_shape=(24, 256),
    filters: int = 8,
    hidden: int = 32,
    kernels=((3, 3), (3, 3), (2, 3)),
    dropout_rate: float = 0.25,
) -> ModelSpec:
    """Reduced network: the first convolution blocks of the full layout at small width."""
    layers = []
    for kh, kw in kernels:
        layers += [conv(filters, kh, kw), relu_layer(), maxpool(), dropout(dropout_rate)]
    layers += [flatten(), fc(hidden), relu_layer(), fc(2), softmax_layer()]
    return ModelSpec(tuple(layers), input_shape)


@dataclass
class Weights:
    """Learned parameters keyed by layer index: ``(kernel_or_matrix, bias)``.

    Convolution kernels are ``(filters, in_depth, kh, kw)``; fully connected
    matrices are ``(out, in)``.
    """

    params: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for i in sorted(self.params):
            out.extend(self.params[i])
        return out

    def copy(self) -> "Weights":
        return Weights({i: (w.copy(), b.copy()) for i, (w, b) in self.params.items()})

    def validate(self, spec: ModelSpec) -> None:
        expected = expected_param_shapes(spec)
        if set(expected) != set(self.params):
            raise InvalidShape(
                f"weights cover layers {sorted(self.params)}, model needs {sorted(expected)}"
            )
        for i, (ws, bs) in expected.items():
            w, b = self.params[i]
            if w.shape != ws or b.shape != bs:
                raise InvalidShape(
                    f"layer {i}: weights {w.shape}/{b.shape}, expected {ws}/{bs}"
                )


def expected_param_shapes(spec: ModelSpec) -> dict[int, tuple[tuple[int, ...], tuple[int, ...]]]:
    shapes = spec.shapes()
    out = {}
    prev: tuple[int, ...] = (1, *spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if layer.kind is Kind.CONV:
            out[i] = ((layer.units, prev[0], *layer.kernel), (layer.units,))
        elif layer.kind is Kind.FC:
            out[i] = ((layer.units, prev[0]), (layer.units,))
        prev = shapes[i]
    return out


def init_weights(spec: ModelSpec, rng: np.random.Generator) -> Weights:
    """Glorot-uniform weights, zero biases, drawn in layer order."""
    params = {}
    for i, (ws, bs) in expected_param_shapes(spec).items():
        if len(ws) == 4:
            fan_in = ws[1] * ws[2] * ws[3]
            fan_out = ws[0] * ws[2] * ws[3]
        else:
            fan_out, fan_in = ws
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[i] = (rng.uniform(-limit, limit, size=ws), np.zeros(bs))
    return Weights(params)


# ---------------------------------------------------------------------------
# layer primitives


def conv_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid cross-correlation, stride 1, plus one bias per filter.

    ``x`` is ``(..., depth, H, W)``; ``kernels`` is ``(filters, depth, kh, kw)``.
    """
    x = np.asarray(x, dtype=np.float64)
    f, d, kh, kw = kernels.shape
    if x.ndim < 3 or x.shape[-3] != d:
        raise InvalidShape(f"input {x.shape} does not match kernel depth {d}")
    if x.shape[-2] < kh or x.shape[-1] < kw:
        raise InvalidShape(f"{kh}x{kw} kernel does not fit input {x.shape}")
    if np.shape(bias) != (f,):
        raise InvalidShape(f"bias shape {np.shape(bias)} does not match {f} filters")
    win = sliding_window_view(x, (kh, kw), axis=(-2, -1))
    nd = win.ndim
    out = np.tensordot(win, kernels, axes=([nd - 5, nd - 2, nd - 1], [1, 2, 3]))
    out = np.moveaxis(out, -1, -3)
    return np.ascontiguousarray(out) + np.asarray(bias)[:, None, None]


def deconv_transpose(y: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`conv_forward` (without bias).

    Maps a ``(..., filters, H', W')`` feature map back to the
    ``(..., depth, H'+kh-1, W'+kw-1)`` input space of the convolution.
    """
    y = np.asarray(y, dtype=np.float64)
    f, d, kh, kw = kernels.shape
    if y.ndim < 3 or y.shape[-3] != f:
        raise InvalidShape(f"feature map {y.shape} does not match {f} filters")
    pad = [(0, 0)] * (y.ndim - 2) + [(kh - 1, kh - 1), (kw - 1, kw - 1)]
    win = sliding_window_view(np.pad(y, pad), (kh, kw), axis=(-2, -1))
    nd = win.ndim
    flipped = kernels[:, :, ::-1, ::-1]
    out = np.tensordot(win, flipped, axes=([nd - 5, nd - 2, nd - 1], [0, 2, 3]))
    return np.ascontiguousarray(np.moveaxis(out, -1, -3))


def conv_kernel_grad(x: np.ndarray, dy: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Gradient of a batched convolution w.r.t. its kernels, summed over samples."""
    win = sliding_window_view(x, (kh, kw), axis=(-2, -1))
    return np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))


@dataclass(frozen=True)
class PoolSwitches:
    """Argmax locations of a 2x2/stride-2 max pool.

    ``index`` has the pooled shape and holds, for every pooled cell, the
    row-major flat position of the maximum inside the ``input_hw`` plane.
    """

    index: np.ndarray
    input_hw: tuple[int, int]

    def window_origin(self) -> tuple[np.ndarray, np.ndarray]:
        ho, wo = self.index.shape[-2:]
        return np.arange(ho)[:, None] * 2, np.arange(wo)[None, :] * 2

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        return np.divmod(self.index, self.input_hw[1])


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, PoolSwitches]:
    """2x2/stride-2 max pooling in ceil mode.

    Windows hanging over the bottom/right border are clamped to the input, so
    a height-1 map pools through 1x2 windows. Ties go to the first element in
    row-major order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise InvalidShape(f"cannot pool a map of shape {x.shape}")
    h, w = x.shape[-2:]
    ho, wo = -(-h // 2), -(-w // 2)
    pad = [(0, 0)] * (x.ndim - 2) + [(0, 2 * ho - h), (0, 2 * wo - w)]
    xp = np.pad(x, pad, constant_values=-np.inf)
    lead = x.shape[:-2]
    blocks = xp.reshape(*lead, ho, 2, wo, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, ho, wo, 4)
    local = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(local, 2)
    rows = np.arange(ho)[:, None] * 2 + di
    cols = np.arange(wo)[None, :] * 2 + dj
    return out, PoolSwitches(rows * w + cols, (h, w))


def unpool(pooled: np.ndarray, switches: PoolSwitches) -> np.ndarray:
    """Place every pooled value at its recorded argmax; zeros elsewhere."""
    pooled = np.asarray(pooled, dtype=np.float64)
    idx = switches.index
    if pooled.shape != idx.shape:
        raise SwitchMismatch(f"pooled map {pooled.shape} vs switches {idx.shape}")
    h, w = switches.input_hw
    if idx.shape[-2:] != (-(-h // 2), -(-w // 2)):
        raise SwitchMismatch(f"switch grid {idx.shape[-2:]} cannot come from a {h}x{w} map")
    r, c = np.divmod(idx, w)
    r0, c0 = switches.window_origin()
    if np.any(idx < 0) or np.any(r // 2 != r0 // 2) or np.any(c // 2 != c0 // 2) or np.any(c >= w) or np.any(r >= h):
        raise SwitchMismatch("switch index outside its pooling window")
    lead = pooled.shape[:-2]
    out = np.zeros((*lead, h * w))
    np.put_along_axis(out, idx.reshape(*lead, -1), pooled.reshape(*lead, -1), axis=-1)
    return out.reshape(*lead, h, w)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def fc_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``W @ x + b`` with ``W`` of shape ``(out, in)``."""
    x = np.asarray(x, dtype=np.float64)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1] or np.shape(bias) != (weights.shape[0],):
        raise InvalidShape(f"input {x.shape} vs weights {weights.shape}, bias {np.shape(bias)}")
    return x @ weights.T + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# network drivers


@dataclass(frozen=True)
class NeuronSelector:
    """A unit of a layer's output: a filter's whole map, or one scalar unit."""

    layer: int
    unit: int


def class_neuron(spec: ModelSpec, cls: int) -> NeuronSelector:
    """Selector for a classification neuron (pre-softmax logit ``cls``)."""
    if cls not in (0, 1):
        raise InvalidSelector(f"classification neuron must be 0 or 1, got {cls}")
    return NeuronSelector(spec.classifier_layer, cls)


def check_selector(spec: ModelSpec, selector: NeuronSelector) -> tuple[int, ...]:
    """Validate ``selector`` and return the shape of its layer's output."""
    n = len(spec.layers)
    if not 0 <= selector.layer < n:
        raise InvalidSelector(f"layer {selector.layer} out of range for {n} layers")
    if spec.layers[selector.layer].kind is Kind.SOFTMAX:
        raise InvalidSelector("select the classification layer's logits, not the softmax output")
    shape = spec.shapes()[selector.layer]
    if not 0 <= selector.unit < shape[0]:
        raise InvalidSelector(f"unit {selector.unit} out of range for layer output {shape}")
    return shape


@dataclass
class ForwardTrace:
    """Per-layer outputs of one forward pass plus the pooling switches."""

    outputs: list[np.ndarray]
    switches: dict[int, PoolSwitches]
    logits: np.ndarray
    probabilities: np.ndarray


def _as_batch(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != spec.input_shape:
        raise InvalidShape(f"input {x.shape} does not match model input {spec.input_shape}")
    return x[:, None]


def run_layers(spec, weights, x, stop=None, rng=None, dropout_rate=None):
    """Batched forward pass over ``(N, 1, H, W)`` through layer ``stop``.

    Dropout is only sampled when ``rng`` is given (training). Returns the
    per-layer outputs, pooling switches and dropout masks.
    """
    stop = len(spec.layers) - 1 if stop is None else stop
    outputs, switches, masks = [], {}, {}
    h = x
    for i, layer in enumerate(spec.layers[: stop + 1]):
        k = layer.kind
        if k is Kind.CONV:
            h = conv_forward(h, *weights.params[i])
        elif k is Kind.MAXPOOL:
            h, switches[i] = maxpool_forward(h)
        elif k is Kind.DROPOUT:
            rate = layer.dropout_rate if dropout_rate is None else dropout_rate
            if rng is not None and rate > 0:
                masks[i] = (rng.random(h.shape) >= rate) / (1.0 - rate)
                h = h * masks[i]
        elif k is Kind.RELU:
            h = relu(h)
        elif k is Kind.FLATTEN:
            h = h.reshape(h.shape[0], -1)
        elif k is Kind.FC:
            h = fc_forward(h, *weights.params[i])
        elif k is Kind.SOFTMAX:
            h = softmax(h)
        outputs.append(h)
    return outputs, switches, masks


def backprop(spec, weights, x, outputs, switches, masks, grad, top, param_grads=False):
    """Push ``grad`` (w.r.t. the output of layer ``top``) down to the input.

    Returns the input gradient and, if requested, per-layer parameter
    gradients summed over the batch.
    """
    pgrads = {}
    for i in range(top, -1, -1):
        layer = spec.layers[i]
        inp = x if i == 0 else outputs[i - 1]
        k = layer.kind
        if k is Kind.CONV:
            w, _ = weights.params[i]
            if param_grads:
                pgrads[i] = (conv_kernel_grad(inp, grad, *layer.kernel), grad.sum(axis=(0, 2, 3)))
            grad = deconv_transpose(grad, w)
        elif k is Kind.MAXPOOL:
            grad = unpool(grad, switches[i])
        elif k is Kind.DROPOUT:
            if i in masks:
                grad = grad * masks[i]
        elif k is Kind.RELU:
            grad = grad * (inp > 0)
        elif k is Kind.FLATTEN:
            grad = grad.reshape(inp.shape)
        elif k is Kind.FC:
            w, _ = weights.params[i]
            if param_grads:
                pgrads[i] = (grad.T @ inp, grad.sum(axis=0))
            grad = grad @ w
        elif k is Kind.SOFTMAX:
            p = outputs[i]
            grad = p * (grad - (grad * p).sum(axis=-1, keepdims=True))
    return grad, pgrads


def forward(spec: ModelSpec, weights: Weights, x: np.ndarray, record_trace: bool = False):
    """Inference pass for one ``(channels, time)`` sample.

    Returns ``(logits, probabilities, trace)``; ``trace`` is None unless
    ``record_trace`` is set. Dropout is inactive.
    """
    xb = _as_batch(spec, x)
    if xb.shape[0] != 1:
        raise InvalidShape("forward takes a single sample; use predict_logits for batches")
    outputs, switches, _ = run_layers(spec, weights, xb)
    logits = outputs[spec.classifier_layer][0]
    probs = outputs[-1][0]
    trace = None
    if record_trace:
        trace = ForwardTrace(
            outputs=[o[0] for o in outputs],
            switches={i: PoolSwitches(s.index[0], s.input_hw) for i, s in switches.items()},
            logits=logits,
            probabilities=probs,
        )
    return logits, probs, trace


def predict_logits(spec: ModelSpec, weights: Weights, samples, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Pre-softmax logits ``(N, 2)`` for a stack of samples."""
    return layer_outputs(spec, weights, samples, spec.classifier_layer, chunk)


def layer_outputs(spec, weights, samples, layer: int, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Output of ``layer`` for every sample, computed in chunks."""
    x = _as_batch(spec, samples)
    parts = [
        run_layers(spec, weights, x[s : s + chunk], stop=layer)[0][-1]
        for s in range(0, x.shape[0], chunk)
    ]
    return np.concatenate(parts, axis=0)


def unit_activation(layer_output: np.ndarray, unit: int) -> np.ndarray:
    """Per-sample scalar activation of ``unit`` from a batched layer output."""
    sel = layer_output[:, unit]
    return sel.reshape(sel.shape[0], -1).sum(axis=1)


def input_gradient(spec: ModelSpec, weights: Weights, x: np.ndarray, selector: NeuronSelector) -> np.ndarray:
    """Gradient of the selected unit's activation w.r.t. the input.

    Feature-map units are summed over the map. ``x`` may be a single
    ``(channels, time)`` sample or a stack ``(N, channels, time)``; the result
    has the same shape. Weights stay fixed and dropout is off.
    """
    check_selector(spec, selector)
    single = np.ndim(x) == 2
    xb = _as_batch(spec, x)
    outputs, switches, _ = run_layers(spec, weights, xb, stop=selector.layer)
    top = outputs[-1]
    grad = np.zeros_like(top)
    grad[:, selector.unit] = 1.0
    gx, _ = backprop(spec, weights, xb, outputs, switches, {}, grad, selector.layer)
    gx = gx[:, 0]
    return gx[0] if single else gx
