"""Feature visualisation for a trained classifier.

Three views of what the network has learned:

* ranking real samples (and subjects) by a neuron's activation, split by
  classification outcome;
* activation maximisation, i.e. gradient ascent on the input with total
  variation and L1 penalties plus temporal jitter;
* deconvnet reconstructions of convolution filters, and input-gradient
  saliency maps for the classification neurons, optionally used as a mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .dataset import LabeledDataset
from .engine import (
    Kind,
    ModelSpec,
    NeuronSelector,
    ForwardTrace,
    Weights,
    _as_batch,
    backprop,
    check_selector,
    class_neuron,
    deconv_transpose,
    input_gradient,
    layer_outputs,
    relu,
    run_layers,
    unit_activation,
    unpool,
)
from .errors import AllMasked, EmptyCategory, InvalidSelector, NonFiniteEncountered
from .parallel import pmap
from .training import Outcome, evaluate_predictions

__all__ = [
    "NeuronSelector",
    "Outcome",
    "class_neuron",
    "neuron_activation",
    "activations",
    "rank_samples",
    "rank_subjects",
    "AMConfig",
    "activation_maximize",
    "activation_maximize_runs",
    "total_variation",
    "total_variation_grad",
    "l1_norm",
    "l1_norm_grad",
    "deconv_transpose",
    "unpool",
    "deconvnet_reconstruct",
    "saliency",
    "saliency_mask",
]


# ---------------------------------------------------------------------------
# activations and ranking


def activations(spec: ModelSpec, weights: Weights, samples, selector: NeuronSelector) -> np.ndarray:
    """Scalar activation of ``selector`` for every sample (maps are summed)."""
    check_selector(spec, selector)
    out = layer_outputs(spec, weights, samples, selector.layer)
    return unit_activation(out, selector.unit)


def neuron_activation(spec: ModelSpec, weights: Weights, x, selector: NeuronSelector) -> float:
    return float(activations(spec, weights, np.asarray(x)[None], selector)[0])


@dataclass(frozen=True)
class RankedSample:
    index: int
    subject_id: int
    outcome: Outcome
    score: float


@dataclass(frozen=True)
class RankedSubject:
    subject_id: int
    score: float
    n_samples: int


def _scores_and_outcomes(spec, weights, dataset, selector):
    check_selector(spec, selector)
    x = dataset.samples
    logits = layer_outputs(spec, weights, x, spec.classifier_layer)
    if selector.layer == spec.classifier_layer:
        scores = logits[:, selector.unit].copy()
    else:
        scores = activations(spec, weights, x, selector)
    return scores, evaluate_predictions(logits, dataset).outcomes


def _filter_mask(outcomes, outcome_filter) -> np.ndarray:
    if outcome_filter is None:
        return np.ones(len(outcomes), dtype=bool)
    wanted = Outcome(outcome_filter)
    return np.array([o is wanted for o in outcomes], dtype=bool)


def rank_samples(
    spec: ModelSpec,
    weights: Weights,
    dataset: LabeledDataset,
    selector: NeuronSelector,
    outcome_filter=None,
) -> list[RankedSample]:
    """Samples in descending order of activation; ties keep dataset order."""
    if len(dataset) == 0:
        raise EmptyCategory("dataset is empty")
    scores, outcomes = _scores_and_outcomes(spec, weights, dataset, selector)
    keep = np.flatnonzero(_filter_mask(outcomes, outcome_filter))
    if keep.size == 0:
        raise EmptyCategory(f"no sample with outcome {outcome_filter}")
    order = keep[np.argsort(-scores[keep], kind="stable")]
    return [
        RankedSample(int(i), int(dataset.subject_ids[i]), outcomes[i], float(scores[i]))
        for i in order
    ]


def rank_subjects(
    spec: ModelSpec,
    weights: Weights,
    dataset: LabeledDataset,
    selector: NeuronSelector,
    outcome_filter=None,
    k: int = 20,
) -> list[RankedSubject]:
    """Top-``k`` subjects by summed activation over their filtered samples."""
    if len(dataset) == 0:
        raise EmptyCategory("dataset is empty")
    scores, outcomes = _scores_and_outcomes(spec, weights, dataset, selector)
    keep = _filter_mask(outcomes, outcome_filter)
    if not keep.any():
        raise EmptyCategory(f"no sample with outcome {outcome_filter}")
    subjects = []
    for sid in dataset.subjects():
        sel = keep & (dataset.subject_ids == sid)
        if sel.any():
            subjects.append(RankedSubject(int(sid), float(scores[sel].sum()), int(sel.sum())))
    subjects.sort(key=lambda s: -s.score)
    return subjects[:k]


# ---------------------------------------------------------------------------
# regularisers


def total_variation(x) -> float:
    """Sum of absolute differences between neighbours along every axis."""
    x = np.asarray(x, dtype=np.float64)
    return float(sum(np.abs(np.diff(x, axis=a)).sum() for a in range(x.ndim)))


def total_variation_grad(x) -> np.ndarray:
    """Subgradient of :func:`total_variation` (sign(0) = 0 at kinks)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for a in range(x.ndim):
        s = np.sign(np.diff(x, axis=a))
        lo = [slice(None)] * x.ndim
        hi = [slice(None)] * x.ndim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        g[tuple(lo)] -= s
        g[tuple(hi)] += s
    return g


def l1_norm(x) -> float:
    return float(np.abs(x).sum())


def l1_norm_grad(x) -> np.ndarray:
    return np.sign(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# activation maximisation


@dataclass(frozen=True)
class AMConfig:
    step_size: float = 0.1
    iterations: int = 400
    jitter_max: int = 4  # circular shift along time, in samples
    tv_weight: float = 1e-3
    l1_weight: float = 1e-4
    rng_seed: int = 0
    init_scale: float = 0.01  # x0 ~ uniform(-init_scale, init_scale)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if min(self.tv_weight, self.l1_weight, self.jitter_max, self.init_scale) < 0:
            raise ValueError("regulariser weights, jitter and init scale must be >= 0")


@dataclass
class AMResult:
    x: np.ndarray
    activations: np.ndarray  # one value per iteration, then the value at the final x
    seed: int


def _value_and_grad(spec, weights, x, selector):
    xb = _as_batch(spec, x)
    outputs, switches, _ = run_layers(spec, weights, xb, stop=selector.layer)
    value = float(unit_activation(outputs[-1], selector.unit)[0])
    grad = np.zeros_like(outputs[-1])
    grad[:, selector.unit] = 1.0
    gx, _ = backprop(spec, weights, xb, outputs, switches, {}, grad, selector.layer)
    return value, gx[0, 0]


def activation_maximize(
    spec: ModelSpec, weights: Weights, selector: NeuronSelector, config: AMConfig = AMConfig()
) -> AMResult:
    """Gradient ascent on ``activation(x) - tv*TV(x) - l1*|x|_1``.

    Each iteration shifts ``x`` circularly in time by a random amount up to
    ``jitter_max``, takes the activation gradient there and shifts it back.
    Classification neurons use the pre-softmax logit.
    """
    check_selector(spec, selector)
    rng = np.random.default_rng(config.rng_seed)
    x = rng.uniform(-config.init_scale, config.init_scale, size=spec.input_shape)
    trajectory = np.empty(config.iterations + 1)
    for it in range(config.iterations):
        shift = int(rng.integers(-config.jitter_max, config.jitter_max + 1)) if config.jitter_max else 0
        value, g = _value_and_grad(spec, weights, np.roll(x, shift, axis=1), selector)
        trajectory[it] = value
        step = np.roll(g, -shift, axis=1)
        if config.tv_weight:
            step -= config.tv_weight * total_variation_grad(x)
        if config.l1_weight:
            step -= config.l1_weight * l1_norm_grad(x)
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + config.step_size * step
        if not np.isfinite(x).all():
            raise NonFiniteEncountered(f"non-finite input at iteration {it}; reduce the step size")
    trajectory[-1] = _value_and_grad(spec, weights, x, selector)[0]
    return AMResult(x, trajectory, config.rng_seed)


def activation_maximize_runs(
    spec: ModelSpec, weights: Weights, selector: NeuronSelector, config: AMConfig = AMConfig(), runs: int = 20
) -> list[AMResult]:
    """Independent runs differing only in seed: ``rng_seed, rng_seed + 1, ...``."""
    seeds = [config.rng_seed + r for r in range(runs)]
    return pmap(lambda s: activation_maximize(spec, weights, selector, replace(config, rng_seed=s)), seeds)


# ---------------------------------------------------------------------------
# deconvnet and saliency


def deconvnet_reconstruct(
    spec: ModelSpec, weights: Weights, trace: ForwardTrace, selector: NeuronSelector
) -> np.ndarray:
    """Project one convolution filter's feature map back to input space.

    All other filters at that layer are zeroed. Going down the network, the
    map is rectified, unpooled through the recorded switches and passed
    through the transposed convolutions; dropout is the identity.
    """
    layer = selector.layer
    if not 0 <= layer < len(spec.layers) or spec.layers[layer].kind is not Kind.CONV:
        raise InvalidSelector(f"layer {layer} is not a convolution")
    check_selector(spec, selector)
    fmap = trace.outputs[layer]
    h = np.zeros_like(fmap)
    h[selector.unit] = fmap[selector.unit]
    h = relu(h)
    for i in range(layer, -1, -1):
        kind = spec.layers[i].kind
        if kind is Kind.CONV:
            h = deconv_transpose(h, weights.params[i][0])
        elif kind is Kind.MAXPOOL:
            h = unpool(h, trace.switches[i])
        elif kind is Kind.RELU:
            h = relu(h)
    return h[0]


def saliency(spec: ModelSpec, weights: Weights, x, class_idx: int) -> np.ndarray:
    """``|d logit / d x|`` for classification neuron ``class_idx`` (0 or 1)."""
    return np.abs(input_gradient(spec, weights, x, class_neuron(spec, class_idx)))


@dataclass
class MaskResult:
    masked: np.ndarray
    mask: np.ndarray  # True where the saliency fell below the quantile
    threshold: float
    all_masked_channels: list[int]


def saliency_mask(x, saliency_map, quantile: float = 0.30) -> MaskResult:
    """Replace low-saliency cells by linear interpolation along time.

    Cells strictly below the ``quantile`` of the sample's saliency values are
    masked; each channel's masked runs are interpolated between the nearest
    unmasked neighbours, and runs touching an edge take the nearest unmasked
    value. A fully masked channel is left unchanged and reported.
    """
    x = np.asarray(x, dtype=np.float64)
    smap = np.asarray(saliency_map, dtype=np.float64)
    if x.shape != smap.shape or x.ndim != 2:
        raise ValueError(f"sample {x.shape} and saliency map {smap.shape} must match (2-D)")
    if not 0.0 <= quantile < 1.0:
        raise ValueError(f"quantile must be in [0, 1), got {quantile}")
    threshold = float(np.quantile(smap, quantile))
    mask = smap < threshold
    out = x.copy()
    t = np.arange(x.shape[1])
    flagged = []
    for c in range(x.shape[0]):
        m = mask[c]
        if not m.any():
            continue
        if m.all():
            flagged.append(c)
            continue
        out[c, m] = np.interp(t[m], t[~m], x[c, ~m])
    if flagged:
        warnings.warn(f"channels {flagged} fully masked; left unchanged", AllMasked, stacklevel=2)
    return MaskResult(out, mask, threshold, flagged)
