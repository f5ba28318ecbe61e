"""Seeded EEG-like two-class datasets with planted narrowband class features.

Each sample is 1/f^alpha background noise plus the narrowband oscillations
planted for its class. A subject's oscillation has its own frequency (drawn
inside the component band), phase and gain; consecutive samples of a subject
are consecutive segments of that subject's continuous oscillation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import LabeledDataset


@dataclass(frozen=True)
class Component:
    center: float  # Hz
    bandwidth: float = 1.0  # Hz; per-subject frequency is uniform in center +- bandwidth/2
    amplitude: float = 1.0  # sinusoid amplitude, in units of the background's std
    channel_weights: tuple[float, ...] | None = None  # None: weight 1 on every channel


def frontal_weights(channels: int) -> tuple[float, ...]:
    """Full weight on the first third of the montage, 0.4 elsewhere."""
    cut = max(1, channels // 3)
    return tuple(1.0 if c < cut else 0.4 for c in range(channels))


def posterior_weights(channels: int) -> tuple[float, ...]:
    cut = channels - max(1, channels // 3)
    return tuple(1.0 if c >= cut else 0.4 for c in range(channels))


def default_components(channels: int = 24, theta_amp: float = 0.6, alpha_amp: float = 0.2):
    """Class 0 gets a 7 Hz frontal theta; class 1 a weaker 10 Hz posterior alpha."""
    return (
        (Component(7.0, 1.0, theta_amp, frontal_weights(channels)),),
        (Component(10.0, 1.0, alpha_amp, posterior_weights(channels)),),
    )


@dataclass(frozen=True)
class SynthSpec:
    channels: int = 24
    time: int = 256
    fs: float = 128.0
    subjects_per_class: int = 10
    samples_per_subject: int = 40
    noise_exponent: float = 1.0
    planted: tuple[tuple[Component, ...], tuple[Component, ...]] = field(
        default_factory=default_components
    )
    rng_seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.time < 2 or self.fs <= 0:
            raise ValueError("channels, time and fs must be positive")
        if self.subjects_per_class < 1 or self.samples_per_subject < 1:
            raise ValueError("need at least one subject per class and one sample per subject")
        if self.noise_exponent < 0:
            raise ValueError("noise exponent must be >= 0")
        if len(self.planted) != 2:
            raise ValueError("planted components are given per class (two entries)")
        for comps in self.planted:
            for c in comps:
                if c.amplitude < 0:
                    raise ValueError("planted amplitudes must be >= 0")
                if c.center + c.bandwidth / 2 >= self.fs / 2:
                    raise ValueError(f"component at {c.center} Hz is not below Nyquist")
                if c.channel_weights is not None and len(c.channel_weights) != self.channels:
                    raise ValueError("channel_weights length must equal channel count")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        d = json.loads(text)
        d["planted"] = tuple(
            tuple(
                Component(
                    c["center"],
                    c["bandwidth"],
                    c["amplitude"],
                    None if c["channel_weights"] is None else tuple(c["channel_weights"]),
                )
                for c in comps
            )
            for comps in d["planted"]
        )
        return cls(**d)


def one_over_f_noise(channels: int, time: int, fs: float, alpha: float, seed) -> np.ndarray:
    """Gaussian noise with power falling as 1/f^alpha, unit variance per channel.

    ``seed`` may be an int or a ``numpy.random.Generator``. The DC bin is
    dropped, so every channel also has zero mean.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((channels, time))
    freqs = np.fft.rfftfreq(time, 1.0 / fs)
    scale = np.zeros_like(freqs)
    scale[1:] = freqs[1:] ** (-alpha / 2.0)
    x = np.fft.irfft(np.fft.rfft(white, axis=-1) * scale, n=time, axis=-1)
    x -= x.mean(axis=-1, keepdims=True)
    return x / x.std(axis=-1, keepdims=True)


def _subject_samples(spec: SynthSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    n, c, t = spec.samples_per_subject, spec.channels, spec.time
    # Oscillation parameters are drawn before the noise, and for every
    # component, so amplitudes never change the rest of the stream.
    oscillations = []
    for comp in spec.planted[label]:
        freq = rng.uniform(comp.center - comp.bandwidth / 2, comp.center + comp.bandwidth / 2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        gain = rng.uniform(0.75, 1.25)
        oscillations.append((comp, freq, phase, gain))
    out = np.empty((n, c, t))
    for k in range(n):
        x = one_over_f_noise(c, t, spec.fs, spec.noise_exponent, rng)
        tt = (k * t + np.arange(t)) / spec.fs
        for comp, freq, phase, gain in oscillations:
            w = np.ones(c) if comp.channel_weights is None else np.asarray(comp.channel_weights)
            x += comp.amplitude * gain * w[:, None] * np.sin(2 * np.pi * freq * tt + phase)[None, :]
        out[k] = x
    return out


def generate(spec: SynthSpec) -> LabeledDataset:
    """Build the dataset; subjects ``0..S-1`` are class 0 first, then class 1."""
    n_subj = 2 * spec.subjects_per_class
    seeds = np.random.SeedSequence(spec.rng_seed).spawn(n_subj)
    samples, labels, sids = [], [], []
    for sid in range(n_subj):
        label = 0 if sid < spec.subjects_per_class else 1
        samples.append(_subject_samples(spec, label, np.random.default_rng(seeds[sid])))
        labels += [label] * spec.samples_per_subject
        sids += [sid] * spec.samples_per_subject
    return LabeledDataset(np.concatenate(samples), np.array(labels), np.array(sids), spec.fs)
