"""Welch spectra, peaks, band powers and group statistics for channels x time data."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import signal, stats

from .errors import InvalidBand, MismatchedAxes, WindowTooLong

# dB of an exact zero would be -inf; power is floored here first.
_POWER_FLOOR = 1e-300


def to_db(power):
    return 10.0 * np.log10(np.maximum(power, _POWER_FLOOR))


@dataclass
class SpectrumResult:
    """One-sided PSD per channel.

    ``power`` is linear (units^2/Hz); ``psd`` is its dB version and
    ``channel_mean`` the channel average of ``psd``.
    """

    frequencies: np.ndarray
    power: np.ndarray
    fs: float
    window_len: int
    overlap: float
    psd: np.ndarray = field(init=False)
    channel_mean: np.ndarray = field(init=False)

    def __post_init__(self):
        self.psd = to_db(self.power)
        self.channel_mean = self.psd.mean(axis=0)


def welch_psd(x, fs: float, window_len: int | None = None, overlap: float = 0.5) -> SpectrumResult:
    """Hamming-windowed Welch PSD; the default window is one second (fs samples).

    No detrending is applied, so a DC offset stays in the 0 Hz bin.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = int(round(fs)) if window_len is None else int(window_len)
    if n < 2:
        raise WindowTooLong(f"window of {n} samples is too short")
    if n > x.shape[-1]:
        raise WindowTooLong(f"window of {n} samples exceeds signal length {x.shape[-1]}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    freqs, power = signal.welch(
        x,
        fs=fs,
        window="hamming",
        nperseg=n,
        noverlap=int(n * overlap),
        detrend=False,
        scaling="density",
        axis=-1,
    )
    return SpectrumResult(freqs, power, float(fs), n, float(overlap))


def mean_spectrum(result: SpectrumResult) -> np.ndarray:
    return result.channel_mean


def average_spectra(results: list[SpectrumResult]) -> SpectrumResult:
    """Average linear power over several spectra with identical axes."""
    _check_axes([r.frequencies for r in results])
    r0 = results[0]
    power = np.mean([r.power for r in results], axis=0)
    return SpectrumResult(r0.frequencies, power, r0.fs, r0.window_len, r0.overlap)


class Peak(NamedTuple):
    frequency: float
    height: float


def find_peaks(spectrum, frequencies, freq_range=None) -> list[Peak]:
    """Strict local maxima, highest first.

    A bin is a peak only if it is strictly above both neighbours, so the end
    bins and plateaus never count. ``freq_range`` filters peaks after
    detection on the full spectrum.
    """
    s = np.asarray(spectrum, dtype=np.float64)
    f = np.asarray(frequencies, dtype=np.float64)
    if s.shape != f.shape:
        raise MismatchedAxes(f"spectrum {s.shape} vs frequency axis {f.shape}")
    idx = np.flatnonzero((s[1:-1] > s[:-2]) & (s[1:-1] > s[2:])) + 1
    if freq_range is not None:
        lo, hi = freq_range
        idx = idx[(f[idx] >= lo) & (f[idx] <= hi)]
    idx = idx[np.argsort(-s[idx], kind="stable")]
    return [Peak(float(f[i]), float(s[i])) for i in idx]


def band_power(result: SpectrumResult, band) -> np.ndarray:
    """Per-channel trapezoidal integral of linear power over ``[lo, hi]`` Hz."""
    lo, hi = float(band[0]), float(band[1])
    nyq = result.fs / 2
    if lo < 0 or hi > nyq or lo > hi:
        raise InvalidBand(f"band [{lo}, {hi}] must lie within [0, {nyq}] with lo <= hi")
    sel = (result.frequencies >= lo) & (result.frequencies <= hi)
    if sel.sum() < 2:
        return np.zeros(result.power.shape[0])
    return np.trapezoid(result.power[:, sel], result.frequencies[sel], axis=-1)


def relative_band_power(result: SpectrumResult, band, total=None) -> np.ndarray:
    """Band power over the power in ``total`` (default 1 Hz to Nyquist), per channel."""
    total = (1.0, result.fs / 2) if total is None else total
    return band_power(result, band) / band_power(result, total)


@dataclass
class GroupSpectrum:
    frequencies: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n: int


def _check_axes(axes) -> None:
    first = np.asarray(axes[0])
    for a in axes[1:]:
        a = np.asarray(a)
        if a.shape != first.shape or not np.array_equal(a, first):
            raise MismatchedAxes("spectra do not share one frequency axis")


def group_ci(spectra, frequencies=None, confidence: float = 0.95) -> GroupSpectrum:
    """Mean and t-based confidence band over a group of 1-D spectra.

    ``spectra`` may be SpectrumResults (their channel means are used) or
    plain arrays on the shared ``frequencies`` axis.
    """
    if len(spectra) < 2:
        raise ValueError("a confidence interval needs at least two spectra")
    if isinstance(spectra[0], SpectrumResult):
        _check_axes([s.frequencies for s in spectra])
        frequencies = spectra[0].frequencies
        spectra = [s.channel_mean for s in spectra]
    lengths = {len(s) for s in spectra}
    if len(lengths) != 1 or (frequencies is not None and len(frequencies) not in lengths):
        raise MismatchedAxes("spectra have different lengths")
    data = np.asarray(spectra, dtype=np.float64)
    n = data.shape[0]
    mean = data.mean(axis=0)
    half = stats.t.ppf(0.5 + confidence / 2, n - 1) * data.std(axis=0, ddof=1) / np.sqrt(n)
    if frequencies is None:
        frequencies = np.arange(data.shape[1], dtype=float)
    return GroupSpectrum(np.asarray(frequencies, dtype=float), mean, mean - half, mean + half, n)


def class_difference(group_a: GroupSpectrum, group_b: GroupSpectrum) -> np.ndarray:
    """Bin-wise ``mean_a - mean_b`` (dB)."""
    _check_axes([group_a.frequencies, group_b.frequencies])
    return group_a.mean - group_b.mean


# ---------------------------------------------------------------------------
# report emitters


def write_spectrum_csv(path, result: SpectrumResult) -> None:
    """One row per frequency bin: per-channel dB values and the channel mean."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency"] + [f"ch{c}" for c in range(result.psd.shape[0])] + ["mean"])
        for i, f in enumerate(result.frequencies):
            w.writerow([_num(f)] + [_num(v) for v in result.psd[:, i]] + [_num(result.channel_mean[i])])


def write_groups_csv(path, groups: dict, difference=None) -> None:
    """One row per bin with ``<group>_mean`` and, for n >= 2, ``_lower``/``_upper`` columns."""
    names = list(groups)
    freqs = groups[names[0]].frequencies
    header = ["frequency"]
    for name in names:
        header.append(f"{name}_mean")
        if groups[name].n >= 2:
            header += [f"{name}_lower", f"{name}_upper"]
    if difference is not None:
        header.append("difference")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, f in enumerate(freqs):
            row = [_num(f)]
            for name in names:
                g = groups[name]
                row.append(_num(g.mean[i]))
                if g.n >= 2:
                    row += [_num(g.lower[i]), _num(g.upper[i])]
            if difference is not None:
                row.append(_num(difference[i]))
            w.writerow(row)


def write_band_csv(path, bands: dict, powers: dict) -> None:
    """Per-channel band powers (the scalp-map values), one row per channel."""
    labels = list(powers)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel"] + [f"{g}_{b}" for g in labels for b in bands])
        n_ch = len(next(iter(powers.values()))[next(iter(bands))])
        for c in range(n_ch):
            w.writerow([c] + [_num(powers[g][b][c]) for g in labels for b in bands])


def plot_spectra_svg(path, groups: dict, difference=None, title: str = "") -> None:
    """Line plot of group means with shaded CI bands; difference on a right axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "eegprobe"
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, g in groups.items():
        (line,) = ax.plot(g.frequencies, g.mean, label=str(name))
        if g.n >= 2:
            ax.fill_between(g.frequencies, g.lower, g.upper, color=line.get_color(), alpha=0.25)
    ax.set_xlabel("Frequency (Hz)")
    ax.set_ylabel("Power (dB)")
    if difference is not None:
        ax2 = ax.twinx()
        freqs = next(iter(groups.values())).frequencies
        ax2.plot(freqs, difference, color="green", label="difference")
        ax2.set_ylabel("Difference (dB)")
        ax2.legend(loc="upper center")
    ax.legend(loc="upper right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _num(v) -> str:
    return repr(float(v))
