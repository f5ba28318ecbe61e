import numpy as np
import pytest

from eegprobe.spectral import class_difference, group_ci, welch_psd
from eegprobe.synthdata import (
    Component,
    SynthSpec,
    default_components,
    frontal_weights,
    generate,
    one_over_f_noise,
    posterior_weights,
)


def _slope(alpha):
    x = one_over_f_noise(48, 128 * 16, 128.0, alpha, 3)
    res = welch_psd(x, 128.0)
    sel = (res.frequencies >= 2) & (res.frequencies <= 30)
    p = res.power[:, sel].mean(axis=0)
    return np.polyfit(np.log10(res.frequencies[sel]), np.log10(p), 1)[0]


def test_noise_has_unit_variance_and_zero_mean():
    x = one_over_f_noise(5, 256, 128.0, 1.0, 0)
    np.testing.assert_allclose(x.var(axis=-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(x.mean(axis=-1), 0.0, atol=1e-12)


def test_noise_spectral_slope():
    assert _slope(1.0) == pytest.approx(-1.0, abs=0.3)
    assert _slope(0.0) == pytest.approx(0.0, abs=0.15)
    assert _slope(2.0) < _slope(1.0)


def test_noise_rejects_negative_exponent():
    with pytest.raises(ValueError):
        one_over_f_noise(2, 64, 128.0, -1.0, 0)


def test_channel_weight_helpers():
    assert frontal_weights(6) == (1.0, 1.0, 0.4, 0.4, 0.4, 0.4)
    assert posterior_weights(6) == (0.4, 0.4, 0.4, 0.4, 1.0, 1.0)


def test_generate_layout_and_labels():
    spec = SynthSpec(subjects_per_class=3, samples_per_subject=4, rng_seed=2)
    ds = generate(spec)
    assert ds.shape == (24, 256) and len(ds) == 24 and ds.fs == 128.0
    assert list(ds.subjects()) == list(range(6))
    for sid in range(6):
        assert set(ds.labels[ds.subject_ids == sid]) == {0 if sid < 3 else 1}


def test_generate_is_deterministic():
    spec = SynthSpec(subjects_per_class=2, samples_per_subject=3, rng_seed=9)
    a, b = generate(spec), generate(spec)
    assert a.samples.tobytes() == b.samples.tobytes()
    c = generate(SynthSpec(subjects_per_class=2, samples_per_subject=3, rng_seed=10))
    assert not np.array_equal(a.samples, c.samples)


def test_amplitude_does_not_change_noise_stream():
    quiet = generate(SynthSpec(subjects_per_class=1, samples_per_subject=2, planted=default_components(24, 0, 0)))
    loud = generate(SynthSpec(subjects_per_class=1, samples_per_subject=2, planted=default_components(24, 1, 0)))
    # class 1 plants alpha only, which is zero in both
    np.testing.assert_array_equal(quiet.samples[2:], loud.samples[2:])
    assert not np.array_equal(quiet.samples[:2], loud.samples[:2])


def test_spec_json_roundtrip_and_validation():
    spec = SynthSpec(channels=6, planted=default_components(6, 0.5, 0.1), rng_seed=4)
    assert SynthSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ValueError):
        SynthSpec(planted=((Component(80.0),), ()))
    with pytest.raises(ValueError):
        SynthSpec(subjects_per_class=0)
    with pytest.raises(ValueError):
        SynthSpec(channels=6)  # default components carry 24 channel weights


def _theta_difference(theta_amp, seed=0):
    ds = generate(
        SynthSpec(subjects_per_class=6, samples_per_subject=10, planted=default_components(24, theta_amp, 0.3), rng_seed=seed)
    )
    groups = [group_ci([welch_psd(x, ds.fs) for x in ds.samples[ds.labels == c]]) for c in (0, 1)]
    return groups[0].frequencies, class_difference(*groups)


def test_class_difference_peaks_at_planted_theta():
    freqs, diff = _theta_difference(1.0)
    assert 6 <= freqs[np.argmax(diff)] <= 8
    assert 9 <= freqs[np.argmin(diff)] <= 11


def test_detectability_grows_with_amplitude():
    at7 = [_theta_difference(a)[1][7] for a in (0.25, 0.5, 1.0)]
    assert at7[0] < at7[1] < at7[2]
