import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegprobe import engine as E
from eegprobe.errors import InvalidSelector, InvalidShape, SwitchMismatch

from conftest import small_model


def conv_loops(x, k, b):
    """Triple-loop valid cross-correlation."""
    f, d, kh, kw = k.shape
    h, w = x.shape[1] - kh + 1, x.shape[2] - kw + 1
    out = np.zeros((f, h, w))
    for fi in range(f):
        for i in range(h):
            for j in range(w):
                acc = b[fi]
                for di in range(d):
                    for a in range(kh):
                        for c in range(kw):
                            acc += x[di, i + a, j + c] * k[fi, di, a, c]
                out[fi, i, j] = acc
    return out


# -- shape propagation -------------------------------------------------------


def test_conv_shape_on_default_input():
    spec = E.ModelSpec((E.conv(100, 3, 3), E.flatten(), E.fc(2), E.softmax_layer()), (24, 256))
    assert E.shape_propagate(spec)[0] == (100, 22, 254)


def test_kernel_larger_than_input():
    with pytest.raises(InvalidShape):
        E.ModelSpec((E.conv(1, 3, 3), E.flatten(), E.fc(2), E.softmax_layer()), (2, 2))


def test_model_must_end_with_classifier():
    with pytest.raises(InvalidShape):
        E.ModelSpec((E.flatten(), E.fc(3), E.softmax_layer()), (4, 4))
    with pytest.raises(InvalidShape):
        E.ModelSpec((E.flatten(), E.fc(2)), (4, 4))


def test_fc_needs_flat_input():
    with pytest.raises(InvalidShape):
        E.ModelSpec((E.fc(2), E.softmax_layer()), (4, 4))


def test_shape_propagate_input_override():
    spec, _ = small_model()
    assert E.shape_propagate(spec, (8, 20))[0] == (4, 6, 18)


# -- primitives --------------------------------------------------------------


def test_conv_zero_input_gives_bias():
    k = np.random.default_rng(0).normal(size=(2, 1, 2, 2))
    out = E.conv_forward(np.zeros((1, 3, 3)), k, np.array([0.5, -1.0]))
    assert np.all(out[0] == 0.5) and np.all(out[1] == -1.0)


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(1, 5, 7))
    out = E.conv_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(out, x)


def test_conv_matches_loops(rng):
    x = rng.normal(size=(1, 4, 4))
    k = rng.normal(size=(1, 1, 3, 3))
    b = rng.normal(size=1)
    assert np.max(np.abs(E.conv_forward(x, k, b) - conv_loops(x, k, b))) < 1e-12


def test_conv_multichannel_matches_loops(rng):
    x = rng.normal(size=(3, 6, 9))
    k = rng.normal(size=(4, 3, 2, 3))
    b = rng.normal(size=4)
    assert np.max(np.abs(E.conv_forward(x, k, b) - conv_loops(x, k, b))) < 1e-12


def test_conv_batched_equals_per_sample(rng):
    x = rng.normal(size=(5, 2, 6, 7))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    batched = E.conv_forward(x, k, b)
    for n in range(5):
        np.testing.assert_allclose(batched[n], conv_loops(x[n], k, b), atol=1e-12)


def test_conv_shape_errors(rng):
    with pytest.raises(InvalidShape):
        E.conv_forward(rng.normal(size=(2, 4, 4)), rng.normal(size=(1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(InvalidShape):
        E.conv_forward(rng.normal(size=(1, 2, 4)), rng.normal(size=(1, 1, 3, 3)), np.zeros(1))


def test_maxpool_single_window():
    out, sw = E.maxpool_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert out.tolist() == [[[4.0]]]
    assert tuple(a.item() for a in sw.positions()) == (1, 1)


def test_maxpool_constant_ties_go_to_first():
    x = np.full((1, 4, 6), 2.5)
    out, sw = E.maxpool_forward(x)
    assert np.all(out == 2.5)
    rows, cols = sw.positions()
    assert np.all(rows % 2 == 0) and np.all(cols % 2 == 0)


def test_maxpool_height_one_clamped():
    # windows clamp to 1x2: [5, 1] and [2, 7]
    out, sw = E.maxpool_forward(np.array([[[5.0, 1.0, 2.0, 7.0]]]))
    assert out.tolist() == [[[5.0, 7.0]]]
    assert sw.index.tolist() == [[[0, 3]]]


def test_maxpool_odd_width_clamped():
    # 3x3 map: windows are 2x2, 2x1, 1x2, 1x1
    x = np.array([[[1.0, 2.0, 9.0], [4.0, 3.0, 0.0], [8.0, 6.0, 5.0]]])
    out, sw = E.maxpool_forward(x)
    assert out.tolist() == [[[4.0, 9.0], [8.0, 5.0]]]
    assert sw.index.tolist() == [[[3, 2], [6, 8]]]


def test_relu_examples(rng):
    assert E.relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]
    pos = np.abs(rng.normal(size=10))
    np.testing.assert_array_equal(E.relu(pos), pos)
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(E.relu(E.relu(x)), E.relu(x))


def test_fc_examples(rng):
    x = rng.normal(size=4)
    np.testing.assert_array_equal(E.fc_forward(x, np.eye(4), np.zeros(4)), x)
    b = rng.normal(size=3)
    np.testing.assert_array_equal(E.fc_forward(x, np.zeros((3, 4)), b), b)
    x5, w, b = rng.normal(size=5), rng.normal(size=(3, 5)), rng.normal(size=3)
    hand = [sum(w[i, j] * x5[j] for j in range(5)) + b[i] for i in range(3)]
    assert np.max(np.abs(E.fc_forward(x5, w, b) - hand)) < 1e-12
    with pytest.raises(InvalidShape):
        E.fc_forward(rng.normal(size=6), w, b)


def test_softmax_examples():
    np.testing.assert_array_equal(E.softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    p = E.softmax(np.array([1000.0, 0.0]))
    assert np.isfinite(p).all() and p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-1e3, 1e3))
def test_softmax_shift_invariant_and_normalised(a, b, c):
    p = E.softmax(np.array([a, b]))
    q = E.softmax(np.array([a + c, b + c]))
    np.testing.assert_allclose(p, q, atol=1e-12)
    assert abs(p.sum() - 1.0) < 1e-12 and np.all((p >= 0) & (p <= 1))


# -- forward and gradients ---------------------------------------------------


def test_forward_zero_final_layer_gives_bias(rng):
    spec, w = small_model()
    i = spec.classifier_layer
    k, _ = w.params[i]
    w.params[i] = (np.zeros_like(k), np.array([0.3, -0.7]))
    logits, probs, _ = E.forward(spec, w, rng.normal(size=spec.input_shape))
    np.testing.assert_array_equal(logits, [0.3, -0.7])
    assert abs(probs.sum() - 1) < 1e-12


def test_forward_deterministic(rng):
    spec, w = small_model()
    x = rng.normal(size=spec.input_shape)
    a = E.forward(spec, w, x, record_trace=True)
    b = E.forward(spec, w, x, record_trace=True)
    assert a[0].tobytes() == b[0].tobytes()
    for oa, ob in zip(a[2].outputs, b[2].outputs):
        assert oa.tobytes() == ob.tobytes()


def test_forward_matches_layer_composition(rng):
    spec, w = small_model(hidden=5)
    x = rng.normal(size=spec.input_shape)
    logits, probs, trace = E.forward(spec, w, x, record_trace=True)
    h = E.conv_forward(x[None], *w.params[0])
    h = E.relu(h)
    h, _ = E.maxpool_forward(h)
    h = E.conv_forward(h, *w.params[4])
    h = E.relu(h).ravel()
    h = E.relu(E.fc_forward(h, *w.params[7]))
    z = E.fc_forward(h, *w.params[9])
    np.testing.assert_allclose(logits, z, rtol=0, atol=1e-12)
    np.testing.assert_allclose(probs, E.softmax(z), atol=1e-12)
    assert [o.shape for o in trace.outputs] == spec.shapes()


def test_forward_rejects_wrong_shape(rng):
    spec, w = small_model()
    with pytest.raises(InvalidShape):
        E.forward(spec, w, rng.normal(size=(5, 16)))


def test_gradient_of_linear_neuron_is_weight(rng):
    spec = E.ModelSpec((E.flatten(), E.fc(2), E.softmax_layer()), (3, 5))
    w = E.init_weights(spec, rng)
    g = E.input_gradient(spec, w, rng.normal(size=(3, 5)), E.class_neuron(spec, 1))
    np.testing.assert_array_equal(g, w.params[1][0][1].reshape(3, 5))


def _fd_gradient_check(spec, w, x, sel, coords, h=1e-5):
    g = E.input_gradient(spec, w, x, sel)
    errs = []
    for c, t in coords:
        xp, xm = x.copy(), x.copy()
        xp[c, t] += h
        xm[c, t] -= h
        ap = E.unit_activation(E.layer_outputs(spec, w, xp[None], sel.layer), sel.unit)[0]
        am = E.unit_activation(E.layer_outputs(spec, w, xm[None], sel.layer), sel.unit)[0]
        num = (ap - am) / (2 * h)
        errs.append(abs(g[c, t] - num) / (abs(num) + 1e-8))
    return max(errs)


def test_gradient_matches_finite_differences(rng):
    spec, w = small_model(hidden=6, seed=3)
    x = rng.normal(size=spec.input_shape)
    coords = list(zip(rng.integers(0, 6, 50), rng.integers(0, 16, 50)))
    assert _fd_gradient_check(spec, w, x, E.class_neuron(spec, 0), coords) < 1e-4


@pytest.mark.parametrize("layer,unit", [(0, 1), (4, 2), (7, 3)])
def test_gradient_of_inner_units(rng, layer, unit):
    spec, w = small_model(hidden=6, seed=4)
    x = rng.normal(size=spec.input_shape)
    coords = list(zip(rng.integers(0, 6, 20), rng.integers(0, 16, 20)))
    assert _fd_gradient_check(spec, w, x, E.NeuronSelector(layer, unit), coords) < 1e-4


def test_dead_relu_gives_zero_gradient(rng):
    spec = E.ModelSpec((E.flatten(), E.fc(3), E.relu_layer(), E.fc(2), E.softmax_layer()), (2, 3))
    w = E.init_weights(spec, rng)
    k, _ = w.params[1]
    w.params[1] = (k, np.array([-1e3, 0.0, 0.0]))
    g = E.input_gradient(spec, w, rng.normal(size=(2, 3)), E.NeuronSelector(2, 0))
    assert np.all(g == 0)


def test_invalid_selectors():
    spec, w = small_model()
    with pytest.raises(InvalidSelector):
        E.input_gradient(spec, w, np.zeros(spec.input_shape), E.NeuronSelector(99, 0))
    with pytest.raises(InvalidSelector):
        E.input_gradient(spec, w, np.zeros(spec.input_shape), E.NeuronSelector(0, 4))
    with pytest.raises(InvalidSelector):
        E.check_selector(spec, E.NeuronSelector(len(spec.layers) - 1, 0))
    with pytest.raises(InvalidSelector):
        E.class_neuron(spec, 2)


def test_batched_gradient_equals_single(rng):
    spec, w = small_model(seed=5)
    x = rng.normal(size=(4, *spec.input_shape))
    sel = E.class_neuron(spec, 1)
    gb = E.input_gradient(spec, w, x, sel)
    for n in range(4):
        np.testing.assert_allclose(gb[n], E.input_gradient(spec, w, x[n], sel), atol=1e-13)


# -- properties --------------------------------------------------------------


@st.composite
def random_specs(draw):
    h = draw(st.integers(1, 12))
    w = draw(st.integers(3, 30))
    layers = []
    shape = (h, w)
    for _ in range(draw(st.integers(0, 3))):
        kh = draw(st.integers(1, min(3, shape[0])))
        kw = draw(st.integers(1, min(4, shape[1])))
        layers.append(E.conv(draw(st.integers(1, 3)), kh, kw))
        shape = (shape[0] - kh + 1, shape[1] - kw + 1)
        layers.append(E.relu_layer())
        if draw(st.booleans()):
            layers += [E.maxpool(), E.dropout(0.25)]
            shape = (-(-shape[0] // 2), -(-shape[1] // 2))
    layers.append(E.flatten())
    if draw(st.booleans()):
        layers += [E.fc(draw(st.integers(1, 5))), E.relu_layer()]
    layers += [E.fc(2), E.softmax_layer()]
    return E.ModelSpec(tuple(layers), (h, w)), draw(st.integers(0, 2**31))


@settings(max_examples=40, deadline=None)
@given(random_specs())
def test_forward_shapes_match_propagation(case):
    spec, seed = case
    rng = np.random.default_rng(seed)
    w = E.init_weights(spec, rng)
    _, probs, trace = E.forward(spec, w, rng.normal(size=spec.input_shape), record_trace=True)
    assert [o.shape for o in trace.outputs] == E.shape_propagate(spec)
    assert abs(probs.sum() - 1) < 1e-12 and np.all(np.isfinite(trace.logits))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
def test_pool_switches_lie_in_their_window(d, h, w, seed):
    x = np.random.default_rng(seed).normal(size=(d, h, w))
    out, sw = E.maxpool_forward(x)
    rows, cols = sw.positions()
    ho, wo = out.shape[1:]
    assert np.all(rows // 2 == np.arange(ho)[:, None]) and np.all(cols // 2 == np.arange(wo)[None, :])
    assert np.all(rows < h) and np.all(cols < w)
    picked = np.take_along_axis(x.reshape(d, -1), sw.index.reshape(d, -1), axis=1).reshape(out.shape)
    np.testing.assert_array_equal(picked, out)


def test_unpool_rejects_bad_switches(rng):
    _, sw = E.maxpool_forward(rng.normal(size=(1, 4, 4)))
    with pytest.raises(SwitchMismatch):
        E.unpool(np.zeros((1, 3, 2)), sw)
    bad = E.PoolSwitches(np.zeros((1, 2, 2), dtype=int), (4, 4))
    with pytest.raises(SwitchMismatch):
        E.unpool(np.ones((1, 2, 2)), bad)


def test_engine_outputs_finite_for_large_inputs(rng):
    spec, w = small_model()
    x = rng.normal(size=spec.input_shape) * 1e6
    logits, probs, _ = E.forward(spec, w, x)
    assert np.isfinite(logits).all() and np.isfinite(probs).all()
