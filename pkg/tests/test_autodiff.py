import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixfunn import autodiff as ad
from mixfunn.network import build_model, make_spec
from mixfunn.physics import FunctionModel, jsin, total_loss
from mixfunn.problems import damped_oscillator


def cube(cols):
    t = cols[0]
    return t * t * t


class TestEvalJet:
    def test_cubic_stub(self):
        # u = t^3: u' = 3t^2 = 12 and u'' = 6t = 12 at t = 2
        jv = ad.eval_jet(FunctionModel(cube), [2.0], wrt=(0,), order=2)
        assert jv.value == 8.0
        assert jv.d1[0] == 12.0
        assert jv.second(0, 0) == 12.0

    def test_sine_at_origin(self):
        jv = ad.eval_jet(FunctionModel(lambda c: jsin(c[0])), [0.0], wrt=(0,), order=2)
        assert (jv.value, jv.d1[0], jv.second(0, 0)) == (0.0, 1.0, 0.0)

    def test_seeded_input_is_identity(self):
        jv = ad.eval_jet(FunctionModel(lambda c: c[1], 2), [0.3, -1.2], wrt=(0, 1), order=2)
        assert jv.value == -1.2
        assert jv.d1 == {0: 0.0, 1: 1.0}
        assert all(v == 0.0 for v in jv.d2.values())

    def test_mixed_second_derivative_is_symmetric(self):
        stub = FunctionModel(lambda c: jsin(c[0] * c[1]), 2)
        jv = ad.eval_jet(stub, [0.4, 0.9], wrt=(0, 1), order=2)
        x, y = 0.4, 0.9
        assert jv.second(0, 1) == jv.second(1, 0)
        np.testing.assert_allclose(jv.second(0, 1), np.cos(x * y) - x * y * np.sin(x * y), rtol=1e-14)

    def test_order_three_rejected(self):
        with pytest.raises(ValueError):
            ad.eval_jet(FunctionModel(cube), [1.0], order=3)

    def test_kink_is_not_an_error(self):
        model = build_model(make_spec("mix2funn", 1), 0)
        model.params[model.segment("preact_bias", 0).slice] = 0.0
        jv = ad.eval_jet(model, [0.0], order=2)
        assert np.isfinite(jv.value) and np.isfinite(jv.second(0, 0))

    @pytest.mark.parametrize("variant", ["mixfunn", "mix2funn", "mlp", "hybrid"])
    def test_jets_match_finite_differences(self, variant):
        kw = {"hidden": (6, 5)} if variant in ("mlp", "hybrid") else {}
        model = build_model(make_spec(variant, 1, **kw), 3)
        t, h = 0.7, 1e-4
        jv = ad.eval_jet(model, [t], order=2)
        f = lambda s: model.forward(np.array([[s]]))[0]
        d1 = (f(t + h) - f(t - h)) / (2 * h)
        d2 = (f(t + h) - 2 * f(t) + f(t - h)) / h**2
        np.testing.assert_allclose(jv.d1[0], d1, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(jv.second(0, 0), d2, rtol=1e-5, atol=1e-6)


class TestTape:
    def test_topological_order(self):
        model = build_model(make_spec("mix2funn", 1), 1)
        tape = ad.Tape()
        theta = tape.variable(model.params)
        model.jet(tape, np.linspace(0, 1, 5)[:, None], (0,), 2, theta=theta)
        for node in tape.nodes:
            assert all(p.index < node.index for p in node.parents)

    def test_replay_is_bit_exact(self):
        model = build_model(make_spec("mix2funn", 2), 2)
        tape = ad.Tape()
        theta = tape.variable(model.params)
        model.jet(tape, np.random.default_rng(0).random((7, 2)), (0, 1), 2, theta=theta)
        values = tape.replay()
        for node, v in zip(tape.nodes, values):
            np.testing.assert_array_equal(node.value, v)

    def test_backward_needs_scalar(self):
        tape = ad.Tape()
        x = tape.variable(np.ones(3))
        with pytest.raises(ValueError):
            tape.backward(x * 2.0, [x])

    def test_non_finite_gradient_names_the_primitive(self):
        tape = ad.Tape()
        x = tape.variable(np.array([0.0]))
        y = ad.sum_(ad.div(tape.constant(np.array([1.0])), x * x))
        with pytest.raises(FloatingPointError, match="tape node"):
            tape.backward(y, [x])

    def test_gradients_through_take_with_repeats(self):
        def f(x):
            return ad.sum_(ad.square(ad.take_last(x, [0, 0, 2, 1])))
        err = ad.check_gradients(f, np.array([0.3, -1.1, 0.8]))
        assert err < 1e-8


class TestGradParams:
    def test_masked_entries_get_no_gradient(self):
        model = build_model(make_spec("mix2funn", 1), 0)
        model.mask[model.mix_indices()[:10]] = 0.0
        prob = damped_oscillator()
        tape = ad.Tape()
        from mixfunn.physics import LossContext

        lc = LossContext(tape, tape.variable(model.params))
        loss = total_loss(model, prob, np.linspace(0, 20, 32)[:, None], lc)
        g = ad.grad_params(loss, lc.theta, model.mask)
        assert len(g) == model.count_live()
        assert np.all(g.dense()[model.mask == 0] == 0.0)
        assert np.all(np.isfinite(g.live)) and np.any(g.live != 0)

    def test_non_finite_loss_rejected(self):
        tape = ad.Tape()
        x = tape.variable(np.array([1.0]))
        with pytest.raises(FloatingPointError):
            ad.grad_params(ad.sum_(x * np.inf), x)


class TestCheckGradients:
    def test_analytic_callable(self):
        err = ad.check_gradients(lambda x: float(np.sum(x**3)), np.array([0.5, -2.0]),
                                 grad=lambda x: 3 * x**2)
        assert err < 1e-8

    def test_kink_precondition(self):
        with pytest.raises(ValueError, match="kink"):
            ad.check_gradients(lambda x: ad.sum_(x), np.array([1e-6]), kinks=(0.0,))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=5))
    def test_elementwise_chain(self, xs):
        x0 = np.array(xs)

        def f(x):
            return ad.sum_(ad.exp(x) * x - ad.square(x) / 3.0)

        assert ad.check_gradients(f, x0) < 1e-6
