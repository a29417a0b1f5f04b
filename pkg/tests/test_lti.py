import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabcodes.lti import (
    DELAY,
    ClosedLoopSystem,
    GeneralizedPlant,
    LoopUnstableError,
    StateSpace,
    TransferFunction,
    UnstableSystemError,
    calibrate_beta,
    controller,
    example_plant,
    h2_norm_sq,
    loop_metrics,
    reference_filters,
    sensitivity,
    tf_to_ss,
)


def impulse_energy(tf, n=4000):
    return float(np.sum(tf.impulse(n) ** 2))


class TestTransferFunction:
    def test_normalizes_leading_denominator(self):
        tf = TransferFunction([2.0, 1.0], [2.0, -1.0])
        assert tf.den[0] == 1.0
        np.testing.assert_allclose(tf.num, [1.0, 0.5])

    def test_improper_rejected(self):
        with pytest.raises(ValueError):
            TransferFunction([1.0], [0.0, 1.0])

    def test_immutable(self):
        tf = TransferFunction([1.0])
        with pytest.raises(AttributeError):
            tf.num = np.array([2.0])

    def test_algebra_matches_evaluation(self):
        a = TransferFunction([1.0, 0.2], [1.0, -0.5])
        b = TransferFunction([0.0, 1.0], [1.0, 0.3])
        z = 1.7 + 0.4j
        assert (a + b)(z) == pytest.approx(a(z) + b(z))
        assert (a * b)(z) == pytest.approx(a(z) * b(z))
        assert (a / TransferFunction([1.0, 0.1]))(z) == pytest.approx(a(z) / (1 + 0.1 / z))
        assert (a - 1.0)(z) == pytest.approx(a(z) - 1.0)

    def test_minreal_cancels(self):
        tf = TransferFunction(np.convolve([1, -0.5], [1, 0.2]), np.convolve([1, -0.5], [1, -0.9]))
        r = tf.minreal()
        assert len(r.den) == 2
        np.testing.assert_allclose(r.impulse(30), tf.impulse(30), atol=1e-12)


class TestNorms:
    def test_first_order(self):
        assert h2_norm_sq(TransferFunction([1.0], [1.0, -0.5])) == pytest.approx(4 / 3)

    def test_constant_and_delay(self):
        assert h2_norm_sq(TransferFunction([2.0])) == pytest.approx(4.0)
        assert h2_norm_sq(DELAY) == pytest.approx(1.0)

    def test_unstable_raises(self):
        with pytest.raises(UnstableSystemError, match="pole"):
            h2_norm_sq(TransferFunction([1.0], [1.0, -4.0]))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-0.9, 0.9), min_size=1, max_size=3),
           st.lists(st.floats(-2, 2), min_size=1, max_size=4))
    def test_gramian_matches_impulse_energy(self, poles, num):
        den = np.poly(poles)
        tf = TransferFunction(num, den)
        assert h2_norm_sq(tf) == pytest.approx(impulse_energy(tf), rel=1e-6, abs=1e-9)

    def test_realization_impulse(self):
        tf = TransferFunction([0.5, 1.0, -0.3], [1.0, -0.2, 0.05])
        ss = tf_to_ss(tf)
        np.testing.assert_allclose(ss.impulse(25), tf.impulse(25), atol=1e-12)

    def test_statespace_dimension_check(self):
        with pytest.raises(ValueError):
            StateSpace(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), np.zeros((1, 1)))


class TestLoop:
    def test_sensitivity_of_reference_filters(self):
        S = sensitivity(example_plant())
        np.testing.assert_allclose(S.impulse(40), TransferFunction([1, -4], [1, -0.3]).impulse(40),
                                   atol=1e-9)

    @pytest.mark.parametrize("a", [0.25, 0.3, 0.5])
    def test_snorm_closed_form(self, a):
        m = loop_metrics(example_plant(a))
        assert m.snorm == pytest.approx((4 - a) ** 2 / (1 - a * a), rel=1e-9)

    def test_min_rate_two_bits_at_optimum(self):
        m = loop_metrics(example_plant(0.25))
        assert m.min_rate == pytest.approx(2.0, rel=1e-9)
        assert isinstance(m.min_rate, float)

    def test_constant_lw_sensitivity(self):
        P = TransferFunction([0.0, 1.0], [1.0, -0.2])
        loop = ClosedLoopSystem(GeneralizedPlant.from_siso(P), TransferFunction([1.0]),
                                TransferFunction([0.5]), TransferFunction([0.0]))
        S = sensitivity(loop)
        np.testing.assert_allclose(S.impulse(20), TransferFunction([1.0], [1.0, -0.5]).impulse(20),
                                   atol=1e-12)

    def test_metric_norms_match_transfer_function_route(self):
        loop = example_plant()
        m = loop_metrics(loop)
        F, L_w, L_y = reference_filters()
        P = loop.plant.block(1, 1)
        S = sensitivity(loop)
        assert m.ly_norm == pytest.approx(h2_norm_sq((L_y * P * S).minreal()), rel=1e-6)
        assert m.noise_gain == pytest.approx(h2_norm_sq((P * F * S).minreal()), rel=1e-6)
        K = controller(loop)
        floor = h2_norm_sq((P / (1 - P * K)).minreal())
        assert m.perf_floor == pytest.approx(floor, rel=1e-6)

    def test_metrics_identities(self):
        m = loop_metrics(example_plant(sigma_q2=2.0))
        assert m.sigma_v2 == pytest.approx(m.gamma * 2.0)
        assert m.sigma_e2 == pytest.approx(m.perf_floor + m.noise_gain * 2.0)

    def test_calibrate_beta(self):
        loop = calibrate_beta(example_plant(), 133.0, 6.3)
        m = loop_metrics(loop.with_(sigma_q2=6.3))
        assert m.sigma_v2 == pytest.approx(133.0)

    def test_non_stabilizing_filters(self):
        P = TransferFunction([0.0, 1.0], [1.0, -4.0])
        loop = ClosedLoopSystem(GeneralizedPlant.from_siso(P), TransferFunction([1.0]),
                                TransferFunction([0.0]), TransferFunction([0.0]))
        with pytest.raises(LoopUnstableError):
            loop_metrics(loop)
