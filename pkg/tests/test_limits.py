import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from pdpnet.limits import (CenteringError, ErgodicityError, averaged_rates, averaging_defect,
                           averaging_defect_vector, build_limit, build_regime_a, build_regime_b,
                           build_regime_c, build_regime_d, fast_block, invariant_law,
                           limit_initial_state, probe_regime_d_constants, solve_poisson,
                           stationary_distribution)
from pdpnet.model import ModelError, RegimeError, classify, parse_model, reference_model
from pdpnet.pdp import FlowConfig, run_pdp_ensemble


def cl(name, regime):
    return classify(reference_model(name), regime)


def dense_stationary(Q):
    """Oracle: least squares on [Q^T; 1] nu = [0; 1]."""
    K = Q.shape[0]
    A = np.vstack([Q.T, np.ones((1, K))])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


# --- regime A / B ------------------------------------------------------------------

def test_regime_a_characteristics():
    spec = build_regime_a(cl("GENE1", "A"))
    y = np.array([[0.5], [0.5]])
    nu = np.array([[0], [1]])
    np.testing.assert_allclose(spec.field(y, nu)[:, 0], [-0.5, 3.5])
    np.testing.assert_allclose(spec.rate(y, nu), [2.0, 1.0])
    y2, nu2 = spec.transition(y, nu, np.full((2, 1), 0.5))
    np.testing.assert_array_equal(nu2[:, 0], [1, 0])
    np.testing.assert_array_equal(y2, y)


def test_regime_a_initial_state():
    y0, nu0 = limit_initial_state(cl("GENE1", "A"))
    assert y0.tolist() == [0.0] and nu0.tolist() == [0]


def test_regime_b_without_s2_equals_regime_a():
    c = cl("GENE1", "A")
    a = build_regime_a(c)
    b = build_regime_b(classify(c.model, "B"))
    P = np.linspace(0.0, 10.0, 100)[:, None]
    for G in (0, 1):
        nu = np.full((100, 1), G)
        np.testing.assert_allclose(b.field(P, nu), a.field(P, nu), atol=1e-12, rtol=0)
        np.testing.assert_allclose(b.rate(P, nu), a.rate(P, nu), atol=1e-12, rtol=0)
        u = np.linspace(0.01, 0.99, 100)[:, None]
        ya, na = a.transition(P, nu, u)
        yb, nb = b.transition(P, nu, u)
        np.testing.assert_allclose(yb, ya, atol=1e-12, rtol=0)
        np.testing.assert_array_equal(nb, na)


def test_regime_b_burst_channel():
    spec = build_regime_b(cl("GENE1B", "B"))
    y = np.array([[1.0]])
    nu = np.array([[1]])
    # G = 1: off at rate 1, burst at rate 1; the upper half of u selects the burst
    assert spec.rate(y, nu)[0] == pytest.approx(2.0)
    y2, nu2 = spec.transition(y, nu, np.array([[0.75]]))
    assert y2[0, 0] == pytest.approx(1.5) and nu2[0, 0] == 1
    y3, nu3 = spec.transition(y, nu, np.array([[0.25]]))
    assert y3[0, 0] == 1.0 and nu3[0, 0] == 0


def test_regime_mismatch():
    with pytest.raises(RegimeError):
        build_regime_c(cl("GENE1", "A"))


# --- averaging --------------------------------------------------------------------

def test_gene1f_invariant_law_and_averaged_rates():
    c = cl("GENE1F", "C")
    Q = fast_block(c).generator_at({"P": 0.7})
    np.testing.assert_allclose(Q, [[-2.0, 2.0], [1.0, -1.0]])
    nu = stationary_distribution(Q)
    np.testing.assert_allclose(nu, dense_stationary(Q), atol=1e-12, rtol=0)
    np.testing.assert_allclose(nu, [1 / 3, 2 / 3], atol=1e-12, rtol=0)
    rates = averaged_rates(c, {"P": 0.7})
    assert abs(rates["R_prod"] - 8 / 3) < 1e-12
    assert rates["R_deg"] == pytest.approx(0.7)
    states, law = invariant_law(c, {"P": 0.7})
    assert states.tolist() == [[0], [1]]
    np.testing.assert_allclose(law, nu)


def test_poisson_solution():
    Q = np.array([[-2.0, 2.0], [1.0, -1.0]])
    h = solve_poisson(Q, [2.0, -1.0])
    np.testing.assert_allclose(h, [-2 / 3, 1 / 3], atol=1e-10, rtol=0)
    assert np.abs(Q @ h - [2.0, -1.0]).max() <= 1e-10


def test_poisson_rejects_uncentered():
    with pytest.raises(CenteringError):
        solve_poisson(np.array([[-2.0, 2.0], [1.0, -1.0]]), [1.0, 1.0])


def random_generator(draw_rates):
    K = int(np.sqrt(len(draw_rates) + 0.5)) or 1
    R = np.array(draw_rates[:K * K]).reshape(K, K)
    Q = R - np.diag(np.diag(R))
    Q -= np.diag(Q.sum(axis=1))
    return Q


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6).flatmap(lambda K: st.lists(st.floats(0.05, 10.0), min_size=K * K, max_size=K * K)))
def test_stationary_matches_dense_oracle(rates):
    Q = random_generator(rates)
    nu = stationary_distribution(Q)
    assert abs(nu.sum() - 1.0) < 1e-12 and (nu >= 0).all()
    np.testing.assert_allclose(nu, dense_stationary(Q), atol=1e-10)
    np.testing.assert_allclose(nu @ Q, 0.0, atol=1e-10 * np.abs(Q).max())


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6).flatmap(lambda K: st.lists(st.floats(0.05, 10.0), min_size=K * K + K,
                                                     max_size=K * K + K)))
def test_poisson_solution_is_centered(values):
    K = int(np.floor(np.sqrt(len(values))))
    Q = random_generator(values[:K * K])
    nu = stationary_distribution(Q)
    g = np.array(values[K * K:K * K + K])
    g = g - nu @ g
    h = solve_poisson(Q, g)
    assert abs(nu @ h) < 1e-9
    np.testing.assert_allclose(Q @ h, g, atol=1e-9)


def test_reducible_chain_names_classes():
    Q = np.array([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]])
    with pytest.raises(ErgodicityError, match=r"\[0, 1\].*\[2\]"):
        stationary_distribution(Q)


def test_single_state_block():
    assert stationary_distribution(np.zeros((1, 1))).tolist() == [1.0]


def test_averaging_defect():
    c = cl("GENE1F", "C")
    f = lambda s: s["P"]  # noqa: E731
    g = averaging_defect_vector(f, c, {"P": 0.7})
    np.testing.assert_allclose(g, [8 / 3, -4 / 3], atol=1e-6)
    assert averaging_defect(f, c, {"P": 0.7, "G": 1}) == pytest.approx(-4 / 3, abs=1e-6)
    exact = averaging_defect_vector(f, c, {"P": 0.7}, grad=lambda s: [1.0])
    np.testing.assert_allclose(exact, [8 / 3, -4 / 3], atol=1e-13)


def test_regime_c_characteristics():
    spec = build_regime_c(cl("GENE1F", "C"))
    y = np.array([[0.0], [1.0]])
    nu = np.zeros((2, 0), dtype=np.int64)
    np.testing.assert_allclose(spec.field(y, nu)[:, 0], [8 / 3, 8 / 3 - 1.0], atol=1e-12)
    np.testing.assert_array_equal(spec.rate(y, nu), [0.0, 0.0])


def test_fast_range_leak_is_reported():
    text = reference_model_text("gene1f").replace("rate = k_on*(1-G)", "rate = k_on")
    with pytest.raises(ModelError, match="fast range"):
        averaged_rates(classify(parse_model(text), "C"), {"P": 0.5})


def reference_model_text(name):
    from importlib import resources
    return resources.files("pdpnet").joinpath("models", f"{name}.net").read_text()


# --- regime D ---------------------------------------------------------------------

def test_burst1_constants():
    k = probe_regime_d_constants(cl("BURST1", "D"))
    assert k.alpha == 2.0 and k.M_lambda == 0.5


def test_burst1_jump_target():
    spec = build_regime_d(cl("BURST1", "D"))
    u = np.exp(-np.array([[2.0], [0.5]]))   # exponential draws 2 and 0.5
    y, _ = spec.transition(np.array([[1.0], [0.0]]), np.zeros((2, 0)), u)
    # dP/dLambda = k / b = 0.5
    np.testing.assert_allclose(y[:, 0], [2.0, 0.25], rtol=1e-12)


def test_burst1_time_sampler_agrees():
    c = cl("BURST1", "D")
    a = build_regime_d(c, jump_sampler="hazard_time")
    b = build_regime_d(c, jump_sampler="time", config=FlowConfig(dt_max=1e-3))
    y = np.array([[0.3]])
    u = np.array([[0.4]])
    ya, _ = a.transition(y, np.zeros((1, 0)), u)
    yb, _ = b.transition(y, np.zeros((1, 0)), u)
    assert abs(ya[0, 0] - yb[0, 0]) < 1e-8


def test_burst1_jump_operator_matches_quadrature():
    spec = build_regime_d(cl("BURST1", "D"))
    f = lambda s: np.sin(s["P"]) / (1 + s["P"] ** 2)  # noqa: E731
    for p in (0.0, 0.4, 3.0):
        ref = 0.5 * integrate.quad(lambda e: np.exp(-e) * (f({"P": p + 0.5 * e}) - f({"P": p})),
                                   0, np.inf, limit=200)[0]
        got = spec.jump_operator(f, np.array([[p]]), np.zeros((1, 0)))[0]
        assert abs(got - ref) < 1e-9


def test_regime_d_drift_and_rate():
    spec = build_limit(cl("BURST1", "D"))
    y = np.array([[2.0]])
    assert spec.field(y, None)[0, 0] == pytest.approx(-2.0)
    assert spec.rate(y, None)[0] == pytest.approx(0.5)
    assert spec.d == 0


def test_regime_d_rejects_vanishing_off_rate():
    text = reference_model_text("burst1").replace("b = 2.0", "b = 0.0")
    with pytest.raises(RegimeError):
        build_regime_d(classify(parse_model(text), "D"))


def test_limit_ensembles_run_for_every_model():
    for name, regime in [("GENE1", "A"), ("GENE1B", "B"), ("GENE1F", "C"), ("BURST1", "D")]:
        c = cl(name, regime)
        ens = run_pdp_ensemble(build_limit(c), limit_initial_state(c), 1.0, 20, [0.5, 1.0], 1,
                               FlowConfig(dt_max=0.01))
        assert np.isfinite(ens.y).all() and ens.n_truncated == 0
