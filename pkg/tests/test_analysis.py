import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdpnet.analysis import (EmpiricalSample, convergence_study, ks_distance, martingale_residual,
                             occupation_bound, occupation_time, prelimit_generator,
                             ssa_martingale, test_functions as make_test_functions,
                             wasserstein1, write_martingale_csv, write_study_csv)
from pdpnet.model import classify, reference_model
from pdpnet.ssa import Simulator, Trajectory


def brute_ks(a, b):
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(v <= x for v in a) / len(a)
        fb = sum(v <= x for v in b) / len(b)
        best = max(best, abs(fa - fb))
    return best


def test_ks_examples():
    assert ks_distance([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_distance([0, 0], [1, 1]) == 1.0
    assert ks_distance([0, 1], [0, 3]) == 0.5


def test_w1_examples():
    assert wasserstein1([1, 2, 3], [3, 1, 2]) == 0.0
    assert wasserstein1([0, 0], [1, 1]) == 1.0
    assert wasserstein1([0, 1], [0, 3]) == 1.0


def test_empty_and_mismatched_samples():
    with pytest.raises(ValueError):
        ks_distance([], [1.0])
    with pytest.raises(ValueError):
        wasserstein1([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        EmpiricalSample([1.0, np.nan])


small_samples = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=50)


@settings(max_examples=300, deadline=None)
@given(small_samples, small_samples)
def test_ks_matches_brute_force(a, b):
    assert ks_distance(a, b) == pytest.approx(brute_ks(a, b), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(small_samples, small_samples)
def test_ks_symmetric_and_bounded(a, b):
    d = ks_distance(a, b)
    assert d == ks_distance(b, a)
    assert 0.0 <= d <= 1.0
    assert (d == 0.0) == (sorted(a) == sorted(b)) or len(a) != len(b)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-100, 100), min_size=n, max_size=n),
    st.lists(st.floats(-100, 100), min_size=n, max_size=n))))
def test_w1_symmetric_and_vanishes_only_on_equal_multisets(pair):
    a, b = pair
    d = wasserstein1(a, b)
    assert d == wasserstein1(b, a) and d >= 0
    assert (d == 0.0) == (sorted(a) == sorted(b))


def test_study_is_deterministic_and_shaped():
    c = classify(reference_model("GENE1"), "A")
    rows = convergence_study(c, [10, 30], [0.5, 1.0], 50, 17)
    again = convergence_study(c, [10, 30], [0.5, 1.0], 50, 17)
    assert rows == again
    assert len(rows) == 2 * 2
    buf = io.StringIO()
    write_study_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "scale_N,eps,probe_t,species,ks,w1,n_ssa,n_pdp,truncated_frac"
    assert lines[1].startswith("10,,0.5,P,")


def test_study_regime_d_adds_time_average():
    c = classify(reference_model("BURST1"), "D")
    rows = convergence_study(c, [(20, 0.1)], [0.5, 1.0], 30, 3)
    assert [r.probe_t for r in rows] == [0.5, 1.0, "time_avg"]
    assert rows[-1].ks == pytest.approx((rows[0].ks + rows[1].ks) / 2)
    assert rows[0].eps == 0.1


def test_martingale_rows_and_csv():
    rng = np.random.default_rng(0)
    rows = martingale_residual({"f": {(0.0, 1.0): rng.normal(size=400)}})
    assert rows[0].se > 0 and rows[0].passed
    rows = martingale_residual({"f": {(0.0, 1.0): 1.0 + rng.normal(size=400)}})
    assert not rows[0].passed
    buf = io.StringIO()
    write_martingale_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "f_name,r,t,residual,se,pass"
    assert lines[1].endswith(",false")


def test_constant_function_has_zero_prelimit_residual():
    c = classify(reference_model("GENE1"), "A")
    sim = Simulator.build(c, 50, None, 1.0)
    rows = ssa_martingale(sim, 20, {"one": lambda s: np.ones_like(s["P"])}, [(0, 1)], 2, c)
    assert rows[0].residual == 0.0 and rows[0].passed


def test_prelimit_generator_on_linear_function():
    c = classify(reference_model("GENE1"), "A")
    A = prelimit_generator(c, 100, None)
    # f = P: drift k_p G - gamma P
    got = A(lambda s: s["P"], {"G": np.array([0.0, 1.0]), "P": np.array([0.5, 0.5])})
    np.testing.assert_allclose(got, [-0.5, 3.5], atol=1e-12)


def test_unbounded_function_is_flagged():
    c = classify(reference_model("GENE1"), "A")
    sim = Simulator.build(c, 50, None, 1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = ssa_martingale(sim, 5, {"blow": lambda s: np.exp(1e3 * s["P"])}, [(0, 1)], 2, c)
    assert rows[0].unbounded
    assert any("unbounded" in str(w.message) for w in caught)


def test_test_function_set():
    fns = make_test_functions(["P"], ["G"])
    assert set(fns) == {"damp_P", "sat_G", "damp_P*sat_G"}
    s = {"P": np.array([10.0]), "G": np.array([1.0])}
    assert fns["damp_P"](s)[0] == pytest.approx(10 * np.exp(-1))


def fake_theta_trajectory(times, thetas, T):
    stoich = np.array([[1, 0], [-1, 0]], dtype=np.int64)
    rx = [0 if d > 0 else 1 for d in np.diff([0] + list(thetas))]
    return Trajectory(("theta", "P"), ("on", "off"), 100, stoich, np.array([False, True]),
                      np.array([0, 0]), np.array(times, float), np.array(rx, np.int64), T)


def test_occupation_examples():
    never = fake_theta_trajectory([], [], 10.0)
    assert occupation_time([never], 10.0).mean == 0.0
    once = fake_theta_trajectory([2.0, 2.5], [1, 0], 10.0)
    assert occupation_time([once], 10.0).mean == pytest.approx(0.5)
    open_end = fake_theta_trajectory([9.0], [1], 10.0)
    assert occupation_time([open_end], 10.0).mean == pytest.approx(1.0)
    with pytest.raises(KeyError):
        occupation_time([once], 10.0, theta="switch")


def test_occupation_bound_formula():
    assert occupation_bound(0.01, 0.5, 2.0, 10.0) == pytest.approx(0.03)
