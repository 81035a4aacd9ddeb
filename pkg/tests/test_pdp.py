import io

import numpy as np
import pytest

from pdpnet.analysis import martingale_residual
from pdpnet.pdp import (FlowConfig, FlowError, PdpSpec, generator, hazard_flow, integrate_flow,
                        run_pdp_ensemble, sample_jump_time, simulate_pdp, write_pdp_csv)

E1 = np.exp(-1.0)


def rk4_error(field, y0, exact, dt):
    y, _, _ = integrate_flow(field, [y0], 1.0, FlowConfig(dt_max=dt))
    return abs(y[0] - exact)


@pytest.mark.parametrize("field, y0, exact", [
    (lambda y: -y, 1.0, E1),
    (lambda y: 4.0 - y, 0.0, 4 * (1 - E1)),
])
def test_rk4_closed_forms(field, y0, exact):
    assert rk4_error(field, y0, exact, 1e-3) < 1e-6


@pytest.mark.parametrize("field, y0, exact", [
    (lambda y: -y, 1.0, E1),
    (lambda y: 4.0 - y, 0.0, 4 * (1 - E1)),
])
def test_rk4_fourth_order(field, y0, exact):
    # at 1e-3 the error already sits at rounding level, so the order shows on coarser steps
    coarse, fine = rk4_error(field, y0, exact, 0.1), rk4_error(field, y0, exact, 0.05)
    assert coarse / fine >= 15.0


def test_integrate_flow_knots():
    _, times, values = integrate_flow(lambda y: -y, [1.0], 0.0105, FlowConfig(dt_max=1e-3))
    assert times[-1] == 0.0105 and len(times) == 12
    assert values.shape == (12, 1)


def test_flow_errors():
    with pytest.raises(FlowError):
        integrate_flow(lambda y: y * y, [1.0], 2.0)
    with pytest.raises(FlowError):
        integrate_flow(lambda y: np.full_like(y, 10.0), [0.0], 1.0, FlowConfig(max_radius=5.0))


def const_rate_spec(lam, field=None):
    return PdpSpec(
        n=1,
        field=field or (lambda y, nu: np.zeros_like(y)),
        rate=lambda y, nu: np.full(y.shape[0], float(lam)),
        transition=lambda y, nu, u: (y, nu + 1),
        y_names=("y",), mode_names=("k",), initial_mode=(0,),
        jump_operator=None)


def test_constant_hazard_jump_time():
    jt = sample_jump_time(const_rate_spec(2.0), ([0.0], [0]), 1.0, 10.0)
    assert jt.jumped
    assert abs(jt.t - 0.5) < 1e-10


def test_quadratic_hazard_jump_time():
    # y' = 1, lam = 2y: Lambda(t) = t^2 reaches 1 at t = 1
    jumped, t, y = hazard_flow(lambda y, nu: np.ones_like(y), lambda y, nu: 2.0 * y[:, 0],
                               np.zeros((1, 1)), np.zeros((1, 0)), 1.0, 5.0, FlowConfig())
    assert jumped[0]
    assert abs(t[0] - 1.0) < 1e-9
    assert abs(y[0, 0] - 1.0) < 1e-9


def test_no_jump_before_horizon():
    jt = sample_jump_time(const_rate_spec(2.0), ([0.0], [0]), 3.0, 1.0)
    assert not jt.jumped and jt.t == 1.0


def test_negative_rate_is_a_flow_error():
    with pytest.raises(FlowError):
        sample_jump_time(const_rate_spec(-1.0), ([0.0], [0]), 1.0, 1.0)


def test_jump_counts_are_poisson():
    ens = run_pdp_ensemble(const_rate_spec(2.0), ([0.0], [0]), 1.0, 4000, [0.5, 1.0], 3,
                           FlowConfig(dt_max=0.05))
    k = ens.matrix("k")
    assert np.all(np.abs(k.mean(axis=0) - [1.0, 2.0]) < 4 * np.sqrt(np.array([1.0, 2.0]) / 4000))
    np.testing.assert_array_equal(ens.jump_counts, k[:, 1])


def test_ensemble_is_batch_invariant_and_matches_single_paths():
    spec = const_rate_spec(3.0, field=lambda y, nu: 1.0 - y)
    a = run_pdp_ensemble(spec, ([0.0], [0]), 2.0, 30, [1.0, 2.0], 9, FlowConfig(dt_max=0.01))
    b = run_pdp_ensemble(spec, ([0.0], [0]), 2.0, 30, [1.0, 2.0], 9, FlowConfig(dt_max=0.01), batch=7)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.modes, b.modes)
    tr = simulate_pdp(spec, ([0.0], [0]), 2.0, 9, FlowConfig(dt_max=0.01), stream=4)
    assert tr.jump_count == a.jump_counts[4]
    y_end, mode_end = tr.final()
    assert y_end[0] == a.y[4, 1, 0] and mode_end == (a.modes[4, 1, 0],)


def test_jumps_reset_the_flow():
    spec = PdpSpec(n=1, field=lambda y, nu: np.ones_like(y),
                   rate=lambda y, nu: np.full(y.shape[0], 1.0),
                   transition=lambda y, nu, u: (np.zeros_like(y), nu),
                   y_names=("y",))
    tr = simulate_pdp(spec, ([0.0], []), 5.0, 1, FlowConfig(dt_max=0.01))
    assert tr.jump_count > 0
    for j in tr.jumps:
        assert j.post_y[0] == 0.0
    for seg in tr.segments:
        np.testing.assert_allclose(seg.values[:, 0], seg.times - seg.t_start, atol=1e-9)


def test_pure_flow_martingale_residual():
    spec = PdpSpec(n=1, field=lambda y, nu: -y + np.sin(y),
                   rate=lambda y, nu: np.zeros(y.shape[0]),
                   transition=lambda y, nu, u: (y, nu), y_names=("y",),
                   jump_operator=lambda f, y, nu: np.zeros(y.shape[0]))
    f = lambda s: np.exp(-s["y"] ** 2)  # noqa: E731
    A = generator(spec)
    ens = run_pdp_ensemble(spec, ([1.3], []), 2.0, 3, [0.0, 2.0], 1, FlowConfig(dt_max=1e-3),
                           functionals=[lambda s: A(f, s["y"][:, None], np.zeros((s["y"].size, 0)))])
    res = f({"y": ens.y[:, 1, 0]}) - f({"y": ens.y[:, 0, 0]}) - ens.integrals[:, 1, 0]
    assert np.abs(res).max() < 1e-6
    rows = martingale_residual({"f": {(0.0, 2.0): res}})
    assert rows[0].passed


def test_constant_function_has_zero_residual():
    spec = const_rate_spec(2.0, field=lambda y, nu: 1.0 - y)
    spec = PdpSpec(**{**spec.__dict__, "jump_operator": lambda f, y, nu: np.zeros(y.shape[0])})
    A = generator(spec)
    one = lambda s: np.ones_like(s["y"])  # noqa: E731
    assert np.all(A(one, np.array([[0.3], [2.0]]), np.array([[0], [1]])) == 0.0)


def test_pdp_csv_events():
    spec = const_rate_spec(2.0, field=lambda y, nu: 1.0 - y)
    tr = simulate_pdp(spec, ([0.0], [0]), 1.5, 2, FlowConfig(dt_max=0.1))
    buf = io.StringIO()
    write_pdp_csv(tr, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,event,mode,y"
    events = [ln.split(",")[1] for ln in lines[1:]]
    assert events.count("jump_pre") == events.count("jump_post") == tr.jump_count
    assert set(events) <= {"flow_knot", "jump_pre", "jump_post"}
