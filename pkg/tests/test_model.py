import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdpnet.model import (ModelError, PropensityError, RClass, RegimeError, classify,
                          compile_network, parse_model, propensity, reference_model)
from pdpnet.rate_expr import BindError

GENE1_TEXT = """
[model]
name = GENE1
N = 100

[params]
k_on = 2.0
k_off = 1.0
k_p = 4.0
gamma = 1.0

[species]
G discrete 0
P continuous 0.0

[reactions]
R_on  | delta: G=+1 | rate = k_on*(1-G)  | order = unit
R_off | delta: G=-1 | rate = k_off*G     | order = unit
R_prod| delta: P=+1 | rate = k_p*G       | order = N
R_deg | delta: P=-1 | rate = gamma*P     | order = N
"""


def edited(old, new):
    assert old in GENE1_TEXT
    return GENE1_TEXT.replace(old, new)


def test_parse_reference_text():
    m = parse_model(GENE1_TEXT)
    assert m.name == "GENE1"
    assert len(m.species) == 2 and len(m.reactions) == 4
    assert m.params == {"k_on": 2.0, "k_off": 1.0, "k_p": 4.0, "gamma": 1.0}
    assert m.default_N == 100 and m.default_eps is None


def test_bundled_gene1_matches_text():
    a, b = reference_model("GENE1"), parse_model(GENE1_TEXT)
    assert a.params == b.params
    assert [r.name for r in a.reactions] == [r.name for r in b.reactions]


def test_duplicate_species():
    with pytest.raises(ModelError, match="duplicate"):
        parse_model(edited("P continuous 0.0", "P continuous 0.0\nP discrete 1"))


def test_unbound_rate_identifier():
    with pytest.raises((ModelError, BindError)):
        parse_model(edited("rate = k_p*G ", "rate = k_x*P "))


def test_sdelta_on_discrete_species():
    text = edited("R_deg | delta: P=-1 | rate = gamma*P     | order = N",
                  "R_deg | delta: P=-1 | rate = gamma*P     | order = N\n"
                  "R_b | delta: G=0 | sdelta: G=+0.5 | rate = G | order = unit")
    with pytest.raises(ModelError):
        parse_model(text)


def test_syntax_error_carries_line():
    with pytest.raises(ModelError) as info:
        parse_model(edited("R_off | delta: G=-1", "R_off | delta G=-1"))
    assert info.value.line is not None


def test_classify_gene1_regime_a():
    cl = classify(reference_model("GENE1"), "A")
    assert cl.class_table() == {"R_on": RClass.R_D, "R_off": RClass.R_D,
                                "R_prod": RClass.S1, "R_deg": RClass.R_C}


def test_classify_gene1f_regime_c():
    cl = classify(reference_model("GENE1F"), "C")
    assert cl.class_table() == {"R_on": RClass.S1, "R_off": RClass.S1,
                                "R_prod": RClass.S1, "R_deg": RClass.R_C}
    assert cl.D2 == ("G",) and cl.D1 == ()


def test_classify_rejects_discrete_change_in_s1():
    m = parse_model(edited("R_prod| delta: P=+1", "R_prod| delta: P=+1, G=-1"))
    with pytest.raises(RegimeError):
        classify(m, "A")


def test_regime_d_needs_theta():
    with pytest.raises(RegimeError):
        classify(reference_model("GENE1"), "D")


def test_classify_burst1():
    cl = classify(reference_model("BURST1"), "D")
    assert cl.class_of("F_on") == RClass.THETA_FLIP
    assert cl.class_of("F_off") == RClass.THETA_FLIP


def test_classify_is_idempotent():
    m = reference_model("GENE1B")
    a, b = classify(m, "B"), classify(classify(m, "B").model, "B")
    assert a.class_table() == b.class_table()
    assert a.class_of("R_burst") == RClass.S2


def test_propensity_gene1_example():
    cl = classify(reference_model("GENE1"), "A")
    a = propensity(cl, 100, None, {"G": 1, "P": 0.5})
    np.testing.assert_allclose(a, [0.0, 1.0, 400.0, 50.0])


def test_propensity_burst1_example():
    cl = classify(reference_model("BURST1"), "D")
    a = dict(zip([r.name for r in cl.model.reactions],
                 propensity(cl, 100, 0.01, {"theta": 1, "P": 1.0})))
    assert a["Prod"] == pytest.approx(10000.0)
    assert a["Deg"] == 0.0 and a["F_on"] == 0.0
    assert a["F_off"] == pytest.approx(2.0 / 0.01)


def test_negative_propensity():
    m = parse_model(edited("rate = k_off*G ", "rate = -1 "))
    with pytest.raises(PropensityError, match="R_off"):
        propensity(classify(m, "A"), 100, None, {"G": 1, "P": 0.5})


def test_missing_eps():
    cl = classify(reference_model("BURST1"), "D")
    with pytest.raises(PropensityError):
        propensity(cl, 100, None, {"theta": 1, "P": 1.0})


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10_000), st.integers(0, 1), st.floats(0, 50))
def test_propensity_homogeneous_in_n(N, G, P):
    cl = classify(reference_model("GENE1"), "A")
    a1 = propensity(cl, N, None, {"G": G, "P": P})
    a2 = propensity(cl, 2 * N, None, {"G": G, "P": P})
    order_n = np.array([r.order.value == "N" for r in cl.model.reactions])
    np.testing.assert_allclose(a2[order_n], 2 * a1[order_n], rtol=1e-15)
    np.testing.assert_array_equal(a2[~order_n], a1[~order_n])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1), st.floats(0, 20))
def test_theta_gates_are_exclusive(theta, P):
    cl = classify(reference_model("BURST1"), "D")
    a = propensity(cl, 100, 0.01, {"theta": theta, "P": P})
    for r, v in zip(cl.model.reactions, a):
        if r.gate is not None and r.gate != theta:
            assert v == 0.0


def test_compile_network_scaling():
    cl = classify(reference_model("GENE1"), "A")
    net = compile_network(cl, 100)
    np.testing.assert_array_equal(net.factor, [1.0, 1.0, 100.0, 100.0])
    np.testing.assert_array_equal(net.initial_counts(), [0, 0])
    np.testing.assert_allclose(net.scaled(np.array([1, 250])), [1.0, 2.5])
