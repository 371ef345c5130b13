import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdp_oracle import brute_force, crawl, random_mdp
from quadmission.mdp import (AbstractScenario, Mdp, ModelError, MISSION_PROPERTIES, PrismError,
                             ScenarioError, build_abstract_mdp, build_mdp, check_property,
                             expected_reward, export_prism, parse_prism, properties_text,
                             reach_probability, scenario_model, scenario_text)
from quadmission.mdp.bounds import (REFERENCE_BOUNDS, ArenaGrid, BoundCheck, Envelope,
                                    check_bounds, scenario_from_dict, scenario_to_dict)
from quadmission.mdp.expr import ExprError, evaluate, parse_expr
from quadmission.mdp.scenario import search_path
from quadmission.config import ConfigError
from quadmission.engine import BatchStats

# --------------------------------------------------------------------------- expressions


@pytest.mark.parametrize("src,value", [
    ("1+2*3", 7), ("(1+2)*3", 9), ("7/2", 3.5), ("-2-3", -5), ("2-3-4", -5),
    ("!true | true", True), ("!(true | true)", False), ("1<2 & 2<3", True),
    ("true ? 1 : 2", 1), ("false => false", True), ("mod(7,3)", 1), ("mod(-1,3)", 2),
    ("ceil(7/5)", 2), ("floor(-0.5)", -1), ("pow(2,10)", 1024), ("min(3,1,2)", 1),
    ("max(3,1,2)", 3), ("log(8,2)", 3.0), ("1e-3*1000", 1.0),
])
def test_expression_values(src, value):
    assert evaluate(parse_expr(src)) == value


def test_expression_variables_and_errors():
    assert evaluate(parse_expr("x+y*2"), {"x": 1, "y": 3}) == 7
    with pytest.raises(ExprError):
        parse_expr("1 +")
    with pytest.raises(ExprError):
        parse_expr("pow(1)")
    with pytest.raises(ExprError):
        evaluate(parse_expr("z+1"), {})


names = st.sampled_from(["a", "b", "c"])
leaves = st.one_of(st.integers(-5, 20).map(str), names, st.sampled_from(["true", "false"]))


def _combine(children):
    ops = st.sampled_from(["+", "-", "*", "=", "!=", "<", "<=", "&", "|", "=>"])
    return st.one_of(
        st.tuples(children, ops, children).map(lambda t: f"({t[0]}{t[1]}{t[2]})"),
        children.map(lambda c: f"!({c})"),
        children.map(lambda c: f"-({c})"),
        st.tuples(children, children, children).map(lambda t: f"({t[0]} ? {t[1]} : {t[2]})"),
        st.tuples(children, children).map(lambda t: f"max({t[0]},{t[1]})"),
    )


@settings(max_examples=300)
@given(st.recursive(leaves, _combine, max_leaves=8))
def test_printing_is_a_parse_fixpoint(src):
    e = parse_expr(src)
    text = e.text()
    assert parse_expr(text) == e
    assert parse_expr(text).text() == text


# --------------------------------------------------------------------------- PRISM text

SMALL = """
mdp

const int N = 3;
const double p = 0.25;

formula done_f = x=N;

module walker
    x : [0..N] init 0;
    [step] x<N -> p:(x'=x+1) + 1-p:true;
    [jump] x<N-1 -> 1:(x'=x+2);
endmodule

module clock
    k : [0..10] init 0;
    [step] k<10 -> 1:(k'=k+1);
    [jump] k<9 -> 1:(k'=min(k+2,10));
endmodule

rewards "time"
    [step] true : 1;
    [jump] true : 3;
endrewards

label "done" = done_f;
"""


def test_one_command_text_shape():
    text = export_prism(parse_prism(SMALL))
    assert "[step] x<N -> p:(x'=x+1) + 1-p:true;" in text
    assert "[jump] x<N-1 -> 1:(x'=x+2);" in text


def test_property_text_verbatim():
    text = properties_text()
    for _, props in MISSION_PROPERTIES:
        for p in props:
            assert p in text
    assert 'Pmin=? [ F "MissionSuccessful" ]' in text


def test_export_parse_fixpoint_small():
    once = export_prism(parse_prism(SMALL))
    assert export_prism(parse_prism(once)) == once


@pytest.mark.parametrize("bad", [
    "mdp\nmodule m\n x : [0..2] init 0;\n [a] x<2 -> 1:(x'=x+1)\nendmodule\n",
    "dtmc\nmodule m\n x : [0..2] init 0;\nendmodule\n",
    "mdp\nmodule m\n x : [0..2] init 0;\n [a] x<2 -> 0.5:(x'=x+1);\nendmodule\n",
    "mdp\nmodule m\n x : [0..2] init 0;\n [a] x<2 -> 1:(y'=1);\nendmodule\n",
])
def test_parse_errors(bad):
    with pytest.raises((PrismError, ModelError)):
        parse_prism(bad)


# --------------------------------------------------------------------------- builder

def test_builder_synchronises_and_counts():
    mdp = build_mdp(parse_prism(SMALL))
    states = {tuple(s) for s in mdp.states}
    crawled = crawl(parse_prism(SMALL))
    assert states == set(crawled)
    assert mdp.n_states == len(crawled)
    # jump takes both modules two steps
    s0 = mdp.states.index((0, 0))
    acts = mdp.actions[mdp.state_ptr[s0]:mdp.state_ptr[s0 + 1]]
    assert sorted(acts) == ["jump", "step"]


def test_builder_deadlock_and_range_errors():
    text = "mdp\nmodule m\n x : [0..1] init 0;\n [] x=0 -> 1:(x'=1);\nendmodule\n"
    mdp = build_mdp(parse_prism(text))
    assert mdp.deadlocks == [1]
    text = "mdp\nmodule m\n x : [0..1] init 0;\n [] true -> 1:(x'=x+1);\nendmodule\n"
    with pytest.raises(ModelError, match="outside"):
        build_mdp(parse_prism(text))


def _choices_by_state(mdp):
    out = {}
    rew = next(iter(mdp.rewards.values()))
    for s in range(mdp.n_states):
        rows = []
        for c in range(mdp.state_ptr[s], mdp.state_ptr[s + 1]):
            a, b = mdp.choice_ptr[c], mdp.choice_ptr[c + 1]
            d = {}
            for t, p in zip(mdp.succ[a:b], mdp.prob[a:b]):
                d[mdp.states[t]] = d.get(mdp.states[t], 0.0) + p
            rows.append((mdp.actions[c] or "", round(float(rew[c]), 9),
                         tuple(sorted((t, round(p, 12)) for t, p in d.items()))))
        out[mdp.states[s]] = sorted(rows, key=repr)
    return out


TINY = dict(x_cells=3, y_cells=3, objects=((1, 1),), base=(0, 0), depot=(2, 2),
            battery_capacity=30, battery_low=0)


@pytest.mark.parametrize("changes", [
    dict(horizon=40),
    dict(horizon=None),
    dict(horizon=60, detect_probs=(0.7,), hover_lost_prob=0.1, battery_low=5),
])
def test_builder_matches_crawler_on_small_grid(changes):
    sc = AbstractScenario(**{**TINY, **changes})
    model = scenario_model(sc)
    mdp = build_mdp(model)
    oracle = crawl(model)
    assert mdp.n_states == len(oracle)
    assert _choices_by_state(mdp) == oracle


# --------------------------------------------------------------------------- value iteration

def test_reach_examples():
    chain = Mdp.from_choices([[{1: 0.3, 2: 0.7}], [{1: 1.0}], [{2: 1.0}]],
                             labels={"goal": [False, True, False]})
    assert reach_probability(chain, "goal", "min")[0] == pytest.approx(0.3, abs=1e-12)
    assert reach_probability(chain, "goal", "max")[0] == pytest.approx(0.3, abs=1e-12)
    assert reach_probability(chain, "goal", "max")[1] == 1.0
    diamond = Mdp.from_choices([[{1: 0.2, 2: 0.8}, {1: 0.7, 2: 0.3}], [{1: 1.0}], [{2: 1.0}]],
                               labels={"goal": [False, True, False]})
    assert reach_probability(diamond, "goal", "min")[0] == pytest.approx(0.2, abs=1e-12)
    assert reach_probability(diamond, "goal", "max")[0] == pytest.approx(0.7, abs=1e-12)


def test_reward_examples():
    chain = Mdp.from_choices([[{1: 1.0}], [{2: 1.0}], [{3: 1.0}], [{3: 1.0}]],
                             labels={"end": [False, False, False, True]},
                             rewards={"t": [[1], [1], [1], [0]]})
    assert expected_reward(chain, "t", "end", "min")[0] == pytest.approx(3.0)
    assert expected_reward(chain, "t", "end", "max")[3] == 0.0
    retry = Mdp.from_choices([[{0: 0.5, 1: 0.5}], [{1: 1.0}]], labels={"end": [False, True]},
                             rewards={"t": [[1], [0]]})
    assert expected_reward(retry, "t", "end", "min")[0] == pytest.approx(2.0, abs=1e-9)
    assert expected_reward(retry, "t", "end", "max")[0] == pytest.approx(2.0, abs=1e-9)


def test_reward_infinite_when_target_avoidable():
    m = Mdp.from_choices([[{1: 1.0}, {2: 1.0}], [{1: 1.0}], [{2: 1.0}]],
                         labels={"end": [False, True, False]}, rewards={"t": [[1, 1], [0], [0]]})
    assert expected_reward(m, "t", "end", "min")[0] == 1.0
    assert expected_reward(m, "t", "end", "max")[0] == math.inf


def test_zero_reward_loop_does_not_trap_minimum():
    m = Mdp.from_choices([[{0: 1.0}, {1: 1.0}], [{1: 1.0}]], labels={"end": [False, True]},
                         rewards={"t": [[0, 5], [0]]})
    assert expected_reward(m, "t", "end", "min")[0] == pytest.approx(5.0)


def test_check_property_parsing():
    m = Mdp.from_choices([[{1: 1.0}], [{1: 1.0}]], labels={"done": [False, True]},
                         rewards={"time": [[2], [0]]})
    assert check_property(m, 'Pmax=? [ F "done" ]') == 1.0
    assert check_property(m, 'R{"time"}min=? [ F "done" ]') == 2.0
    with pytest.raises(ValueError):
        check_property(m, 'P>0.5 [ F "done" ]')
    with pytest.raises(KeyError):
        check_property(m, 'Pmax=? [ F "nowhere" ]')


def test_mdp_structure_checks():
    with pytest.raises(ModelError):
        Mdp.from_choices([[{0: 0.5}]])
    with pytest.raises(ModelError):
        Mdp.from_choices([[]])


def _from_oracle(choices, rewards, target):
    return Mdp.from_choices(choices, labels={"t": target}, rewards={"r": rewards})


@pytest.mark.parametrize("seed", range(40))
def test_value_iteration_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    choices, rewards, target = random_mdp(rng)
    mdp = _from_oracle(choices, rewards, target)
    pmin, pmax, rmin, rmax = brute_force(choices, rewards, target)
    np.testing.assert_allclose(reach_probability(mdp, "t", "min"), pmin, atol=1e-9)
    np.testing.assert_allclose(reach_probability(mdp, "t", "max"), pmax, atol=1e-9)
    np.testing.assert_allclose(expected_reward(mdp, "r", "t", "min"), rmin, atol=1e-9)
    np.testing.assert_allclose(expected_reward(mdp, "r", "t", "max"), rmax, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_probability_bounds_ordered(seed):
    choices, rewards, target = random_mdp(np.random.default_rng(seed))
    mdp = _from_oracle(choices, rewards, target)
    lo, hi = reach_probability(mdp, "t", "min"), reach_probability(mdp, "t", "max")
    assert np.all(0 <= lo) and np.all(lo <= hi + 1e-12) and np.all(hi <= 1)
    rlo, rhi = expected_reward(mdp, "r", "t", "min"), expected_reward(mdp, "r", "t", "max")
    assert np.all(rlo <= rhi + 1e-9)


# --------------------------------------------------------------------------- abstract scenario

def _bounds(sc):
    mdp = build_abstract_mdp(sc)
    return {p: check_property(mdp, p) for _, props in MISSION_PROPERTIES for p in props}


def test_no_failure_branch_without_pf():
    b = _bounds(AbstractScenario(**{**TINY, "pf": 0.0}))
    assert b['Pmin=? [ F "fault" ]'] == 0.0
    assert b['Pmax=? [ F "fault" ]'] == 0.0


def test_single_cell_no_objects():
    sc = AbstractScenario(x_cells=1, y_cells=1, objects=(), base=(0, 0), depot=(0, 0))
    mdp = build_abstract_mdp(sc)
    assert mdp.n_states < 60
    ok = check_property(mdp, 'Pmax=? [ F "MissionSuccessful" ]')
    # the only risks are the system fault retry loop and actuator failure
    assert 0.99 < ok <= 1.0
    assert check_property(mdp, 'Pmin=? [ F "done" ]') == pytest.approx(1.0)


def test_tiny_scenario_bounds_are_consistent():
    b = _bounds(AbstractScenario(**TINY))
    lo, hi = b['Pmin=? [ F "MissionSuccessful" ]'], b['Pmax=? [ F "MissionSuccessful" ]']
    assert 0 <= lo <= hi <= 1
    flo, fhi = b['Pmin=? [ F "fault" ]'], b['Pmax=? [ F "fault" ]']
    assert 0 < flo <= fhi < 1
    assert hi + flo <= 1 + 1e-12
    assert 0 < b['R{"time"}min=? [ F "done" ]'] <= b['R{"time"}max=? [ F "done" ]']


def test_success_falls_as_pf_grows():
    prev = 1.0
    for pf in (0.0, 1e-4, 1e-3, 1e-2, 5e-2):
        hi = _bounds(AbstractScenario(**{**TINY, "pf": pf}))['Pmax=? [ F "MissionSuccessful" ]']
        assert hi <= prev + 1e-12
        prev = hi


def test_short_horizon_causes_timeouts():
    long = _bounds(AbstractScenario(**{**TINY, "horizon": 200}))
    short = _bounds(AbstractScenario(**{**TINY, "horizon": 20}))
    key = 'Pmax=? [ F "MissionSuccessful" ]'
    assert short[key] < long[key]


def test_scenario_prism_round_trip():
    sc = AbstractScenario(**{**TINY, "horizon": 50})
    text = scenario_text(sc)
    again = export_prism(parse_prism(text))
    assert export_prism(parse_prism(again)) == again
    a = build_abstract_mdp(sc)
    b = build_mdp(parse_prism(again))
    for _, props in MISSION_PROPERTIES:
        for p in props:
            assert abs(check_property(a, p) - check_property(b, p)) <= 1e-12


def test_search_path_order():
    sc = AbstractScenario(x_cells=3, y_cells=2, objects=(), base=(0, 0), depot=(0, 0))
    assert search_path(sc) == [(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (0, 1)]
    assert sc.last_cell == (0, 1)


@pytest.mark.parametrize("changes", [
    dict(objects=((5, 5),)), dict(pf=1.0), dict(detect_probs=(1.0, 0.5)),
    dict(grab_time=(2, 1)), dict(battery_low=30), dict(horizon=0), dict(x_cells=0),
])
def test_scenario_validation(changes):
    with pytest.raises(ScenarioError):
        AbstractScenario(**{**TINY, **changes})


# --------------------------------------------------------------------------- bounds

@pytest.mark.parametrize("quantity,value", [("success", 0.8750), ("fault", 0.0335),
                                            ("time", 137.2)])
def test_reference_numbers_inside_reference_bounds(quantity, value):
    lo, hi = REFERENCE_BOUNDS[quantity]
    chk = BoundCheck(quantity, lo, hi, value, 0.0, REFERENCE_BOUNDS[quantity])
    assert chk.contained and chk.width_ratio == pytest.approx(1.0)


def test_bound_check_sigma_and_width():
    chk = BoundCheck("success", 0.65, 0.80, 0.82, 0.01, (0.661, 0.891))
    assert chk.contained and chk.width_ok
    assert not BoundCheck("success", 0.65, 0.80, 0.84, 0.01, (0.661, 0.891)).contained
    assert not BoundCheck("success", 0.70, 0.80, 0.75, 0.0, (0.661, 0.891)).width_ok
    assert not BoundCheck("success", 0.70, 0.70 + 0.23 * 2.1, 0.75, 0.0, (0.661, 0.891)).width_ok
    assert "PASS" in chk.line()
    assert "FAIL" in BoundCheck("success", 0.65, 0.80, 0.9, 0.0, (0.661, 0.891)).line()


def test_envelope_and_check_bounds():
    env = Envelope()
    env.add([(0, 0)], {"success": (0.7, 0.8), "fault": (0.02, 0.03), "time": (100, 200)})
    env.add([(1, 0)], {"success": (0.6, 0.9), "fault": (0.01, 0.04), "time": (90, 210)})
    assert env.bounds("success") == (0.6, 0.9)
    stats = BatchStats(runs=100, successes=80, actuator_faults=3,
                       durations={i: 100.0 + i for i in range(100)})
    rep = check_bounds(env, stats)
    assert rep["success"].estimate == 0.8
    assert rep["time"].estimate == pytest.approx(149.5)
    assert len(rep.lines()) == 3


def test_arena_grid_cells():
    g = ArenaGrid()
    assert g.cell_of(-2.0, -3.5) == (0, 0)
    assert g.cell_of(1.99, 3.49) == (6, 3)
    assert g.cell_of(10, 10) == (6, 3)
    xlo, xhi, ylo, yhi = g.cell_box(*g.cell_of(0.3, -1.2))
    assert xlo <= 0.3 < xhi and ylo <= -1.2 < yhi


def test_scenario_dict_round_trip():
    sc = AbstractScenario(**TINY)
    assert scenario_from_dict(scenario_to_dict(sc), AbstractScenario()) == sc
    with pytest.raises(ConfigError):
        scenario_from_dict({"bogus": 1}, sc)
