import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from occgrasp.curriculum import (
    ADR_TABLE,
    AdrParamState,
    DomainSampler,
    ExpansionEvent,
    GraspCurriculum,
    GraspRange,
    adr_record_and_expand,
    replay_events,
    sample_domain,
    update_grasp_range,
)
from occgrasp.env import DomainParams

# ------------------------------------------------------------ grasp range


def test_expansion_worked_example():
    r = update_grasp_range(GraspRange(1.0, 2.0), "lo", 0.9)
    assert (r.lo, r.hi) == (0.75, 2.0)


def test_threshold_is_strict():
    r = GraspRange(1.0, 2.0)
    assert update_grasp_range(r, "lo", 0.8) == r
    assert update_grasp_range(r, "hi", 0.81).hi == 2.25


def test_saturation_at_limits():
    assert update_grasp_range(GraspRange(0.1, 3.9), "lo", 1.0).lo == 0.0
    assert update_grasp_range(GraspRange(0.1, 3.9), "hi", 1.0).hi == 4.0
    assert update_grasp_range(GraspRange(0.0, 4.0), "lo", 1.0) == GraspRange(0.0, 4.0)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        GraspRange(2.0, 1.0)
    with pytest.raises(ValueError):
        GraspRange(-0.1, 1.0)
    with pytest.raises(ValueError):
        update_grasp_range(GraspRange(1.0, 2.0), "mid", 0.9)
    with pytest.raises(ValueError):
        update_grasp_range(GraspRange(1.0, 2.0), "lo", 1.5)


def test_curriculum_buffer_cycle():
    c = GraspCurriculum(GraspRange.single(1.5))
    for _ in range(9):
        assert c.record("lo", True) is None
    ev = c.record("lo", True, step=42)
    assert ev == ExpansionEvent(42, "grasp_id", "lo", 1.5, 1.25)
    assert c.buffers["lo"] == []
    for _ in range(10):
        c.record("hi", False)
    assert c.range.hi == 1.5 and c.buffers["hi"] == []


def test_curriculum_probe_sampling():
    c = GraspCurriculum(GraspRange(1.0, 2.0), probe_probability=0.5)
    rng = np.random.default_rng(0)
    draws = [c.sample(rng) for _ in range(4000)]
    probes = [d for d in draws if d[1] is not None]
    assert abs(len(probes) / 4000 - 0.5) < 0.03
    assert all(g == (1.0 if b == "lo" else 2.0) for g, b in probes)
    assert all(1.0 <= g <= 2.0 for g, _ in draws)
    off = GraspCurriculum(GraspRange(1.0, 2.0), enabled=False, probe_probability=1.0)
    assert all(off.sample(rng)[1] is None for _ in range(100))


def test_curriculum_state_round_trip():
    c = GraspCurriculum(GraspRange.single(1.5))
    for s in [True] * 10 + [True, False]:
        c.record("lo", s)
    d = GraspCurriculum(GraspRange.single(1.5))
    d.load_state(c.to_state())
    assert d.range == c.range and d.buffers == c.buffers and d.events == c.events


# -------------------------------------------------------------------- ADR


def test_adr_table_initial_values_fit_caps():
    for spec in ADR_TABLE:
        s = AdrParamState.initial(spec)
        assert s.phi_lo == s.phi_hi == spec.initial


def test_adr_expand_and_cap():
    s = AdrParamState.initial(next(x for x in ADR_TABLE if x.name == "table_friction"))
    for _ in range(10):
        s = adr_record_and_expand(s, "hi", True)
    assert s.phi_hi == pytest.approx(0.4) and s.buffer_hi == ()
    for _ in range(30):
        s = adr_record_and_expand(s, "hi", True)
    assert s.phi_hi == 0.5


def test_adr_one_sided_parameter_never_moves_other_side():
    s = AdrParamState.initial(next(x for x in ADR_TABLE if x.name == "gripper_friction"))
    assert not s.expandable("hi")
    for _ in range(20):
        s = adr_record_and_expand(s, "hi", True)
    assert s.phi_hi == 3.0
    for _ in range(10):
        s = adr_record_and_expand(s, "lo", True)
    assert s.phi_lo == 2.0


def test_adr_failure_clears_buffer_without_moving():
    s = AdrParamState.initial(ADR_TABLE[0])
    for i in range(10):
        s = adr_record_and_expand(s, "lo", i < 8)
    assert s.phi_lo == ADR_TABLE[0].initial and s.buffer_lo == ()


def test_sampler_probe_and_bounds():
    sampler = DomainSampler.from_table(probe_probability=1.0)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(500):
        ds = sample_domain(sampler, rng)
        assert ds.probe is not None
        name, b = ds.probe
        seen.add(ds.probe)
        assert getattr(ds.params, name) == sampler.state(name).bound(b)
    expandable = {(s.name, b) for s in sampler.states for b in ("lo", "hi") if s.expandable(b)}
    assert seen == expandable


def test_sampler_draws_within_bounds():
    sampler = DomainSampler.from_table(probe_probability=0.0)
    for s in list(sampler.states):
        for b in ("lo", "hi"):
            for _ in range(10):
                sampler.record((s.name, b), True)
    rng = np.random.default_rng(1)
    bounds = sampler.bounds()
    for _ in range(200):
        p = sample_domain(sampler, rng).params
        for name, (lo, hi) in bounds.items():
            assert lo <= getattr(p, name) <= hi
    assert bounds["table_friction"] == pytest.approx((0.2, 0.4))


def test_sampler_rejects_unknown_and_duplicate():
    with pytest.raises(ValueError):
        DomainSampler([AdrParamState("not_a_field", 0, 0, 1, 1, 0, 1)])
    s = AdrParamState.initial(ADR_TABLE[0])
    with pytest.raises(ValueError):
        DomainSampler([s, s])


def test_sampler_state_round_trip():
    sampler = DomainSampler.from_table()
    for _ in range(13):
        sampler.record(("table_friction", "lo"), True, step=5)
    clone = DomainSampler.from_state(sampler.to_state())
    assert clone.states == sampler.states and clone.events == sampler.events


def test_base_domain_fields_preserved():
    sampler = DomainSampler.from_table(ADR_TABLE[:1], probe_probability=0.0)
    base = DomainParams(table_friction=0.44)
    assert sample_domain(sampler, np.random.default_rng(0), base).params.table_friction == 0.44


# ------------------------------------------------------------- event replay


@given(st.lists(st.tuples(st.integers(0, len(ADR_TABLE) - 1), st.sampled_from(["lo", "hi"]), st.booleans()),
                max_size=400))
def test_event_log_replays_monotone_ranges(ops):
    sampler = DomainSampler.from_table(buffer_size=3, success_threshold=0.5)
    initial = sampler.bounds()
    for i, b, ok in ops:
        sampler.record((ADR_TABLE[i].name, b), ok)
    history = replay_events(initial, sampler.events)
    assert history[-1] == sampler.bounds()
    for before, after in zip(history, history[1:]):
        for name in before:
            assert after[name][0] <= before[name][0] and after[name][1] >= before[name][1]
    for s, spec in zip(sampler.states, ADR_TABLE):
        assert spec.hard_lo <= s.phi_lo <= s.phi_hi <= spec.hard_hi


def test_replay_rejects_bad_logs():
    init = {"table_friction": (0.3, 0.3)}
    with pytest.raises(ValueError):
        replay_events(init, [ExpansionEvent(0, "table_friction", "lo", 0.3, 0.4)])
    with pytest.raises(ValueError):
        replay_events(init, [{"step": 0, "param": "table_friction", "boundary": "hi", "old": 0.25, "new": 0.4}])
