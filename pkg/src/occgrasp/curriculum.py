"""Boundary-driven range expansion: the grasp-ID curriculum and domain randomization.

Both engines keep a success buffer per range boundary. Episodes pinned to a
boundary ("probes") push their success flag into that buffer; once it holds
``buffer_size`` flags the mean is compared with the threshold, the boundary
moves outward by its increment if the mean is strictly above it, and the
buffer is cleared either way. Ranges never contract.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Iterable, Literal, Sequence

import numpy as np

from .env import DOMAIN_FIELDS, DomainParams

Boundary = Literal["lo", "hi"]
BOUNDARIES: tuple[Boundary, Boundary] = ("lo", "hi")
SUCCESS_THRESHOLD = 0.8
BUFFER_SIZE = 10
PROBE_PROBABILITY = 0.1
GRASP_ID_MIN, GRASP_ID_MAX = 0.0, 4.0
GRASP_EXPANSION_STEP = 0.25


def _check_boundary(b: str) -> None:
    if b not in BOUNDARIES:
        raise ValueError(f"boundary must be 'lo' or 'hi', got {b!r}")


@dataclass(frozen=True)
class ExpansionEvent:
    step: int
    param: str
    boundary: Boundary
    old: float
    new: float

    def as_dict(self) -> dict[str, Any]:
        return {"step": self.step, "param": self.param, "boundary": self.boundary, "old": self.old, "new": self.new}


# ------------------------------------------------------------- grasp curriculum


@dataclass(frozen=True)
class GraspRange:
    lo: float
    hi: float
    expansion_step: float = GRASP_EXPANSION_STEP
    success_threshold: float = SUCCESS_THRESHOLD

    def __post_init__(self) -> None:
        if not (GRASP_ID_MIN <= self.lo <= self.hi <= GRASP_ID_MAX):
            raise ValueError(f"grasp range [{self.lo}, {self.hi}] must satisfy 0 <= lo <= hi <= 4")

    @classmethod
    def single(cls, grasp_id: float) -> GraspRange:
        return cls(grasp_id, grasp_id)

    def bound(self, boundary: Boundary) -> float:
        return self.lo if boundary == "lo" else self.hi

    def expandable(self, boundary: Boundary) -> bool:
        return self.lo > GRASP_ID_MIN if boundary == "lo" else self.hi < GRASP_ID_MAX

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.lo, self.hi)) if self.hi > self.lo else self.lo

    def grid(self, n: int) -> np.ndarray:
        return np.linspace(self.lo, self.hi, n)


def update_grasp_range(rng_: GraspRange, boundary: Boundary, success_rate: float) -> GraspRange:
    """Move ``boundary`` outward by one step when ``success_rate`` is strictly above the threshold."""
    _check_boundary(boundary)
    if not 0.0 <= success_rate <= 1.0:
        raise ValueError("success_rate must be in [0, 1]")
    if success_rate <= rng_.success_threshold:
        return rng_
    if boundary == "lo":
        return replace(rng_, lo=max(GRASP_ID_MIN, rng_.lo - rng_.expansion_step))
    return replace(rng_, hi=min(GRASP_ID_MAX, rng_.hi + rng_.expansion_step))


@dataclass
class GraspCurriculum:
    """Grasp-ID range plus its two boundary buffers."""

    range: GraspRange
    buffer_size: int = BUFFER_SIZE
    probe_probability: float = PROBE_PROBABILITY
    enabled: bool = True
    buffers: dict[str, list[bool]] = field(default_factory=lambda: {"lo": [], "hi": []})
    events: list[ExpansionEvent] = field(default_factory=list)

    def sample(self, rng: np.random.Generator) -> tuple[float, Boundary | None]:
        """Grasp ID for the next episode and the boundary it probes, if any."""
        if self.enabled and rng.random() < self.probe_probability:
            cands = [b for b in BOUNDARIES if self.range.expandable(b)]
            if cands:
                b = cands[int(rng.integers(len(cands)))]
                return self.range.bound(b), b
        return self.range.sample(rng), None

    def record(self, boundary: Boundary, success: bool, step: int = 0) -> ExpansionEvent | None:
        _check_boundary(boundary)
        buf = self.buffers[boundary]
        buf.append(bool(success))
        if len(buf) < self.buffer_size:
            return None
        rate = sum(buf) / len(buf)
        buf.clear()
        old = self.range.bound(boundary)
        self.range = update_grasp_range(self.range, boundary, rate)
        new = self.range.bound(boundary)
        if new == old:
            return None
        ev = ExpansionEvent(step, "grasp_id", boundary, old, new)
        self.events.append(ev)
        return ev

    def to_state(self) -> dict[str, Any]:
        return {
            "lo": self.range.lo,
            "hi": self.range.hi,
            "buffers": {k: list(v) for k, v in self.buffers.items()},
            "events": [e.as_dict() for e in self.events],
        }

    def load_state(self, st: dict[str, Any]) -> None:
        self.range = replace(self.range, lo=float(st["lo"]), hi=float(st["hi"]))
        self.buffers = {k: [bool(x) for x in st["buffers"][k]] for k in BOUNDARIES}
        self.events = [ExpansionEvent(**e) for e in st.get("events", [])]


# --------------------------------------------------- domain randomization (ADR)


@dataclass(frozen=True)
class AdrSpec:
    """One row of the randomization table: initial value, increments, final range."""

    name: str
    initial: float
    delta_up: float | None
    delta_down: float | None
    hard_lo: float
    hard_hi: float


# Planar subset of the published table. Object depth has no planar counterpart.
ADR_TABLE: tuple[AdrSpec, ...] = (
    AdrSpec("object_size_x", 0.15, 0.01, 0.01, 0.14, 0.16),
    AdrSpec("object_size_z", 0.05, 0.01, 0.01, 0.04, 0.06),
    AdrSpec("table_friction", 0.3, 0.1, 0.1, 0.1, 0.5),
    AdrSpec("gripper_friction", 3.0, None, 1.0, 2.0, 3.0),
    AdrSpec("object_density", 86.0, 86.0, 43.0, 43.0, 172.0),
    AdrSpec("action_translation_scale", 0.03, None, 0.005, 0.02, 0.03),
    AdrSpec("action_rotation_scale", 0.2, None, 0.05, 0.1, 0.2),
    AdrSpec("initial_distance_to_wall", 0.0, 0.01, None, 0.0, 0.02),
    AdrSpec("table_offset_x", 0.5, 0.01, 0.01, 0.48, 0.52),
    AdrSpec("table_offset_z", 0.07, 0.01, 0.01, 0.055, 0.075),
)


@dataclass(frozen=True)
class AdrParamState:
    name: str
    phi_lo: float
    phi_hi: float
    delta_up: float | None
    delta_down: float | None
    hard_lo: float
    hard_hi: float
    buffer_lo: tuple[bool, ...] = ()
    buffer_hi: tuple[bool, ...] = ()
    buffer_size: int = BUFFER_SIZE
    success_threshold: float = SUCCESS_THRESHOLD

    def __post_init__(self) -> None:
        if not (self.hard_lo <= self.phi_lo <= self.phi_hi <= self.hard_hi):
            raise ValueError(f"{self.name}: bounds [{self.phi_lo}, {self.phi_hi}] outside caps "
                             f"[{self.hard_lo}, {self.hard_hi}]")

    @classmethod
    def initial(cls, spec: AdrSpec, **kw: Any) -> AdrParamState:
        return cls(spec.name, spec.initial, spec.initial, spec.delta_up, spec.delta_down,
                   spec.hard_lo, spec.hard_hi, **kw)

    def bound(self, boundary: Boundary) -> float:
        return self.phi_lo if boundary == "lo" else self.phi_hi

    def expandable(self, boundary: Boundary) -> bool:
        if boundary == "lo":
            return self.delta_down is not None and self.phi_lo > self.hard_lo
        return self.delta_up is not None and self.phi_hi < self.hard_hi

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.phi_lo, self.phi_hi)) if self.phi_hi > self.phi_lo else self.phi_lo


def adr_record_and_expand(state: AdrParamState, boundary: Boundary, episode_success: bool) -> AdrParamState:
    """Push one probe result; expand or just clear once the buffer is full."""
    _check_boundary(boundary)
    key = "buffer_lo" if boundary == "lo" else "buffer_hi"
    buf = getattr(state, key) + (bool(episode_success),)
    if len(buf) < state.buffer_size:
        return replace(state, **{key: buf})
    rate = sum(buf) / len(buf)
    state = replace(state, **{key: ()})
    if rate <= state.success_threshold:
        return state
    if boundary == "lo" and state.delta_down is not None:
        return replace(state, phi_lo=max(state.hard_lo, state.phi_lo - state.delta_down))
    if boundary == "hi" and state.delta_up is not None:
        return replace(state, phi_hi=min(state.hard_hi, state.phi_hi + state.delta_up))
    return state


@dataclass(frozen=True)
class DomainSample:
    params: DomainParams
    probe: tuple[str, Boundary] | None = None


@dataclass
class DomainSampler:
    states: list[AdrParamState]
    probe_probability: float = PROBE_PROBABILITY
    enabled: bool = True
    events: list[ExpansionEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        names = [s.name for s in self.states]
        unknown = set(names) - set(DOMAIN_FIELDS)
        if unknown:
            raise ValueError(f"unknown domain parameters: {sorted(unknown)}")
        if len(set(names)) != len(names):
            raise ValueError("duplicate domain parameters")
        if not 0.0 <= self.probe_probability <= 1.0:
            raise ValueError("probe_probability must be in [0, 1]")

    @classmethod
    def from_table(cls, table: Sequence[AdrSpec] = ADR_TABLE, *, buffer_size: int = BUFFER_SIZE,
                   success_threshold: float = SUCCESS_THRESHOLD, probe_probability: float = PROBE_PROBABILITY,
                   enabled: bool = True) -> DomainSampler:
        return cls([AdrParamState.initial(s, buffer_size=buffer_size, success_threshold=success_threshold)
                    for s in table], probe_probability, enabled)

    def state(self, name: str) -> AdrParamState:
        for s in self.states:
            if s.name == name:
                return s
        raise KeyError(name)

    def bounds(self) -> dict[str, tuple[float, float]]:
        return {s.name: (s.phi_lo, s.phi_hi) for s in self.states}

    def record(self, probe: tuple[str, Boundary], success: bool, step: int = 0) -> ExpansionEvent | None:
        name, boundary = probe
        for i, s in enumerate(self.states):
            if s.name == name:
                new = adr_record_and_expand(s, boundary, success)
                self.states[i] = new
                old_v, new_v = s.bound(boundary), new.bound(boundary)
                if old_v != new_v:
                    ev = ExpansionEvent(step, name, boundary, old_v, new_v)
                    self.events.append(ev)
                    return ev
                return None
        raise KeyError(name)

    def snapshot(self) -> DomainSampler:
        """Immutable-by-convention copy handed to rollout workers."""
        return DomainSampler(list(self.states), self.probe_probability, self.enabled, [])

    def to_state(self) -> dict[str, Any]:
        return {
            "probe_probability": self.probe_probability,
            "enabled": self.enabled,
            "params": [{f.name: (list(getattr(s, f.name)) if f.name.startswith("buffer_") and f.name != "buffer_size"
                                 else getattr(s, f.name)) for f in fields(s)} for s in self.states],
            "events": [e.as_dict() for e in self.events],
        }

    @classmethod
    def from_state(cls, st: dict[str, Any]) -> DomainSampler:
        states = []
        for p in st["params"]:
            p = dict(p)
            p["buffer_lo"] = tuple(bool(x) for x in p.get("buffer_lo", ()))
            p["buffer_hi"] = tuple(bool(x) for x in p.get("buffer_hi", ()))
            states.append(AdrParamState(**p))
        return cls(states, float(st["probe_probability"]), bool(st["enabled"]),
                   [ExpansionEvent(**e) for e in st.get("events", [])])


def sample_domain(sampler: DomainSampler, rng: np.random.Generator,
                  base: DomainParams = DomainParams()) -> DomainSample:
    """Independent uniform draw per parameter, or a probe pinned to one boundary.

    Parameters outside the sampler keep their value from ``base``.
    """
    values = {s.name: s.sample(rng) for s in sampler.states}
    probe = None
    if sampler.enabled and sampler.probe_probability > 0 and rng.random() < sampler.probe_probability:
        cands = [(s.name, b) for s in sampler.states for b in BOUNDARIES if s.expandable(b)]
        if cands:
            name, b = cands[int(rng.integers(len(cands)))]
            values[name] = sampler.state(name).bound(b)
            probe = (name, b)
    return DomainSample(replace(base, **values), probe)


def replay_events(initial: dict[str, tuple[float, float]], events: Iterable[ExpansionEvent | dict[str, Any]]
                  ) -> list[dict[str, tuple[float, float]]]:
    """Bounds after each logged event, starting from ``initial``.

    Raises ``ValueError`` if an event does not start from the current bound or
    would contract the range.
    """
    cur = dict(initial)
    out = [dict(cur)]
    for ev in events:
        e = ev if isinstance(ev, ExpansionEvent) else ExpansionEvent(**ev)
        lo, hi = cur[e.param]
        old = lo if e.boundary == "lo" else hi
        if not math.isclose(old, e.old, rel_tol=0, abs_tol=1e-12):
            raise ValueError(f"event {e} does not start from current bound {old}")
        if (e.boundary == "lo" and e.new > e.old) or (e.boundary == "hi" and e.new < e.old):
            raise ValueError(f"event {e} contracts the range")
        cur[e.param] = (e.new, hi) if e.boundary == "lo" else (lo, e.new)
        out.append(dict(cur))
    return out
