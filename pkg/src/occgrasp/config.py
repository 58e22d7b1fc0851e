"""Run configuration: nested sections, YAML round trip and validation with field paths."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .arm import ControllerConfig
from .curriculum import ADR_TABLE, BUFFER_SIZE, PROBE_PROBABILITY, SUCCESS_THRESHOLD, GraspRange
from .env import AblationConfig, DomainParams, EnvConfig, RewardParams
from .sac import SacConfig
from .selection import Strategy

MODES = ("train", "eval", "sweep", "replay")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field (e.g. ``rl.gamma``)."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class EnvSection:
    domain: DomainParams = field(default_factory=DomainParams)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    reward_alpha1: float = 50.0
    reward_alpha2: float = 2.0
    reward_beta: float = 200.0
    success_translation: float = 0.03
    success_rotation_deg: float = 10.0
    episode_steps: int = 40
    control_ticks_per_step: int = 50
    physics_ticks_per_control: int = 10
    joint_noise: float = 0.02
    kp_pos: float = 300.0
    kp_rot: float = 30.0
    max_force: float = 30.0
    max_torque: float = 10.0

    def to_env_config(self) -> EnvConfig:
        reward = RewardParams(alpha1=self.reward_alpha1, alpha2=self.reward_alpha2, beta=self.reward_beta,
                              eps_T=self.success_translation, eps_theta=math.radians(self.success_rotation_deg))
        ctrl = ControllerConfig(self.kp_pos, self.kp_rot, (self.max_force, self.max_force, self.max_torque))
        return EnvConfig(reward, ctrl, self.ablation, self.episode_steps, self.control_ticks_per_step,
                         self.physics_ticks_per_control, self.joint_noise)


@dataclass
class RlSection:
    gamma: float = 0.99
    tau: float = 0.005
    lr_policy: float = 1e-3
    lr_q: float = 5e-4
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    her_rollout_goal_fraction: float = 0.4
    hidden: list[int] = field(default_factory=lambda: [512, 512, 512])
    target_entropy: float | None = None
    updates_per_step: int = 1
    clamp_targets: bool = True
    reward_max: float = 100.0
    episodes: int = 20_000
    warmup_episodes: int = 25

    def to_sac_config(self) -> SacConfig:
        return SacConfig(self.gamma, self.tau, self.lr_policy, self.lr_q, self.batch_size, self.buffer_capacity,
                         self.her_rollout_goal_fraction, tuple(self.hidden), self.target_entropy,
                         updates_per_step=self.updates_per_step, clamp_targets=self.clamp_targets,
                         reward_max=self.reward_max)


@dataclass
class CurriculumSection:
    grasp_lo: float = 1.5
    grasp_hi: float = 1.5
    grasp_curriculum: bool = False
    expansion_step: float = 0.25
    adr: bool = False
    success_threshold: float = SUCCESS_THRESHOLD
    buffer_size: int = BUFFER_SIZE
    probe_probability: float = PROBE_PROBABILITY

    def grasp_range(self) -> GraspRange:
        return GraspRange(self.grasp_lo, self.grasp_hi, self.expansion_step, self.success_threshold)


@dataclass
class EvalSection:
    strategy: str = "ArgmaxQ"
    episodes: int = 10
    eval_every: int = 100
    n_candidates: int = 50
    n_environments: int = 100
    grasp_ids: list[float] = field(default_factory=lambda: [1.5])
    sweep_param: str = "table_friction"
    sweep_values: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    noise_sigmas: list[float] = field(default_factory=list)
    check_lift: bool = True
    trace: str = ""


@dataclass
class IoSection:
    out_dir: str = "runs/default"
    checkpoint_every: int = 500
    seed: int = 0
    workers: int = 1


@dataclass
class RunConfig:
    mode: str = "train"
    env: EnvSection = field(default_factory=EnvSection)
    rl: RlSection = field(default_factory=RlSection)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    eval: EvalSection = field(default_factory=EvalSection)
    io: IoSection = field(default_factory=IoSection)

    def validate(self) -> RunConfig:
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        _wrap("env.domain", self.env.domain.validate)
        _wrap("env", self.env.to_env_config)
        for name in ("episode_steps", "control_ticks_per_step", "physics_ticks_per_control"):
            if getattr(self.env, name) < 1:
                raise ConfigError(f"env.{name}", "must be >= 1")
        if not 0.0 < self.rl.gamma < 1.0:
            raise ConfigError("rl.gamma", "must be in (0, 1)")
        if not 0.0 < self.rl.tau <= 1.0:
            raise ConfigError("rl.tau", "must be in (0, 1]")
        if not 0.0 <= self.rl.her_rollout_goal_fraction <= 1.0:
            raise ConfigError("rl.her_rollout_goal_fraction", "must be in [0, 1]")
        _wrap("rl", self.rl.to_sac_config)
        if self.rl.episodes < 0:
            raise ConfigError("rl.episodes", "must be >= 0")
        if self.rl.warmup_episodes < 0:
            raise ConfigError("rl.warmup_episodes", "must be >= 0")
        if not self.rl.hidden or any(h < 1 for h in self.rl.hidden):
            raise ConfigError("rl.hidden", "needs at least one positive width")
        _wrap("curriculum", self.curriculum.grasp_range)
        c = self.curriculum
        if not 0.0 <= c.probe_probability <= 1.0:
            raise ConfigError("curriculum.probe_probability", "must be in [0, 1]")
        if c.buffer_size < 1:
            raise ConfigError("curriculum.buffer_size", "must be >= 1")
        _wrap("eval.strategy", lambda: Strategy.parse(self.eval.strategy))
        for name in ("episodes", "n_candidates", "n_environments", "eval_every"):
            if getattr(self.eval, name) < (0 if name == "episodes" else 1):
                raise ConfigError(f"eval.{name}", "out of range")
        if self.io.workers < 1:
            raise ConfigError("io.workers", "must be >= 1")
        if self.io.checkpoint_every < 1:
            raise ConfigError("io.checkpoint_every", "must be >= 1")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> RunConfig:
        return _build(cls, d or {}, "").validate()

    @classmethod
    def from_yaml(cls, text: str) -> RunConfig:
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError("<file>", f"not valid YAML: {e}") from e
        if d is not None and not isinstance(d, dict):
            raise ConfigError("<root>", "expected a mapping")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError("<file>", str(e)) from e
        return cls.from_yaml(text)


def _wrap(path: str, fn) -> Any:
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(path, str(e)) from e


def _coerce(path: str, tp: Any, value: Any) -> Any:
    tp_s = str(tp)
    if value is None:
        if "None" in tp_s:
            return None
        raise ConfigError(path, "may not be null")
    if tp in (float, "float") or tp_s.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp in (str, "str"):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp_s.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        inner = "int" if "int" in tp_s else "float"
        return [_coerce(f"{path}[{i}]", inner, v) for i, v in enumerate(value)]
    return value


def _build(cls: type, d: Any, prefix: str) -> Any:
    if not isinstance(d, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    for k in d:
        if k not in known:
            raise ConfigError(f"{prefix}{k}", "unknown field")
    kwargs = {}
    for name, f in known.items():
        if name not in d:
            continue
        path = f"{prefix}{name}"
        sub = _section_type(cls, name)
        if sub is not None:
            kwargs[name] = _build(sub, d[name], path + ".")
        else:
            kwargs[name] = _coerce(path, f.type, d[name])
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(prefix.rstrip(".") or "<root>", str(e)) from e


_SECTIONS: dict[tuple[type, str], type] = {
    (RunConfig, "env"): EnvSection,
    (RunConfig, "rl"): RlSection,
    (RunConfig, "curriculum"): CurriculumSection,
    (RunConfig, "eval"): EvalSection,
    (RunConfig, "io"): IoSection,
    (EnvSection, "domain"): DomainParams,
    (EnvSection, "ablation"): AblationConfig,
}


def _section_type(cls: type, name: str) -> type | None:
    return _SECTIONS.get((cls, name))


# Values taken from the published configuration; everything else is a local choice.
REFERENCE_FIELDS = frozenset({
    "env.reward_alpha1", "env.reward_alpha2", "env.reward_beta", "env.success_translation",
    "env.success_rotation_deg", "env.episode_steps", "env.joint_noise", "env.kp_pos", "env.kp_rot",
    *(f"env.domain.{s.name}" for s in ADR_TABLE),
    "rl.gamma", "rl.tau", "rl.lr_policy", "rl.lr_q", "rl.batch_size", "rl.buffer_capacity",
    "rl.her_rollout_goal_fraction", "rl.hidden",
    "curriculum.expansion_step", "curriculum.success_threshold",
    "eval.episodes", "eval.n_candidates", "eval.n_environments",
})


def _flatten(d: dict[str, Any], prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k, v in d.items():
        if isinstance(v, dict):
            out += _flatten(v, f"{prefix}{k}.")
        else:
            out.append((f"{prefix}{k}", v))
    return out


def defaults_table() -> list[tuple[str, Any, str]]:
    return [(k, v, "reference" if k in REFERENCE_FIELDS else "local") for k, v in _flatten(RunConfig().to_dict())]


def format_defaults() -> str:
    rows = defaults_table()
    w = max(len(k) for k, _, _ in rows)
    lines = [f"{'field'.ljust(w)}  {'default':<22}  source"]
    for k, v, src in rows:
        lines.append(f"{k.ljust(w)}  {str(v):<22}  {src}")
    adr = ["", "domain randomization table (initial, +delta, -delta, final range):"]
    for s in ADR_TABLE:
        up = "none" if s.delta_up is None else f"+{s.delta_up}"
        dn = "none" if s.delta_down is None else f"-{s.delta_down}"
        adr.append(f"  {s.name:<26} {s.initial:<6} {up:<7} {dn:<7} [{s.hard_lo}, {s.hard_hi}]  reference")
    return "\n".join(lines + adr)
