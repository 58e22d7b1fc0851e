"""Rollout/update loop and the experiment runners built on it."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .curriculum import DomainSample, DomainSampler, GraspCurriculum, sample_domain
from .env import DomainParams, EnvConfig, GraspGoal, OccludedGraspEnv, grasp_from_id
from .config import RunConfig
from .nn import Mlp
from .sac import (
    NonFiniteLoss,
    ReplayBuffer,
    SacAgent,
    Transition,
    her_relabel,
    load_checkpoint,
    policy_act,
    sac_update,
    save_checkpoint,
)

METRIC_FIELDS = ("episode", "env_steps", "updates", "eval_success", "train_success", "alpha", "q1_loss",
                 "policy_loss", "grasp_lo", "grasp_hi", "adr_events")
# wall time is kept out of metrics.csv so that equal seeds give byte-identical files


class TrainingAborted(RuntimeError):
    pass


def _gen(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class EpisodePlan:
    index: int
    seed: int
    domain: DomainSample
    grasp_id: float
    grasp_probe: str | None
    random_actions: bool


@dataclass
class EpisodeData:
    plan: EpisodePlan
    transitions: list[Transition]
    success: bool
    episode_return: float
    nonfinite: bool


def collect_episode(policy: Mlp | None, plan: EpisodePlan, env_config: EnvConfig) -> EpisodeData:
    """Run one stochastic episode; ``policy=None`` means uniform random actions."""
    env = OccludedGraspEnv(env_config)
    dom = plan.domain.params
    goal = grasp_from_id(dom, plan.grasp_id)
    env_ss, act_ss = np.random.SeedSequence(plan.seed).spawn(2)
    rng = _gen(act_ss)
    obs = env.reset(dom, goal, seed=plan.seed)
    o = obs.as_array()
    trs: list[Transition] = []
    total, ok, bad = 0.0, False, False
    for t in range(env_config.episode_steps):
        if policy is None or plan.random_actions:
            a = rng.uniform(-1.0, 1.0, size=3)
        else:
            a = policy_act(o, None, False, policy, rng)
        res = env.step(a)
        o2 = res.observation.as_array()
        bad = bool(res.info["nonfinite"])
        if bad:
            # nothing sensible to store for a blown-up step
            break
        trs.append(Transition(o, a, res.reward, o2, False, goal, t, env.table_z))
        total += res.reward
        o = o2
        ok = bool(res.info["success"])
        if res.done:
            break
    if bad and trs:
        trs[-1] = replace(trs[-1], done=True)
    return EpisodeData(plan, trs, ok and not bad, total, bad)


class Trainer:
    """Owns the networks, the buffer and both expansion engines; the only writer to any of them."""

    def __init__(self, cfg: RunConfig, out_dir: str | Path | None = None, log: Callable[[str], None] | None = None):
        self.cfg = cfg.validate()
        self.env_config = cfg.env.to_env_config()
        self.sac = cfg.rl.to_sac_config()
        root = np.random.SeedSequence(cfg.io.seed)
        init_ss, upd_ss, self._ep_root, self._eval_root = root.spawn(4)
        self.agent = SacAgent(self.sac, _gen(init_ss))
        self.update_rng = _gen(upd_ss)
        self.buffer = ReplayBuffer(self.sac.buffer_capacity)
        c = cfg.curriculum
        self.curriculum = GraspCurriculum(c.grasp_range(), c.buffer_size, c.probe_probability,
                                          enabled=c.grasp_curriculum)
        self.sampler = DomainSampler.from_table(buffer_size=c.buffer_size, success_threshold=c.success_threshold,
                                                probe_probability=c.probe_probability, enabled=c.adr)
        self.episode = 0
        self.env_steps = 0
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.metrics: list[dict[str, Any]] = []
        self.log = log or (lambda s: None)
        self._recent: list[bool] = []
        self._last_update: dict[str, float] = {}
        self._t0 = time.perf_counter()
        self._elapsed0 = 0.0

    # ----------------------------------------------------------- planning

    def _plan(self, i: int) -> EpisodePlan:
        ss = np.random.SeedSequence(self._ep_root.entropy, spawn_key=(*self._ep_root.spawn_key, i))
        plan_ss, run_ss = ss.spawn(2)
        rng = _gen(plan_ss)
        if self.cfg.curriculum.adr:
            dom = sample_domain(self.sampler, rng, self.cfg.env.domain)
        else:
            dom = DomainSample(self.cfg.env.domain)
        gid, probe = self.curriculum.sample(rng)
        seed = int(run_ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
        return EpisodePlan(i, seed, dom, gid, probe, i < self.cfg.rl.warmup_episodes)

    def _ingest(self, ep: EpisodeData) -> None:
        if ep.transitions:
            rng = _gen(np.random.SeedSequence(ep.plan.seed, spawn_key=(7,)))
            relabelled = her_relabel(ep.transitions, self.sac.her_rollout_goal_fraction, rng,
                                     self.env_config.reward, self.env_config.ablation.sparse_reward)
            self.buffer.extend(relabelled)
        self.env_steps += len(ep.transitions)
        self._recent = (self._recent + [ep.success])[-100:]
        if ep.plan.domain.probe is not None:
            ev = self.sampler.record(ep.plan.domain.probe, ep.success, self.episode)
            if ev:
                self.log(f"adr: {ev.param} {ev.boundary} {ev.old:g} -> {ev.new:g}")
        if ep.plan.grasp_probe is not None:
            ev = self.curriculum.record(ep.plan.grasp_probe, ep.success, self.episode)  # type: ignore[arg-type]
            if ev:
                self.log(f"curriculum: grasp range now [{self.curriculum.range.lo}, {self.curriculum.range.hi}]")

    def _updates(self, n_steps: int) -> None:
        if len(self.buffer) < self.sac.batch_size or self.episode < self.cfg.rl.warmup_episodes:
            return
        for _ in range(n_steps * self.sac.updates_per_step):
            rep = sac_update(self.buffer, self.sac, self.agent, self.update_rng)
            self._last_update = rep.as_dict()

    # ---------------------------------------------------------- evaluation

    def evaluate(self) -> float:
        """Deterministic success rate over ``eval.grasp_ids`` in the default domain."""
        from .evaluation import run_eval

        ids = self.cfg.eval.grasp_ids
        if self.cfg.eval.episodes == 0 or not ids:
            return 0.0
        total = 0.0
        snap = self.agent.nets.snapshot()
        seed = int(self._eval_root.generate_state(1)[0])
        for gid in ids:
            rep = run_eval(snap, self.cfg.env.domain, gid, self.cfg.eval.episodes, seed=seed,
                           env_config=self.env_config, workers=self.cfg.io.workers)
            total += rep.success_rate
        return total / len(ids)

    # ---------------------------------------------------------------- loop

    def run(self, episodes: int | None = None) -> list[dict[str, Any]]:
        """Train until ``episodes`` episodes in total have been collected."""
        target = self.cfg.rl.episodes if episodes is None else episodes
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if self.episode == 0 and not (self.out_dir / "ckpt_000000.ogck").exists():
                self.save()
        workers = self.cfg.io.workers
        pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        try:
            while self.episode < target:
                n = min(workers, target - self.episode)
                plans = [self._plan(self.episode + k) for k in range(n)]
                policy = self.agent.nets.policy if pool is None else self.agent.nets.snapshot().policy
                if pool is None:
                    eps = [collect_episode(policy, p, self.env_config) for p in plans]
                else:
                    eps = list(pool.map(lambda p: collect_episode(policy, p, self.env_config), plans))
                for ep in eps:
                    self._ingest(ep)
                    self.episode += 1
                    try:
                        self._updates(len(ep.transitions))
                    except NonFiniteLoss as e:
                        self._abort(e)
                    if self.episode % self.cfg.eval.eval_every == 0 or self.episode == target:
                        self._record_metrics()
                    if self.out_dir is not None and (self.episode % self.cfg.io.checkpoint_every == 0
                                                     or self.episode == target):
                        self.save()
        finally:
            if pool is not None:
                pool.shutdown()
        if self.out_dir is not None:
            self.write_metrics()
        return self.metrics

    def _record_metrics(self) -> None:
        succ = self.evaluate()
        u = self._last_update
        row = {
            "episode": self.episode,
            "env_steps": self.env_steps,
            "updates": self.agent.updates,
            "eval_success": succ,
            "train_success": sum(self._recent) / len(self._recent) if self._recent else 0.0,
            "alpha": self.agent.alpha,
            "q1_loss": u.get("q1_loss", math.nan),
            "policy_loss": u.get("policy_loss", math.nan),
            "grasp_lo": self.curriculum.range.lo,
            "grasp_hi": self.curriculum.range.hi,
            "adr_events": len(self.sampler.events),
        }
        self.metrics.append(row)
        self.log(f"episode {self.episode}: eval {succ:.2f} train {row['train_success']:.2f} "
                 f"alpha {row['alpha']:.3f} ({self.elapsed:.0f}s)")
        if self.out_dir is not None:
            self.write_metrics()

    @property
    def elapsed(self) -> float:
        return self._elapsed0 + time.perf_counter() - self._t0

    def write_metrics(self) -> None:
        assert self.out_dir is not None
        with (self.out_dir / "metrics.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
            w.writeheader()
            w.writerows(self.metrics)
        (self.out_dir / "timing.json").write_text(json.dumps({"episode": self.episode, "elapsed_s": self.elapsed}))
        with (self.out_dir / "events.jsonl").open("w") as fh:
            for e in self.curriculum.events + self.sampler.events:
                fh.write(json.dumps(e.as_dict()) + "\n")

    def _abort(self, err: NonFiniteLoss) -> None:
        diag = {"episode": self.episode, "updates": self.agent.updates, "error": str(err),
                "last_update": self._last_update}
        if self.out_dir is not None:
            (self.out_dir / "abort.json").write_text(json.dumps(diag, indent=2))
        raise TrainingAborted(f"training aborted at episode {self.episode}: {err}") from err

    # --------------------------------------------------------- checkpoints

    def state(self) -> dict[str, Any]:
        return {
            "curriculum": self.curriculum.to_state(),
            "adr": self.sampler.to_state(),
            "metrics": self.metrics,
            "recent": self._recent,
        }

    def save(self, path: str | Path | None = None) -> Path:
        if path is None:
            assert self.out_dir is not None
            path = self.out_dir / f"ckpt_{self.episode:06d}.ogck"
        path = Path(path)
        save_checkpoint(path, self.agent,
                        counters={"episode": self.episode, "env_steps": self.env_steps,
                                  "elapsed_s": self.elapsed},
                        config=self.cfg.to_dict(), extra=self.state())
        if self.out_dir is not None and path.parent == self.out_dir:
            latest = self.out_dir / "latest.ogck"
            latest.write_bytes(path.read_bytes())
        return path

    def restore(self, path: str | Path) -> None:
        """Continue from a checkpoint; the replay buffer is not stored and starts empty."""
        header = load_checkpoint(path, self.agent)
        c = header["counters"]
        self.episode = int(c.get("episode", 0))
        self.env_steps = int(c.get("env_steps", 0))
        self._elapsed0 = float(c.get("elapsed_s", 0.0))
        self._t0 = time.perf_counter()
        ex = header.get("extra", {})
        if "curriculum" in ex:
            self.curriculum.load_state(ex["curriculum"])
        if "adr" in ex:
            self.sampler = DomainSampler.from_state(ex["adr"])
        self.metrics = list(ex.get("metrics", []))
        self._recent = list(ex.get("recent", []))


def train(cfg: RunConfig, out_dir: str | Path | None = None, log: Callable[[str], None] | None = None) -> Trainer:
    tr = Trainer(cfg, out_dir or cfg.io.out_dir, log)
    tr.run()
    return tr


# ------------------------------------------------------------ experiments


def episodes_to(metrics: list[dict[str, Any]], level: float, budget: int) -> float:
    """First logged episode whose eval success reaches ``level``; ``budget + 1`` if never (censored)."""
    for row in metrics:
        if row["eval_success"] >= level:
            return float(row["episode"])
    return float(budget + 1)


def _run_one(cfg: RunConfig, out: Path, log: Callable[[str], None]) -> Trainer:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml())
    latest = out / "latest.ogck"
    tr = Trainer(cfg, out, log)
    if latest.exists():
        tr.restore(latest)
        log(f"resuming {out} at episode {tr.episode}")
    tr.run()
    return tr


def _seed_summary(tr: Trainer, budget: int) -> dict[str, Any]:
    m = tr.metrics
    return {
        "final_success": m[-1]["eval_success"] if m else 0.0,
        "best_success": max((r["eval_success"] for r in m), default=0.0),
        "episodes_to_50": episodes_to(m, 0.5, budget),
        "episodes_to_80": episodes_to(m, 0.8, budget),
        "wall_time_s": tr.elapsed,
        "curve": [(r["episode"], r["eval_success"]) for r in m],
    }


SINGLE_GRASP_VARIANTS = {
    "full": {},
    "no_wall": {"no_wall": True},
    "no_occlusion_penalty": {"no_occlusion_penalty": True},
    "sparse_reward": {"sparse_reward": True},
}


def experiment_single_grasp(base: RunConfig, seeds: list[int], out_dir: Path, log=print,
                            variants: list[str] | None = None) -> dict[str, Any]:
    """Default grasp in the default domain, full method and the three ablations."""
    res: dict[str, Any] = {"budget": base.rl.episodes, "seeds": seeds, "variants": {}}
    for name in variants or list(SINGLE_GRASP_VARIANTS):
        abl = replace(base.env.ablation, **SINGLE_GRASP_VARIANTS[name])
        runs = []
        for s in seeds:
            cfg = replace(base, env=replace(base.env, ablation=abl), io=replace(base.io, seed=s))
            tr = _run_one(cfg, out_dir / "single_grasp" / name / f"seed{s}", log)
            runs.append(_seed_summary(tr, base.rl.episodes))
        res["variants"][name] = runs
    return res


def experiment_adr(base: RunConfig, seeds: list[int], out_dir: Path, log=print) -> dict[str, Any]:
    """Fixed-domain versus randomized training, scored on environments drawn from the final ranges."""
    from .evaluation import read_trace, replay_open_loop, run_eval

    res: dict[str, Any] = {"budget": base.rl.episodes, "seeds": seeds, "per_seed": []}
    n_env, per_env = base.eval.n_environments, base.eval.episodes
    for s in seeds:
        trainers = {}
        for name, adr in (("fixed", False), ("adr", True)):
            cfg = replace(base, curriculum=replace(base.curriculum, adr=adr), io=replace(base.io, seed=s))
            trainers[name] = _run_one(cfg, out_dir / "adr" / name / f"seed{s}", log)
        sampler = replace(trainers["adr"].sampler.snapshot(), enabled=False)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([s, 99])))
        domains = [sample_domain(sampler, rng, base.env.domain).params for _ in range(n_env)]
        env_cfg = base.env.to_env_config()
        frac = {}
        for name, tr in trainers.items():
            good = 0
            for k, d in enumerate(domains):
                rep = run_eval(tr.agent.nets.snapshot(), d, 1.5, per_env, seed=1000 * s + k, env_config=env_cfg)
                good += rep.success_rate >= 0.5
            frac[name] = good / n_env
        # open loop: the fixed policy's default-domain rollout replayed in every sampled domain
        trace_dir = out_dir / "adr" / "fixed" / f"seed{s}" / "traces"
        run_eval(trainers["fixed"].agent.nets.snapshot(), base.env.domain, 1.5, 1, seed=s, env_config=env_cfg,
                 trace_dir=trace_dir, label="default")
        trace = read_trace(next(trace_dir.glob("default-*.jsonl")))
        good = sum(replay_open_loop(trace, d).success_rate >= 0.5 for d in domains)
        frac["open_loop"] = good / n_env
        res["per_seed"].append({"seed": s, **frac, "final_bounds": trainers["adr"].sampler.bounds()})
    return res


def experiment_selection(base: RunConfig, seeds: list[int], out_dir: Path, log=print) -> dict[str, Any]:
    """Multi-grasp side policy (IDs 0..2 via the curriculum) scored under each selection strategy."""
    from .curriculum import GraspRange
    from .evaluation import run_eval

    res: dict[str, Any] = {"budget": base.rl.episodes, "seeds": seeds, "per_seed": []}
    for s in seeds:
        cur = replace(base.curriculum, grasp_lo=1.5, grasp_hi=1.5, grasp_curriculum=True)
        cfg = replace(base, curriculum=cur, eval=replace(base.eval, grasp_ids=[0.5, 1.0, 1.5, 2.0]),
                      io=replace(base.io, seed=s))
        tr = _run_one(cfg, out_dir / "selection" / f"seed{s}", log)
        rng_ = GraspRange(0.0, 2.0) if tr.curriculum.range.hi >= 2.0 and tr.curriculum.range.lo <= 0.0 \
            else tr.curriculum.range
        scores = {}
        for strat in ("ArgmaxQ", "ArgmaxQ-t0", "PoseDiff", "PoseDiff-t0", "Uniform"):
            rep = run_eval(tr.agent.nets.snapshot(), base.env.domain, rng_, 10 * base.eval.episodes, strat,
                           seed=s, env_config=base.env.to_env_config(), n_candidates=base.eval.n_candidates)
            scores[strat] = rep.success_rate
        res["per_seed"].append({"seed": s, "range": [rng_.lo, rng_.hi], **scores})
    return res


def experiment_curriculum(base: RunConfig, seeds: list[int], out_dir: Path, log=print) -> dict[str, Any]:
    """Curriculum from ID 1.5 versus uniform sampling over [0, 4], scored on 9 IDs."""
    from .evaluation import run_eval

    ids = [float(x) for x in np.linspace(0.0, 4.0, 9)]
    res: dict[str, Any] = {"budget": base.rl.episodes, "seeds": seeds, "ids": ids, "per_seed": []}
    for s in seeds:
        row: dict[str, Any] = {"seed": s}
        for name, cur in (("curriculum", replace(base.curriculum, grasp_lo=1.5, grasp_hi=1.5, grasp_curriculum=True)),
                          ("no_curriculum", replace(base.curriculum, grasp_lo=0.0, grasp_hi=4.0,
                                                    grasp_curriculum=False))):
            cfg = replace(base, curriculum=cur, io=replace(base.io, seed=s))
            tr = _run_one(cfg, out_dir / "curriculum" / name / f"seed{s}", log)
            curve = [run_eval(tr.agent.nets.snapshot(), base.env.domain, gid, base.eval.episodes, seed=s,
                              env_config=base.env.to_env_config()).success_rate for gid in ids]
            row[name] = {"curve": curve, "auc": float(np.trapz(curve, ids))}
        res["per_seed"].append(row)
    return res


EXPERIMENTS: dict[str, Callable[..., dict[str, Any]]] = {
    "single_grasp": experiment_single_grasp,
    "adr": experiment_adr,
    "selection": experiment_selection,
    "curriculum": experiment_curriculum,
}


def run_experiment(name: str, base: RunConfig, seeds: list[int], out_dir: str | Path, log=print) -> Path:
    """Run one experiment and write ``<out_dir>/results/<name>.json``."""
    out = Path(out_dir)
    res = EXPERIMENTS[name](base, seeds, out, log)
    res["experiment"] = name
    path = out / "results" / f"{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(res, indent=2))
    return path
