"""One line per acceptance criterion: PASS, FAIL or NOT RUN, printed in the terminal summary.

Criteria 1-7 need full training runs (hours per seed). They are scored from
``results/<experiment>.json`` written by ``occgrasp train --experiment``; set
``OCCGRASP_RESULTS_DIR`` to point elsewhere, or ``OCCGRASP_FULL_ACCEPTANCE=1``
to run missing experiments from here.
"""
import json
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE

ROOT = Path(__file__).resolve().parents[1]
RESULTS = Path(os.environ.get("OCCGRASP_RESULTS_DIR", ROOT / "results"))
FULL = os.environ.get("OCCGRASP_FULL_ACCEPTANCE") == "1"
SEEDS = [0, 1, 2, 3, 4]


def report(n, ok, detail):
    ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])
    assert ok, detail


def results(n, name):
    path = RESULTS / f"{name}.json"
    if not path.exists() and FULL:
        from occgrasp.config import RunConfig
        from occgrasp.training import run_experiment

        path = run_experiment(name, RunConfig(), SEEDS, RESULTS.parent)
    if not path.exists():
        ACCEPTANCE[n] = f"criterion {n:>2}: NOT RUN  {path.name} missing (occgrasp train --experiment {name})"
        pytest.skip(ACCEPTANCE[n])
    return json.loads(path.read_text())


# ------------------------------------------------------------ training runs


def test_1_single_grasp_training():
    r = results(1, "single_grasp")
    runs = r["variants"]["full"]
    reached = sum(x["best_success"] >= 0.8 for x in runs)
    hours = max(x["wall_time_s"] for x in runs) / 3600
    report(1, reached >= 3 and r["budget"] <= 20_000 and hours <= 4.0,
           f"{reached}/{len(runs)} seeds reach 80% within {r['budget']} episodes, slowest seed {hours:.2f} h")


def test_2_wall_ablation():
    r = results(2, "single_grasp")
    full = [x["final_success"] for x in r["variants"]["full"]]
    nowall = [x["final_success"] for x in r["variants"]["no_wall"]]
    gap = statistics.median(full) - statistics.median(nowall)
    report(2, max(nowall) <= 0.10 and gap >= 0.50,
           f"max no-wall success {max(nowall):.2f} (<= 0.10), median gap {gap:.2f} (>= 0.50)")


def test_3_occlusion_penalty_ablation():
    r = results(3, "single_grasp")
    full = statistics.median(x["final_success"] for x in r["variants"]["full"])
    noocc = statistics.median(x["final_success"] for x in r["variants"]["no_occlusion_penalty"])
    report(3, noocc < full, f"median without penalty {noocc:.2f} < full {full:.2f}")


def test_4_sparse_reward_ablation():
    r = results(4, "single_grasp")
    pairs = zip(r["variants"]["full"], r["variants"]["sparse_reward"])
    slower = sum(s["episodes_to_50"] > f["episodes_to_50"] for f, s in pairs)
    report(4, slower >= 4, f"sparse slower to 50% in {slower}/5 seed pairings (>= 4)")


def test_5_adr_generalization():
    r = results(5, "adr")
    mean = {k: float(np.mean([s[k] for s in r["per_seed"]])) for k in ("adr", "fixed", "open_loop")}
    ok = (mean["adr"] - mean["fixed"] >= 0.15 and mean["adr"] - mean["open_loop"] >= 0.20
          and mean["fixed"] - mean["open_loop"] >= 0.20)
    report(5, ok, f"environments >= 0.5 success: adr {mean['adr']:.2f}, fixed {mean['fixed']:.2f}, "
                  f"open loop {mean['open_loop']:.2f}")


def test_6_grasp_selection():
    r = results(6, "selection")
    per = r["per_seed"]
    every = all(s["ArgmaxQ"] >= s["Uniform"] for s in per)
    q, pd = np.mean([s["ArgmaxQ"] for s in per]), np.mean([s["PoseDiff-t0"] for s in per])
    report(6, every and q >= pd, f"ArgmaxQ >= Uniform on every seed: {every}; mean ArgmaxQ {q:.2f} "
                                 f"vs PoseDiff-t0 {pd:.2f}")


def test_7_curriculum_necessity():
    r = results(7, "curriculum")
    cur = np.mean([s["curriculum"]["auc"] for s in r["per_seed"]])
    flat = np.mean([s["no_curriculum"]["auc"] for s in r["per_seed"]])
    report(7, flat < cur, f"AUC over 9 IDs: no curriculum {flat:.3f} < curriculum {cur:.3f}")


# ---------------------------------------------------------- property suites


def run_checks(checks):
    failed = []
    for name, fn in checks:
        try:
            fn()
        except AssertionError as e:
            failed.append(f"{name}: {str(e).splitlines()[0] if str(e) else 'assertion failed'}")
    return failed


def test_8_physics_suite():
    import test_physics as tp
    from occgrasp import bench

    failed = run_checks([
        ("determinism", tp.test_determinism_bit_identical),
        ("passivity/penetration/cone", tp.test_passivity_and_contact_invariants),
        ("arm passivity", tp.test_arm_scene_passive_without_torque),
        ("sticking", tp.test_sticking_below_friction_limit),
        ("drift", tp.test_static_equilibrium_drift_below_1mm),
    ])
    if "compiled" not in bench.available_backends():
        report(8, False, "compiled kernel not built; throughput not measurable")
    rates = {s: bench.bench(s, "compiled", 200_000).ticks_per_second for s in bench.SCENES}
    slowest = min(rates.values())
    report(8, not failed and slowest >= 200_000,
           f"properties {'ok' if not failed else failed}; throughput "
           + ", ".join(f"{k} {v:,.0f}" for k, v in rates.items()) + " ticks/s (>= 200,000)")


def test_9_gradient_suite():
    import test_sac as ts

    t0 = time.perf_counter()
    failed = run_checks([
        ("critic", ts.test_critic_loss_gradient),
        ("policy", ts.test_policy_loss_gradient_two_unit_net),
        ("temperature", ts.test_alpha_loss_gradient),
        ("Q output", ts.test_q_output_gradient_matches_finite_differences),
    ])
    dt = time.perf_counter() - t0
    report(9, not failed and dt < 60.0, f"three loss heads within 1e-4 of central differences "
                                        f"{'ok' if not failed else failed}, {dt:.1f} s (< 60 s)")


def test_10_curriculum_suite():
    import test_curriculum as tc
    from occgrasp.curriculum import ADR_TABLE, DomainSampler, GraspRange, sample_domain, update_grasp_range

    failed = run_checks([("monotone replay", tc.test_event_log_replays_monotone_ranges)])
    worked = update_grasp_range(GraspRange(1.0, 2.0), "lo", 0.9)
    if (worked.lo, worked.hi) != (0.75, 2.0):
        failed.append(f"worked example gave [{worked.lo}, {worked.hi}]")
    sampler = DomainSampler.from_table(probe_probability=0.1)
    for s in list(sampler.states):
        for b in ("lo", "hi"):
            for _ in range(200):
                sampler.record((s.name, b), True)
    rng = np.random.default_rng(0)
    n, outside = 1_000_000, 0
    for _ in range(n):
        p = sample_domain(sampler, rng).params
        outside += any(not spec.hard_lo <= getattr(p, spec.name) <= spec.hard_hi for spec in ADR_TABLE)
    if outside:
        failed.append(f"{outside} samples outside caps")
    report(10, not failed, f"monotone replay, worked example [1,2] -> [0.75,2], {n:,} samples within caps "
                           f"{'ok' if not failed else failed}")


def test_11_reward_examples():
    import test_env as te

    failed = run_checks([("examples", te.test_reward_examples), ("boundaries", te.test_success_boundaries)])
    report(11, not failed, f"reward examples 0, -5.0, -2.0 and success boundaries {'ok' if not failed else failed}")


def test_12_lift_proxy():
    from occgrasp.evaluation import ScriptedPushPolicy, run_eval

    rep = run_eval(ScriptedPushPolicy(), n_episodes=50, seed=12, check_lift=True)
    n_ok = sum(e.success for e in rep.episodes)
    lifted = sum(bool(e.lift) for e in rep.episodes if e.success)
    rate = lifted / n_ok if n_ok else 0.0
    report(12, n_ok >= 1 and rate >= 0.90,
           f"lift on {lifted}/{n_ok} pose-metric successes over {rep.n_episodes} scripted episodes "
           f"({rate:.0%}, >= 90%)")
