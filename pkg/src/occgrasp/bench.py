"""Physics throughput, compiled kernel versus the interpreted copy of the same source.

Run ``python -m occgrasp.bench``. Each scene is built once per backend and
stepped in bulk; the figure reported is physics ticks per wall-clock second.
"""
from __future__ import annotations

import argparse
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernel
from . import physics2d as p2
from .env import DomainParams, EnvConfig, build_world, home_q
from .geometry import Pose2


@dataclass(frozen=True)
class BenchResult:
    scene: str
    backend: str
    ticks: int
    seconds: float

    @property
    def ticks_per_second(self) -> float:
        return self.ticks / self.seconds if self.seconds > 0 else float("inf")


def scene_resting_box() -> Callable[[object, int], None]:
    """One box resting on a static floor: two persistent contacts."""
    w = p2.World2([
        p2.box_body(1.0, 0.05, Pose2(0.0, -0.05), is_static=True, friction=0.5, name="floor"),
        p2.box_body(0.05, 0.05, Pose2(0.0, 0.05), mass=1.0, friction=0.5, name="box"),
    ])

    def run(core, n: int) -> None:
        core.step(*w._kernel_args(), n)

    return run


def scene_env() -> Callable[[object, int], None]:
    """The task scene (floor, wall, box, arm-driven gripper) under operational-space control."""
    d = DomainParams()
    w, _, grip = build_world(d, home_q())
    gains = EnvConfig().controller.gain_vector()
    target = w.body_pose(grip).as_array()

    def run(core, n: int) -> None:
        w.force[:] = 0.0
        core.run_osc(*w._kernel_args(), target, gains, max(1, n // 10), 10)

    return run


SCENES = {"resting_box": scene_resting_box, "env": scene_env}


def bench(scene: str, backend: str, ticks: int) -> BenchResult:
    core = kernel.load(backend)
    run = SCENES[scene]()
    run(core, min(ticks, 100))  # warm-up
    t0 = time.perf_counter()
    run(core, ticks)
    return BenchResult(scene, backend, ticks, time.perf_counter() - t0)


def available_backends() -> list[str]:
    out = []
    for b in ("compiled", "python"):
        try:
            kernel.load(b)
            out.append(b)
        except ImportError:
            pass
    return out


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m occgrasp.bench", description=__doc__)
    ap.add_argument("--ticks", type=int, default=200_000, help="ticks per compiled run")
    ap.add_argument("--python-ticks", type=int, default=2_000, help="ticks per interpreted run")
    args = ap.parse_args(argv)
    rows = []
    for scene in SCENES:
        for b in available_backends():
            r = bench(scene, b, args.ticks if b == "compiled" else args.python_ticks)
            rows.append(r)
            print(f"{scene:<12} {b:<9} {r.ticks:>8} ticks  {r.ticks_per_second:>12,.0f} ticks/s")
    for scene in SCENES:
        tp = {r.backend: r.ticks_per_second for r in rows if r.scene == scene}
        if "compiled" in tp and "python" in tp:
            print(f"{scene:<12} speed-up {tp['compiled'] / tp['python']:.0f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
