import os
import subprocess
import sys

import pytest

from occgrasp import bench, kernel


def backend_in_subprocess(env_extra):
    env = dict(os.environ, **env_extra)
    out = subprocess.run([sys.executable, "-c", "from occgrasp import kernel; print(kernel.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_pure_python_override():
    assert backend_in_subprocess({"OCCGRASP_PURE_PYTHON": "1"}) == "python"


def test_backend_flags():
    assert kernel.load("python").compiled() is False
    with pytest.raises(ValueError):
        kernel.load("fortran")
    if "compiled" in bench.available_backends():
        assert kernel.load("compiled").compiled() is True
        assert kernel.BACKEND == "compiled"


@pytest.mark.parametrize("scene", sorted(bench.SCENES))
def test_bench_runs_on_every_backend(scene):
    for b in bench.available_backends():
        r = bench.bench(scene, b, 200)
        assert r.ticks == 200 and r.seconds > 0 and r.ticks_per_second > 0


def test_compiled_is_faster():
    if "compiled" not in bench.available_backends():
        pytest.skip("extension not built")
    fast = bench.bench("resting_box", "compiled", 20_000).ticks_per_second
    slow = bench.bench("resting_box", "python", 500).ticks_per_second
    assert fast > 10 * slow


def test_main_prints_table(capsys):
    assert bench.main(["--ticks", "500", "--python-ticks", "50"]) == 0
    out = capsys.readouterr().out
    assert "resting_box" in out and "ticks/s" in out
