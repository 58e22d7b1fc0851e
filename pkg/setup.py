"""Builds the compiled kernel; ``occgrasp._core`` remains the interpreted fallback."""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("OCCGRASP_NO_EXT") != "1":
    from Cython.Build import cythonize

    ext = Extension(
        "occgrasp._core_ext",
        ["src/occgrasp/_core.py"],
        # no fused multiply-add contraction: compiled and interpreted backends must agree bit for bit
        extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
    )
    ext_modules = cythonize(
        [ext],
        language_level=3,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
