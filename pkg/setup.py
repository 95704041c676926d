"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure-Python backend is selected
at import time), so any build failure here downgrades to a warning instead
of aborting the install. Set FOCALPO_SKIP_EXT=1 to skip the compile step.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("FOCALPO_SKIP_EXT", "") not in {"1", "true", "yes"}:
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "focalpo._kernels._fast",
                    ["src/focalpo/_kernels/_fast.pyx"],
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
