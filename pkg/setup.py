import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# ERASURENET_NO_EXT=1 installs the pure-Python fallback only.
ext_modules = []
if cythonize is not None and not os.environ.get("ERASURENET_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "erasurenet._ckernel",
                ["src/erasurenet/_ckernel.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math / contraction: traces must match the Python path bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
