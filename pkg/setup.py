"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a pure-Python
fallback with identical numerics is selected at import time), so a
missing compiler or Cython only costs speed, not correctness.

-ffp-contract=off keeps the compiler from fusing multiply-adds; the
compiled kernels must round exactly like the pure-Python fallback.
"""

from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "lorafed._kernels",
                ["src/lorafed/_kernels.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
