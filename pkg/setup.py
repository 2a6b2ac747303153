"""Build script: compiles the optional QP hot-kernel extension.

The package works without the extension (pure-numpy fallback is selected at
import time), so a missing Cython toolchain only disables the fast path.
"""

from setuptools import setup
from setuptools.extension import Extension

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "rcbf._kernels",
                ["src/rcbf/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
