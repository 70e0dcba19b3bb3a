"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a pure numpy
backend is selected at import time), so a missing compiler or missing
Cython must not break installation.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DEEPTRANSPORT_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "deeptransport.kernels._speedups",
                    ["src/deeptransport/kernels/_speedups.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
