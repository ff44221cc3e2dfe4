"""Build script: compiles the optional Cython spline kernels.

The package works without the extension (a pure-numpy fallback is selected
at import time).  Set ITERGAUSS_NO_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ITERGAUSS_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext = Extension(
            "itergauss.transforms._rqs_cython",
            ["src/itergauss/transforms/_rqs_cython.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            optional=True,
        )
        ext_modules = cythonize([ext], language_level="3")
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
