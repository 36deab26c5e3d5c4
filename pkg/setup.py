import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if os.path.exists("src/pibp/_fastcore.pyx"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "pibp._fastcore",
                    ["src/pibp/_fastcore.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # Source installs without Cython fall back to the pure-python kernels.
        ext_modules = []

setup(ext_modules=ext_modules)
