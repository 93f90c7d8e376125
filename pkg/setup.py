import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RAOCP_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext = Extension(
            "raocp._backends._ckernels",
            ["src/raocp/_backends/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize([ext], language_level=3)
    except ImportError:
        # No Cython/numpy at build time: install the pure-Python package;
        # the kernel backend falls back to numpy at import.
        ext_modules = []

setup(ext_modules=ext_modules)
