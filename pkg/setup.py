import os

import numpy as np
from setuptools import setup

ext_modules = []
if not os.environ.get("LAPSE3D_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "lapse3d._core",
                    ["src/lapse3d/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # pure-Python kernels are used when the extension is absent
        ext_modules = []

setup(ext_modules=ext_modules)
