import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MBGNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "mbgnn._aggregate_ext",
                    ["src/mbgnn/_aggregate_ext.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
