import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "proxyfuse._kernels._core",
                ["src/proxyfuse/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    # Without Cython the package still installs; the pure-Python kernels
    # are picked up at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
