import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "teach._kernels._core",
                ["src/teach/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    # The package must stay importable without the extension: the pure
    # numpy backend is selected at import time when the build is missing.
    for ext in ext_modules:
        ext.optional = True

setup(ext_modules=ext_modules)
