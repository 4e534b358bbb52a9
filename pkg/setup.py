"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-numpy fallback is selected
at import time); building it just makes frame generation and coincidence
accumulation much faster.  ``-ffp-contract=off`` is required: the compiled
kernels must reproduce the numpy backend's floating-point results bit for
bit, so FMA contraction of a*b+c expressions is not allowed.
"""

import os

import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Skip the extension (with a warning) if no working compiler is found."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - exercised only without a toolchain
            print(f"WARNING: compiled kernels skipped ({exc}); "
                  f"falling back to the pure-python backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"WARNING: building {ext.name} failed ({exc}); "
                  f"falling back to the pure-python backend")


def extensions():
    from Cython.Build import cythonize

    npy_random_lib = os.path.join(os.path.dirname(numpy.__file__), "random", "lib")
    ext = Extension(
        "eprsim._kernels._core",
        ["src/eprsim/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        library_dirs=[npy_random_lib],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
