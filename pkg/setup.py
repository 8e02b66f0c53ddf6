"""Build script: compiles the optional native splatting/rasterization core.

The package works without the extension (a NumPy fallback is selected at
import time), so a failing compile only costs speed, not functionality.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the native core if possible; fall back to pure NumPy otherwise."""

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # compiler missing or broken toolchain
            sys.stderr.write(
                f"WARNING: building {ext.name} failed ({exc}); "
                "the pure-NumPy backend will be used.\n"
            )


def make_extensions():
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "lidarpaint.backends._native",
        ["src/lidarpaint/backends/_native.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
