"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy/pure-Python fallback is
selected at import time), so any failure to build it downgrades the install
instead of breaking it.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible; warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, headers missing, ...
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        sys.stderr.write(
            "WARNING: building the compiled kernels failed (%s); "
            "installing with the pure-Python fallback only.\n" % (exc,)
        )


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        sys.stderr.write(
            "WARNING: %s; skipping the compiled kernels, the pure-Python "
            "fallback will be used.\n" % (exc,)
        )
        return []
    from setuptools import Extension

    ext = Extension(
        "aoii_harq._kernels._core",
        sources=["src/aoii_harq/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
