"""Build script for the optional compiled convolution kernels.

The package works without the extension (a pure NumPy backend is selected
at import time), so a failed compile downgrades to a warning instead of
aborting the install.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain, ...
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"warning: compiled conv kernels skipped ({exc}); "
            "falling back to the NumPy backend",
            file=sys.stderr,
        )


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        OptionalBuildExt._warn(exc)
        return []
    return cythonize(
        [
            Extension(
                "gainimpute.nn._convops_cy",
                ["src/gainimpute/nn/_convops_cy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
