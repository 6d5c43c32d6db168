"""Build script for the optional compiled backend.

The package is fully functional without the extension (a numpy fallback is
selected at import time); the extension only accelerates the hot kernels.
"""

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, cythonize failure, ...
            print(f"warning: compiled backend not built ({exc}); "
                  "falling back to the pure-Python kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); "
                  "falling back to the pure-Python kernels")


extensions = [
    Extension(
        "crcterm.backend._core",
        ["src/crcterm/backend/_core.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    ),
]

try:
    from Cython.Build import cythonize
    ext_modules = cythonize(extensions, language_level=3)
except ImportError:
    print("warning: Cython not available; building without compiled backend")
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
