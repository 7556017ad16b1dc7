"""Build script: compiles the optional Cython evaluation core.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so extension build failures are non-fatal.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "earthmodes._poly_core",
                ["src/earthmodes/_poly_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    import sys

    print(f"earthmodes: skipping compiled core ({exc}); pure-NumPy path will be used", file=sys.stderr)

setup(ext_modules=ext_modules)
