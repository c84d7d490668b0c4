"""Build hook: compile the event-loop kernel if Cython + a C compiler are
available, otherwise install pure-Python only (fliplab falls back to the
interpreted kernel at import time)."""

import os

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    # the kernel draws randomness through numpy's C distribution functions,
    # which live in the static npyrandom library shipped inside numpy
    np_random_lib = os.path.join(os.path.dirname(numpy.random.__file__), "lib")
    ext_modules = cythonize(
        [
            Extension(
                "fliplab._kernels",
                ["src/fliplab/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                library_dirs=[np_random_lib],
                libraries=["npyrandom"],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError as exc:  # pragma: no cover - exercised only on bare installs
    print(f"fliplab: compiled kernel skipped ({exc}); using pure-Python fallback")

setup(ext_modules=ext_modules)
