"""Build script for the compiled kernel extension.

The package works without the extension (pure-numpy fallback selected at
import time), so a missing compiler or Cython only costs speed, not
functionality.  `python setup.py build_ext --inplace` rebuilds in place.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [
            Extension(
                "plantmap._ckernels",
                ["src/plantmap/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-fno-wrapv"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
