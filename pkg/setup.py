"""Build script: compiles the optional biquad extension when Cython is available.

The package remains fully functional without the extension; iqfp._kernels
falls back to a NumPy implementation at import time.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "iqfp._kernels._biquad",
                ["src/iqfp/_kernels/_biquad.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
