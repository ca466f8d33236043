"""Build script: compiles the optional hot-loop extension when Cython is
available; the package falls back to the pure-numpy kernels otherwise."""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "pbsd_lab._kernels",
                ["src/pbsd_lab/_kernels.pyx"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
