"""Builds the optional compiled kernels; the package runs without them."""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install, numpy fallback only
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "fedphish.kernels._ckernels",
                ["src/fedphish/kernels/_ckernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
