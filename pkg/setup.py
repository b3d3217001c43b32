import numpy
from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/tailgnn/kernels/_core.pyx",
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[numpy.get_include()],
)
