from setuptools import setup, Extension
from Cython.Build import cythonize
import numpy as np

# Compiled kernel core. If the toolchain is missing the package still works
# through the pure-numpy fallback in pidesol.kernels.pyref.
ext = Extension(
    "pidesol.kernels._fast",
    ["src/pidesol/kernels/_fast.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

try:
    ext_modules = cythonize([ext], language_level="3")
except Exception as exc:  # no compiler / no cython: install pure-python only
    print("skipping compiled kernels:", exc)
    ext_modules = []

setup(ext_modules=ext_modules)
