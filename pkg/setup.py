# Builds the optional compiled kernels; the package falls back to
# qtiming._core_py when the extension is missing.
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext = Extension(
    "qtiming._core",
    ["src/qtiming/_core.pyx"],
    extra_compile_args=["-O3"],
    optional=True,
)

setup(
    ext_modules=cythonize([ext], compiler_directives={"language_level": "3"}) if cythonize else [],
)
