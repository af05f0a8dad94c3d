from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# optional=True: the package falls back to the numpy scan in
# mortboost._scan_py when the extension cannot be built.
ext = Extension(
    "mortboost._scan_cy",
    sources=["src/mortboost/_scan_cy.pyx"],
    extra_compile_args=["-O3"],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3) if cythonize else [])
