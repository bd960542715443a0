from Cython.Build import cythonize
from setuptools import Extension, setup

ext_modules = [
    Extension(
        "avlm._kernel",
        ["src/avlm/_kernel.pyx"],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
