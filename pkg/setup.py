"""Build the compiled sweep kernel; the package still installs without it."""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("TENSORCATCH_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        print("Cython unavailable: installing the pure-Python kernel only")
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "tensorcatch._cd_kernel",
                    ["src/tensorcatch/_cd_kernel.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
