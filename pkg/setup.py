"""Build the optional compiled kernels.

The extension is first built with vectorized math (``-ffast-math`` and
glibc's libmvec, tuned for the build machine); if that fails it is rebuilt
with plain ``-O3``. If Cython or a compiler is missing the package still
installs and falls back to the numpy kernels at import time.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext

FAST_ARGS = ["-O3", "-ffast-math", "-march=native"]
FAST_LIBS = ["mvec", "m"]
PLAIN_ARGS = ["-O3"]


class FallbackBuildExt(build_ext):
    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # compiler or linker lacks the fast options
            print(f"fast build of {ext.name} failed ({exc}); retrying with plain flags")
            ext.extra_compile_args = list(PLAIN_ARGS)
            ext.libraries = [lib for lib in ext.libraries if lib not in FAST_LIBS]
            try:
                super().build_extension(ext)
            except Exception as exc2:
                print(f"building {ext.name} failed ({exc2}); numpy kernels will be used")


ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "nmtfusion.numerics._kernels",
                ["src/nmtfusion/numerics/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=list(FAST_ARGS),
                libraries=list(FAST_LIBS),
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules, cmdclass={"build_ext": FallbackBuildExt})
