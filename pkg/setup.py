import os

import numpy as np
from setuptools import Extension, setup


def extensions():
    if os.environ.get("LOWERTAIL_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "lowertail._kernels",
        ["src/lowertail/_kernels.pyx"],
        include_dirs=[np.get_include()],
        language="c++",
        # no contraction into fma: distances must round exactly like the fallback
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
