import os

import numpy
import numpy.random
from Cython.Build import cythonize
from setuptools import Extension, setup

# the C distribution functions (random_standard_normal etc.) live in numpy's
# static helper library, which must be linked explicitly
_npyrandom_dir = os.path.join(os.path.dirname(numpy.random.__file__), "lib")

setup(
    ext_modules=cythonize(
        [
            Extension(
                "superbbm._sim_kernel",
                ["src/superbbm/_sim_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                library_dirs=[_npyrandom_dir],
                libraries=["npyrandom"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
)
