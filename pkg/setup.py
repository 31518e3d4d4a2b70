"""Build script for the optional compiled kernels.

The extension is skipped when Cython or a compiler is unavailable; the
package then runs on the pure numpy kernels.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FITROOM_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "fitroom._ckernels",
                    ["src/fitroom/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
