"""Build script for the optional compiled recourse kernel.

The package is fully functional without the extension: ``alsopt.recourse``
falls back to a vectorized numpy implementation when the compiled module is
absent.  Building with ``--no-build-isolation`` (so the installed Cython and
numpy are visible) compiles the fast kernel.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    pass
else:
    ext = Extension(
        "alsopt.recourse._speedups",
        ["src/alsopt/recourse/_speedups.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext.optional = True  # build failure must not break the install
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
