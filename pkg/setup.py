"""Build script for the optional compiled routing kernel.

The package works without the extension (a pure numpy kernel is selected
at import time); set COEX_PURE_PYTHON=1 to skip compilation entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("COEX_PURE_PYTHON"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/coex/_vam.pyx"],
            compiler_directives={"language_level": "3"},
        )
        for ext in ext_modules:
            ext.include_dirs.append(numpy.get_include())
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
