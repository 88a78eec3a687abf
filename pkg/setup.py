"""Build script for the optional compiled kernel backend.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so compilation failures are non-fatal: install with
``METAGP_SKIP_EXT=1 pip install -e . --no-build-isolation`` to skip it.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("METAGP_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            "src/metagp/backends/_sqexp.pyx",
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
        for ext in ext_modules:
            ext.include_dirs.append(numpy.get_include())
            ext.extra_compile_args.append("-O3")
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
