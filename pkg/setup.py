"""Build hook for the optional compiled matcher kernel.

The package is pure Python by default; the Cython extension only speeds up
tokenization and dictionary span scanning. Set FHIRTWIN_PURE_PYTHON=1 to
skip compilation entirely (the package falls back at import time anyway).
"""

import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("FHIRTWIN_PURE_PYTHON"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "fhirtwin._match._speedups",
                ["src/fhirtwin/_match/_speedups.pyx"],
            )
        ],
        language_level=3,
    )


setup(ext_modules=_extensions())
