"""Build the optional MPFR kernel; the package falls back to pure Python without it."""

import os
import sysconfig

from setuptools import setup

ext_modules = []
if os.environ.get("CWCHAIN_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        multiarch = sysconfig.get_config_var("MULTIARCH") or ""
        include = [np.get_include()] + ([f"/usr/include/{multiarch}"] if multiarch else [])
        ext_modules = cythonize(
            [
                Extension(
                    "cwchain._ckernel",
                    ["src/cwchain/_ckernel.pyx"],
                    libraries=["mpfr", "gmp"],
                    include_dirs=include,
                    extra_compile_args=["-O2"],
                )
            ],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
