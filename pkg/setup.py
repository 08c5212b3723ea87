import numpy as np
from setuptools import Extension, setup

# The max-flow kernel is the hot inner loop; it ships as a Cython extension
# with a pure-Python fallback selected at import, so the build may proceed
# without a compiler.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "grapl._maxflow_cy",
                ["src/grapl/_maxflow_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
