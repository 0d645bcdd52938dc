from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cenic._rc",
                ["src/cenic/_rc.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    # Cython unavailable: the package falls back to the pure-Python coder.
    ext_modules = []

setup(ext_modules=ext_modules)
