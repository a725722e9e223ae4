from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-numpy fallback is selected at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("smcda._fused", ["src/smcda/_fused.pyx"], extra_compile_args=["-O3", "-march=native"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
