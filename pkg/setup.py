from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("promptevo._edt_ext", ["src/promptevo/_edt_ext.pyx"], extra_compile_args=["-O3"], optional=True)],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
