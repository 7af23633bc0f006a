from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "vanetperf.simulator._mac_kernel",
                ["src/vanetperf/simulator/_mac_kernel.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython available: install pure, the package falls back at import.
    extensions = []

setup(ext_modules=extensions)
