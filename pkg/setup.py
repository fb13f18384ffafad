"""Build the optional compiled kernels.

The package works without them: ``llama_affinity.kernels`` falls back to the
numpy implementations when the extension is missing.  Set
``LLAMA_AFFINITY_NO_EXT=1`` to skip compilation entirely.

On x86-64 Linux the exp loops are vectorized through glibc's libmvec
(``LLAMA_AFFINITY_NO_LIBMVEC=1`` disables this) and AVX2 is enabled when the
build host supports it (``LLAMA_AFFINITY_PORTABLE=1`` disables that).
"""
import os
import platform
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback", file=sys.stderr)


def vector_math_available():
    """glibc's vector math library on x86-64 Linux, unless disabled."""
    if os.environ.get("LLAMA_AFFINITY_NO_LIBMVEC") or sys.platform != "linux":
        return False
    if platform.machine() != "x86_64":
        return False
    return any(os.path.exists(os.path.join(d, "libmvec.so.1"))
               for d in ("/lib/x86_64-linux-gnu", "/usr/lib/x86_64-linux-gnu", "/lib64", "/usr/lib64"))


def host_has_avx2():
    # the extension is built where it runs; LLAMA_AFFINITY_PORTABLE=1 keeps the baseline ISA
    if os.environ.get("LLAMA_AFFINITY_PORTABLE"):
        return False
    try:
        with open("/proc/cpuinfo") as fh:
            flags = fh.read()
    except OSError:
        return False
    return " avx2" in flags and " fma" in flags


def extensions():
    if os.environ.get("LLAMA_AFFINITY_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    compile_args, link_args = ["-O3"], []
    macros = [("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")]
    if vector_math_available():
        compile_args += ["-fno-math-errno", "-fassociative-math", "-fno-signed-zeros", "-fno-trapping-math"]
        link_args.append("-lmvec")
        macros.append(("LLAMA_AFFINITY_LIBMVEC", "1"))
        if host_has_avx2():
            compile_args += ["-mavx2", "-mfma"]
    ext = Extension(
        "llama_affinity._kernels",
        ["src/llama_affinity/_kernels.pyx"],
        include_dirs=[np.get_include(), "src/llama_affinity"],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
        define_macros=macros,
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
