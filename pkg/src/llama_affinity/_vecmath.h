/* Mark exp/expf as having SIMD variants so gcc can vectorize the row loops
   through glibc's libmvec without -ffast-math. */
#ifndef LLAMA_AFFINITY_VECMATH_H
#define LLAMA_AFFINITY_VECMATH_H
#include <math.h>
#if defined(LLAMA_AFFINITY_LIBMVEC) && defined(__GNUC__) && !defined(__clang__) && defined(__x86_64__)
__attribute__((simd("notinbranch"))) float expf(float);
__attribute__((simd("notinbranch"))) double exp(double);
#endif
#endif
