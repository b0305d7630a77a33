#ifndef EUNN_H
#define EUNN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Mesh layout for [`eunn_composition_new`].
typedef enum EunnMeshStyle {
  EUNN_MESH_STYLE_TUNABLE = 0,
  EUNN_MESH_STYLE_FFT = 1,
} EunnMeshStyle;

// Result code of every fallible call.
typedef enum EunnStatus {
  EUNN_STATUS_OK = 0,
  EUNN_STATUS_NULL_POINTER = 1,
  // Bad sizes, unsupported dimension, or invalid parameters.
  EUNN_STATUS_INVALID_ARGUMENT = 2,
  // A numerical routine failed or produced non-finite values.
  EUNN_STATUS_NUMERICAL = 3,
  // A unitarity or round-trip invariant did not hold.
  EUNN_STATUS_INVARIANT = 4,
  // Unexpected internal error; the handle should not be used again.
  EUNN_STATUS_PANIC = 5,
} EunnStatus;

// A unitary `W = D F¹ … F^L` with its compiled kernels.
typedef struct EunnComposition EunnComposition;

// Rotation angles and phases recovered from a dense unitary.
typedef struct EunnProgram EunnProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null if it succeeded.
// The pointer stays valid until the next `eunn_*` call on this thread.
const char *eunn_last_error_message(void);

// Creates a randomly initialized composition. `capacity` is ignored for the
// fft style, which always has `log2 n` layers.
//
// # Safety
// `out` must point to writable storage for one handle pointer.
enum EunnStatus eunn_composition_new(enum EunnMeshStyle style,
                                     size_t n,
                                     size_t capacity,
                                     uint64_t seed,
                                     struct EunnComposition **out);

// # Safety
// `h` must be null or a handle from [`eunn_composition_new`] not yet freed.
void eunn_composition_free(struct EunnComposition *h);

// Dimension `n`, or 0 for a null handle.
//
// # Safety
// `h` must be null or a live handle.
size_t eunn_composition_dim(const struct EunnComposition *h);

// Number of layers `L`, or 0 for a null handle.
//
// # Safety
// `h` must be null or a live handle.
size_t eunn_composition_capacity(const struct EunnComposition *h);

// Length of the flat parameter vector: every layer's θ then φ, layer by
// layer, followed by the `n` diagonal phases.
//
// # Safety
// `h` must be null or a live handle.
size_t eunn_composition_num_params(const struct EunnComposition *h);

// Copies the flat parameters into `out[0..len]`; `len` must equal
// [`eunn_composition_num_params`].
//
// # Safety
// `h` must be a live handle and `out` must hold `len` doubles.
enum EunnStatus eunn_composition_get_params(const struct EunnComposition *h,
                                            double *out,
                                            size_t len);

// Replaces all parameters from a flat vector in the
// [`eunn_composition_get_params`] layout. Values must be finite.
//
// # Safety
// `h` must be a live handle and `params` must hold `len` doubles.
enum EunnStatus eunn_composition_set_params(struct EunnComposition *h,
                                            const double *params,
                                            size_t len);

// `y = W x` for vectors of length `n`.
//
// # Safety
// `h` must be a live handle; each array must hold `n` doubles.
enum EunnStatus eunn_composition_apply(const struct EunnComposition *h,
                                       const double *x_re,
                                       const double *x_im,
                                       double *y_re,
                                       double *y_im,
                                       size_t n);

// Reverse pass at input `x` with output cotangent `dy`: writes `dx = W† dy`
// and the gradient of the real loss with respect to every parameter, in the
// flat layout of [`eunn_composition_get_params`].
//
// # Safety
// `h` must be a live handle; vector arrays hold `n` doubles and `grad`
// holds `grad_len` doubles.
enum EunnStatus eunn_composition_backward(const struct EunnComposition *h,
                                          const double *x_re,
                                          const double *x_im,
                                          const double *dy_re,
                                          const double *dy_im,
                                          double *dx_re,
                                          double *dx_im,
                                          size_t n,
                                          double *grad,
                                          size_t grad_len);

// Writes the dense `n × n` matrix of the composition, row-major.
//
// # Safety
// `h` must be a live handle; `re` and `im` must each hold `n * n` doubles.
enum EunnStatus eunn_composition_materialize(const struct EunnComposition *h,
                                             double *re,
                                             double *im,
                                             size_t n);

// Decomposes a unitary `n × n` matrix (row-major) into rotations and
// phases. Fails with `InvalidArgument` if the matrix is not unitary.
//
// # Safety
// `re` and `im` must each hold `n * n` doubles; `out` must point to
// writable storage for one handle pointer.
enum EunnStatus eunn_decompose(const double *re,
                               const double *im,
                               size_t n,
                               struct EunnProgram **out);

// # Safety
// `p` must be null or a handle from [`eunn_decompose`] not yet freed.
void eunn_program_free(struct EunnProgram *p);

// Dimension of the decomposed matrix, or 0 for a null handle.
//
// # Safety
// `p` must be null or a live handle.
size_t eunn_program_dim(const struct EunnProgram *p);

// Number of rotations, or 0 for a null handle.
//
// # Safety
// `p` must be null or a live handle.
size_t eunn_program_num_rotations(const struct EunnProgram *p);

// Rebuilds the dense matrix, row-major.
//
// # Safety
// `p` must be a live handle; `re` and `im` must each hold `n * n` doubles.
enum EunnStatus eunn_program_reconstruct(const struct EunnProgram *p,
                                         double *re,
                                         double *im,
                                         size_t n);

// Cross entropy of the memoryless strategy on the copy task with
// `n_symbols` data symbols, `m_len` symbols to recall and delay `t_delay`.
//
// # Safety
// `out` must point to one writable double.
enum EunnStatus eunn_copy_baseline(size_t n_symbols, size_t m_len, size_t t_delay, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EUNN_H */
