#pragma once

#include <cstddef>

namespace abm::nn::kernels {

// Dense float32 kernels. Each output element is produced by exactly one
// thread with a fixed accumulation order, so the parallel variants are
// bit-identical to the serial references for any thread count. Tests compare
// the two; bench_kernels times them.

// C[M,N] = A[M,K] * B[K,N] (+ C when accumulate)
void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
void gemm_serial(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);

// C[M,N] = A[M,K] * B^T where B is [N,K]
void gemm_bt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
void gemm_bt_serial(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);

// C[K,N] = A^T * B where A is [M,K], B is [M,N]
void gemm_at(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
void gemm_at_serial(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);

// y[B,O,H,W] = conv3x3(x[B,C,H,W], k[O,C,3,3]) + bias[O], stride 1, zero pad 1
void conv3x3(const float* x, const float* k, const float* bias, float* y,
             int batch, int cin, int h, int w, int cout);
void conv3x3_serial(const float* x, const float* k, const float* bias, float* y,
                    int batch, int cin, int h, int w, int cout);

// dx[B,C,H,W] from dy[B,O,H,W] and kernel k[O,C,3,3]
void conv3x3_backward_input(const float* dy, const float* k, float* dx,
                            int batch, int cin, int h, int w, int cout);
void conv3x3_backward_input_serial(const float* dy, const float* k, float* dx,
                                   int batch, int cin, int h, int w, int cout);

// dk[O,C,3,3] and db[O] from x and dy; outputs are accumulated into.
void conv3x3_backward_params(const float* x, const float* dy, float* dk, float* db,
                             int batch, int cin, int h, int w, int cout);
void conv3x3_backward_params_serial(const float* x, const float* dy, float* dk, float* db,
                                    int batch, int cin, int h, int w, int cout);

}  // namespace abm::nn::kernels
