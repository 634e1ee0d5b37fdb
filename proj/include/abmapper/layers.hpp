#pragma once

#include "abmapper/tensor.hpp"

namespace abm::nn {

// Forward/backward pairs for every block the models need. No autodiff graph:
// callers keep the forward inputs (and caches where noted) and chain
// backwards by hand. All math is float32.

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);
struct DenseGrads {
  Tensor dx, dw, db;
};
DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

// 3x3 convolution, stride 1, zero padding 1. x: [B,C,H,W], k: [O,C,3,3], b: [O].
Tensor conv3x3_forward(const Tensor& x, const Tensor& k, const Tensor& b);
struct ConvGrads {
  Tensor dx, dk, db;
};
ConvGrads conv3x3_backward(const Tensor& x, const Tensor& k, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

// Softmax over the last dimension, numerically stabilized by row-max shift.
Tensor softmax_forward(const Tensor& x);
// y is the forward output.
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

// Scaled dot-product attention for one query. q: [dk], keys: [z,dk],
// values: [z,dv]. weights = softmax(q.k_i / sqrt(dk)), mix = sum w_i v_i.
struct AttentionOut {
  Tensor weights, mix;
};
AttentionOut scaled_attention(const Tensor& q, const Tensor& keys, const Tensor& values);
struct AttentionGrads {
  Tensor dq, dkeys, dvalues;
};
AttentionGrads scaled_attention_backward(const Tensor& q, const Tensor& keys,
                                         const Tensor& values, const AttentionOut& out,
                                         const Tensor& dmix);

// Bidirectional gated recurrent layer (update/reset gates). One parameter
// block per direction; outputs of the two directions are concatenated per
// position, so every output row sees the whole sequence.
// Per direction: wx [D,3H] (gate blocks r|z|c), wh_rz [H,2H], wh_c [H,H],
// b [3H]. The candidate block takes r*h_prev, hence the split hidden weights.
struct BiGruParamRefs {
  const Tensor *wx_f, *whrz_f, *whc_f, *b_f;
  const Tensor *wx_b, *whrz_b, *whc_b, *b_b;
};
struct BiGruCache {
  int batch = 0, seq = 0, in_dim = 0, hidden = 0;
  Tensor x_tm;                // [seq, batch, D] time-major input copy
  Tensor gates_f, gates_b;    // [seq, batch, 3H] post-activation (r, z, c)
  Tensor hprev_f, hprev_b;    // [seq, batch, H] state entering the position
};
// x: [batch, seq, D] -> [batch, seq, 2H]. cache may be null for inference.
Tensor bigru_forward(const Tensor& x, int batch, int seq, const BiGruParamRefs& p,
                     BiGruCache* cache);
// Single-sequence convenience: x [N,D] -> [N,2H].
Tensor bigru_forward_seq(const Tensor& x, const BiGruParamRefs& p, BiGruCache* cache);
struct BiGruGrads {
  Tensor dx;  // [batch, seq, D]
  Tensor dwx_f, dwhrz_f, dwhc_f, db_f;
  Tensor dwx_b, dwhrz_b, dwhc_b, db_b;
};
BiGruGrads bigru_backward(const BiGruParamRefs& p, const BiGruCache& cache, const Tensor& dy);

// Glorot-uniform init, fan sizes explicit.
void init_glorot(Tensor& t, int fan_in, int fan_out, Rng& rng);

}  // namespace abm::nn
