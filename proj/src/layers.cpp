#include "abmapper/layers.hpp"

#include <cmath>
#include <cstring>

#include "abmapper/kernels.hpp"

namespace abm::nn {

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.numel() != w.dim(1))
    throw Error(ErrorKind::ShapeMismatch, "dense_forward");
  const int batch = x.dim(0), in = x.dim(1), out = w.dim(1);
  Tensor y({batch, out});
  for (int i = 0; i < batch; ++i)
    std::memcpy(y.ptr() + static_cast<size_t>(i) * out, b.ptr(), sizeof(float) * out);
  kernels::gemm(x.ptr(), w.ptr(), y.ptr(), batch, in, out, /*accumulate=*/true);
  return y;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  if (dy.rank() != 2 || dy.dim(0) != x.dim(0) || dy.dim(1) != w.dim(1))
    throw Error(ErrorKind::ShapeMismatch, "dense_backward");
  const int batch = x.dim(0), in = x.dim(1), out = w.dim(1);
  DenseGrads g;
  g.dx = Tensor({batch, in});
  g.dw = Tensor({in, out});
  g.db = Tensor({out});
  kernels::gemm_bt(dy.ptr(), w.ptr(), g.dx.ptr(), batch, out, in);  // dy * w^T
  kernels::gemm_at(x.ptr(), dy.ptr(), g.dw.ptr(), batch, in, out);  // x^T * dy
  for (int i = 0; i < batch; ++i) {
    const float* row = dy.ptr() + static_cast<size_t>(i) * out;
    for (int o = 0; o < out; ++o) g.db[o] += row[o];
  }
  return g;
}

Tensor conv3x3_forward(const Tensor& x, const Tensor& k, const Tensor& b) {
  if (x.rank() != 4 || k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3 ||
      x.dim(1) != k.dim(1) || b.numel() != k.dim(0))
    throw Error(ErrorKind::ShapeMismatch, "conv3x3_forward");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3), cout = k.dim(0);
  Tensor y({batch, cout, h, w});
  kernels::conv3x3(x.ptr(), k.ptr(), b.ptr(), y.ptr(), batch, cin, h, w, cout);
  return y;
}

ConvGrads conv3x3_backward(const Tensor& x, const Tensor& k, const Tensor& dy) {
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3), cout = k.dim(0);
  if (dy.shape != std::vector<int>{batch, cout, h, w})
    throw Error(ErrorKind::ShapeMismatch, "conv3x3_backward");
  ConvGrads g;
  g.dx = Tensor({batch, cin, h, w});
  g.dk = Tensor({cout, cin, 3, 3});
  g.db = Tensor({cout});
  kernels::conv3x3_backward_input(dy.ptr(), k.ptr(), g.dx.ptr(), batch, cin, h, w, cout);
  kernels::conv3x3_backward_params(x.ptr(), dy.ptr(), g.dk.ptr(), g.db.ptr(), batch, cin, h, w,
                                   cout);
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  if (!x.same_shape(dy)) throw Error(ErrorKind::ShapeMismatch, "relu_backward");
  Tensor dx = dy;
  for (long i = 0; i < dx.numel(); ++i) dx[i] = x[i] > 0.0f ? dx[i] : 0.0f;
  return dx;
}

Tensor softmax_forward(const Tensor& x) {
  Tensor y = x;
  const int cols = x.dim(x.rank() - 1);
  const long rows = x.numel() / cols;
  for (long r = 0; r < rows; ++r) {
    float* row = y.ptr() + r * cols;
    float mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    float sum = 0.0f;
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    float inv = 1.0f / sum;
    for (int j = 0; j < cols; ++j) row[j] *= inv;
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  if (!y.same_shape(dy)) throw Error(ErrorKind::ShapeMismatch, "softmax_backward");
  Tensor dx = dy;
  const int cols = y.dim(y.rank() - 1);
  const long rows = y.numel() / cols;
  for (long r = 0; r < rows; ++r) {
    const float* yr = y.ptr() + r * cols;
    float* dr = dx.ptr() + r * cols;
    float dot = 0.0f;
    for (int j = 0; j < cols; ++j) dot += yr[j] * dr[j];
    for (int j = 0; j < cols; ++j) dr[j] = yr[j] * (dr[j] - dot);
  }
  return dx;
}

AttentionOut scaled_attention(const Tensor& q, const Tensor& keys, const Tensor& values) {
  if (keys.rank() != 2 || values.rank() != 2 || q.numel() != keys.dim(1) ||
      keys.dim(0) != values.dim(0))
    throw Error(ErrorKind::ShapeMismatch, "scaled_attention");
  const int z = keys.dim(0), dk = keys.dim(1), dv = values.dim(1);
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));
  Tensor scores({z});
  for (int i = 0; i < z; ++i) {
    const float* krow = keys.ptr() + static_cast<size_t>(i) * dk;
    float s = 0.0f;
    for (int d = 0; d < dk; ++d) s += q[d] * krow[d];
    scores[i] = s * scale;
  }
  AttentionOut out;
  out.weights = softmax_forward(scores);
  out.mix = Tensor({dv});
  for (int i = 0; i < z; ++i) {
    const float* vrow = values.ptr() + static_cast<size_t>(i) * dv;
    float wi = out.weights[i];
    for (int d = 0; d < dv; ++d) out.mix[d] += wi * vrow[d];
  }
  return out;
}

AttentionGrads scaled_attention_backward(const Tensor& q, const Tensor& keys,
                                         const Tensor& values, const AttentionOut& out,
                                         const Tensor& dmix) {
  const int z = keys.dim(0), dk = keys.dim(1), dv = values.dim(1);
  if (dmix.numel() != dv) throw Error(ErrorKind::ShapeMismatch, "scaled_attention_backward");
  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));
  AttentionGrads g;
  g.dq = Tensor({dk});
  g.dkeys = Tensor({z, dk});
  g.dvalues = Tensor({z, dv});
  Tensor dweights({z});
  for (int i = 0; i < z; ++i) {
    const float* vrow = values.ptr() + static_cast<size_t>(i) * dv;
    float* dvrow = g.dvalues.ptr() + static_cast<size_t>(i) * dv;
    float acc = 0.0f;
    for (int d = 0; d < dv; ++d) {
      acc += vrow[d] * dmix[d];
      dvrow[d] = out.weights[i] * dmix[d];
    }
    dweights[i] = acc;
  }
  Tensor dscores = softmax_backward(out.weights, dweights);
  for (int i = 0; i < z; ++i) {
    const float* krow = keys.ptr() + static_cast<size_t>(i) * dk;
    float* dkrow = g.dkeys.ptr() + static_cast<size_t>(i) * dk;
    float ds = dscores[i] * scale;
    for (int d = 0; d < dk; ++d) {
      g.dq[d] += ds * krow[d];
      dkrow[d] = ds * q[d];
    }
  }
  return g;
}

namespace {

inline float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// [batch, seq, d] -> [seq, batch, d]
Tensor to_time_major(const Tensor& x, int batch, int seq, int d) {
  Tensor out({seq, batch, d});
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < seq; ++t)
      std::memcpy(out.ptr() + (static_cast<size_t>(t) * batch + b) * d,
                  x.ptr() + (static_cast<size_t>(b) * seq + t) * d, sizeof(float) * d);
  return out;
}

// Gate blocks within a 3H row: [r | z | c].
void run_direction(const Tensor& x_tm, int batch, int seq, int in_dim, int hidden,
                   const Tensor& wx, const Tensor& wh_rz, const Tensor& wh_c,
                   const Tensor& bias, bool reverse, Tensor* out_tm, int out_offset,
                   Tensor* gates_cache, Tensor* hprev_cache) {
  const int h3 = 3 * hidden;
  const long rows = static_cast<long>(seq) * batch;
  Tensor xp({seq, batch, h3});
  for (long r = 0; r < rows; ++r)
    std::memcpy(xp.ptr() + r * h3, bias.ptr(), sizeof(float) * h3);
  kernels::gemm(x_tm.ptr(), wx.ptr(), xp.ptr(), static_cast<int>(rows), in_dim, h3, true);

  Tensor h({batch, hidden});
  Tensor hp_rz({batch, 2 * hidden});
  Tensor rh({batch, hidden});
  Tensor hp_c({batch, hidden});
  const int out_width = 2 * hidden;
  for (int s = 0; s < seq; ++s) {
    const int t = reverse ? seq - 1 - s : s;
    if (hprev_cache != nullptr)
      std::memcpy(hprev_cache->ptr() + static_cast<size_t>(t) * batch * hidden, h.ptr(),
                  sizeof(float) * batch * hidden);
    kernels::gemm(h.ptr(), wh_rz.ptr(), hp_rz.ptr(), batch, hidden, 2 * hidden);
    const float* xp_t = xp.ptr() + static_cast<size_t>(t) * batch * h3;
    float* gates_t =
        gates_cache != nullptr ? gates_cache->ptr() + static_cast<size_t>(t) * batch * h3 : nullptr;
    for (int b = 0; b < batch; ++b) {
      const float* xrow = xp_t + static_cast<size_t>(b) * h3;
      const float* hrow = h.ptr() + static_cast<size_t>(b) * hidden;
      const float* hprow = hp_rz.ptr() + static_cast<size_t>(b) * 2 * hidden;
      float* rhrow = rh.ptr() + static_cast<size_t>(b) * hidden;
      for (int i = 0; i < hidden; ++i) {
        float r = sigmoidf(xrow[i] + hprow[i]);
        rhrow[i] = r * hrow[i];
        if (gates_t != nullptr) gates_t[static_cast<size_t>(b) * h3 + i] = r;
      }
    }
    kernels::gemm(rh.ptr(), wh_c.ptr(), hp_c.ptr(), batch, hidden, hidden);
    for (int b = 0; b < batch; ++b) {
      const float* xrow = xp_t + static_cast<size_t>(b) * h3;
      const float* hprow = hp_rz.ptr() + static_cast<size_t>(b) * 2 * hidden;
      const float* hcrow = hp_c.ptr() + static_cast<size_t>(b) * hidden;
      float* hrow = h.ptr() + static_cast<size_t>(b) * hidden;
      float* grow = gates_t != nullptr ? gates_t + static_cast<size_t>(b) * h3 : nullptr;
      float* orow =
          out_tm->ptr() + (static_cast<size_t>(t) * batch + b) * out_width + out_offset;
      for (int i = 0; i < hidden; ++i) {
        float z = sigmoidf(xrow[hidden + i] + hprow[hidden + i]);
        float c = std::tanh(xrow[2 * hidden + i] + hcrow[i]);
        float hnew = (1.0f - z) * hrow[i] + z * c;
        if (grow != nullptr) {
          grow[hidden + i] = z;
          grow[2 * hidden + i] = c;
        }
        hrow[i] = hnew;
        orow[i] = hnew;
      }
    }
  }
}

struct DirGrads {
  Tensor dx_tm, dwx, dwh_rz, dwh_c, db;
};

DirGrads backward_direction(const Tensor& x_tm, int batch, int seq, int in_dim, int hidden,
                            const Tensor& wx, const Tensor& wh_rz, const Tensor& wh_c,
                            bool reverse, const Tensor& dy_tm, int out_offset,
                            const Tensor& gates, const Tensor& hprev) {
  const int h3 = 3 * hidden;
  const int out_width = 2 * hidden;
  const long rows = static_cast<long>(seq) * batch;
  Tensor dxp({seq, batch, h3});
  Tensor dh({batch, hidden});  // gradient flowing into h after position t
  DirGrads g;
  g.dwh_rz = Tensor({hidden, 2 * hidden});
  g.dwh_c = Tensor({hidden, hidden});
  Tensor drz({batch, 2 * hidden});
  Tensor dc_pre({batch, hidden});
  Tensor drh({batch, hidden});
  Tensor rh({batch, hidden});
  Tensor dh_prev({batch, hidden});
  for (int s = seq - 1; s >= 0; --s) {
    const int t = reverse ? seq - 1 - s : s;
    const float* gates_t = gates.ptr() + static_cast<size_t>(t) * batch * h3;
    const float* hprev_t = hprev.ptr() + static_cast<size_t>(t) * batch * hidden;
    for (int b = 0; b < batch; ++b) {
      const float* grow = gates_t + static_cast<size_t>(b) * h3;
      const float* hprow = hprev_t + static_cast<size_t>(b) * hidden;
      const float* dyrow =
          dy_tm.ptr() + (static_cast<size_t>(t) * batch + b) * out_width + out_offset;
      float* dhrow = dh.ptr() + static_cast<size_t>(b) * hidden;
      float* dcrow = dc_pre.ptr() + static_cast<size_t>(b) * hidden;
      float* drzrow = drz.ptr() + static_cast<size_t>(b) * 2 * hidden;
      float* rhrow = rh.ptr() + static_cast<size_t>(b) * hidden;
      float* dhprow = dh_prev.ptr() + static_cast<size_t>(b) * hidden;
      for (int i = 0; i < hidden; ++i) {
        float r = grow[i], z = grow[hidden + i], c = grow[2 * hidden + i];
        float dht = dhrow[i] + dyrow[i];
        float dz = dht * (c - hprow[i]);
        float dc = dht * z;
        dhprow[i] = dht * (1.0f - z);
        dcrow[i] = dc * (1.0f - c * c);
        drzrow[hidden + i] = dz * z * (1.0f - z);
        rhrow[i] = r * hprow[i];
      }
    }
    // candidate path: drh = dc_pre * wh_c^T, dwh_c += rh^T dc_pre
    kernels::gemm_bt(dc_pre.ptr(), wh_c.ptr(), drh.ptr(), batch, hidden, hidden);
    kernels::gemm_at(rh.ptr(), dc_pre.ptr(), g.dwh_c.ptr(), batch, hidden, hidden, true);
    for (int b = 0; b < batch; ++b) {
      const float* grow = gates_t + static_cast<size_t>(b) * h3;
      const float* hprow = hprev_t + static_cast<size_t>(b) * hidden;
      const float* drhrow = drh.ptr() + static_cast<size_t>(b) * hidden;
      float* drzrow = drz.ptr() + static_cast<size_t>(b) * 2 * hidden;
      float* dhprow = dh_prev.ptr() + static_cast<size_t>(b) * hidden;
      for (int i = 0; i < hidden; ++i) {
        float r = grow[i];
        float dr = drhrow[i] * hprow[i];
        dhprow[i] += drhrow[i] * r;
        drzrow[i] = dr * r * (1.0f - r);
      }
    }
    // gate path through wh_rz
    kernels::gemm_bt(drz.ptr(), wh_rz.ptr(), dh.ptr(), batch, 2 * hidden, hidden);
    Tensor hprev_t_mat({batch, hidden});
    std::memcpy(hprev_t_mat.ptr(), hprev_t, sizeof(float) * batch * hidden);
    kernels::gemm_at(hprev_t_mat.ptr(), drz.ptr(), g.dwh_rz.ptr(), batch, hidden, 2 * hidden,
                     true);
    for (int b = 0; b < batch; ++b) {
      float* dhrow = dh.ptr() + static_cast<size_t>(b) * hidden;
      const float* dhprow = dh_prev.ptr() + static_cast<size_t>(b) * hidden;
      for (int i = 0; i < hidden; ++i) dhrow[i] += dhprow[i];
      float* dxprow = dxp.ptr() + (static_cast<size_t>(t) * batch + b) * h3;
      const float* drzrow = drz.ptr() + static_cast<size_t>(b) * 2 * hidden;
      const float* dcrow = dc_pre.ptr() + static_cast<size_t>(b) * hidden;
      for (int i = 0; i < hidden; ++i) {
        dxprow[i] = drzrow[i];
        dxprow[hidden + i] = drzrow[hidden + i];
        dxprow[2 * hidden + i] = dcrow[i];
      }
    }
  }
  g.dx_tm = Tensor({seq, batch, in_dim});
  kernels::gemm_bt(dxp.ptr(), wx.ptr(), g.dx_tm.ptr(), static_cast<int>(rows), h3, in_dim);
  g.dwx = Tensor({in_dim, h3});
  kernels::gemm_at(x_tm.ptr(), dxp.ptr(), g.dwx.ptr(), static_cast<int>(rows), in_dim, h3);
  g.db = Tensor({h3});
  for (long r = 0; r < rows; ++r) {
    const float* row = dxp.ptr() + r * h3;
    for (int i = 0; i < h3; ++i) g.db[i] += row[i];
  }
  return g;
}

}  // namespace

Tensor bigru_forward(const Tensor& x, int batch, int seq, const BiGruParamRefs& p,
                     BiGruCache* cache) {
  const int in_dim = p.wx_f->dim(0);
  const int hidden = p.wx_f->dim(1) / 3;
  if (x.numel() != static_cast<long>(batch) * seq * in_dim)
    throw Error(ErrorKind::ShapeMismatch, "bigru_forward");
  Tensor x_tm = to_time_major(x, batch, seq, in_dim);
  Tensor out_tm({seq, batch, 2 * hidden});
  Tensor *gf = nullptr, *gb = nullptr, *hf = nullptr, *hb = nullptr;
  if (cache != nullptr) {
    cache->batch = batch;
    cache->seq = seq;
    cache->in_dim = in_dim;
    cache->hidden = hidden;
    cache->gates_f = Tensor({seq, batch, 3 * hidden});
    cache->gates_b = Tensor({seq, batch, 3 * hidden});
    cache->hprev_f = Tensor({seq, batch, hidden});
    cache->hprev_b = Tensor({seq, batch, hidden});
    gf = &cache->gates_f;
    gb = &cache->gates_b;
    hf = &cache->hprev_f;
    hb = &cache->hprev_b;
  }
  run_direction(x_tm, batch, seq, in_dim, hidden, *p.wx_f, *p.whrz_f, *p.whc_f, *p.b_f,
                /*reverse=*/false, &out_tm, 0, gf, hf);
  run_direction(x_tm, batch, seq, in_dim, hidden, *p.wx_b, *p.whrz_b, *p.whc_b, *p.b_b,
                /*reverse=*/true, &out_tm, hidden, gb, hb);
  if (cache != nullptr) cache->x_tm = std::move(x_tm);
  // back to batch-major
  Tensor out({batch, seq, 2 * hidden});
  const int d = 2 * hidden;
  for (int t = 0; t < seq; ++t)
    for (int b = 0; b < batch; ++b)
      std::memcpy(out.ptr() + (static_cast<size_t>(b) * seq + t) * d,
                  out_tm.ptr() + (static_cast<size_t>(t) * batch + b) * d, sizeof(float) * d);
  return out;
}

Tensor bigru_forward_seq(const Tensor& x, const BiGruParamRefs& p, BiGruCache* cache) {
  const int seq = x.dim(0);
  Tensor out = bigru_forward(x, 1, seq, p, cache);
  out.shape = {seq, out.dim(2)};
  return out;
}

BiGruGrads bigru_backward(const BiGruParamRefs& p, const BiGruCache& cache, const Tensor& dy) {
  const int batch = cache.batch, seq = cache.seq, in_dim = cache.in_dim, hidden = cache.hidden;
  if (dy.numel() != static_cast<long>(batch) * seq * 2 * hidden)
    throw Error(ErrorKind::ShapeMismatch, "bigru_backward");
  Tensor dy_tm = to_time_major(dy, batch, seq, 2 * hidden);
  DirGrads gf = backward_direction(cache.x_tm, batch, seq, in_dim, hidden, *p.wx_f, *p.whrz_f,
                                   *p.whc_f, /*reverse=*/false, dy_tm, 0, cache.gates_f,
                                   cache.hprev_f);
  DirGrads gb = backward_direction(cache.x_tm, batch, seq, in_dim, hidden, *p.wx_b, *p.whrz_b,
                                   *p.whc_b, /*reverse=*/true, dy_tm, hidden, cache.gates_b,
                                   cache.hprev_b);
  BiGruGrads g;
  g.dwx_f = std::move(gf.dwx);
  g.dwhrz_f = std::move(gf.dwh_rz);
  g.dwhc_f = std::move(gf.dwh_c);
  g.db_f = std::move(gf.db);
  g.dwx_b = std::move(gb.dwx);
  g.dwhrz_b = std::move(gb.dwh_rz);
  g.dwhc_b = std::move(gb.dwh_c);
  g.db_b = std::move(gb.db);
  // dx back to batch-major, summing both directions
  g.dx = Tensor({batch, seq, in_dim});
  for (int t = 0; t < seq; ++t)
    for (int b = 0; b < batch; ++b) {
      float* dst = g.dx.ptr() + (static_cast<size_t>(b) * seq + t) * in_dim;
      const float* sf = gf.dx_tm.ptr() + (static_cast<size_t>(t) * batch + b) * in_dim;
      const float* sb = gb.dx_tm.ptr() + (static_cast<size_t>(t) * batch + b) * in_dim;
      for (int i = 0; i < in_dim; ++i) dst[i] = sf[i] + sb[i];
    }
  return g;
}

void init_glorot(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const float s = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  for (auto& v : t.data) v = (rng.next_float() * 2.0f - 1.0f) * s;
}

}  // namespace abm::nn
