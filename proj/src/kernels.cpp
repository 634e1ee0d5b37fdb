#include "abmapper/kernels.hpp"

#include <cstring>

namespace abm::nn::kernels {

namespace {

// Row of C accumulates rank-1 updates in ascending k order; the inner loop
// over n carries no reduction and vectorizes without reordering sums.
inline void gemm_row(const float* a, const float* b, float* c, int k, int n) {
  for (int kk = 0; kk < k; ++kk) {
    float av = a[kk];
    const float* brow = b + static_cast<size_t>(kk) * n;
    for (int j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

}  // namespace

void gemm_serial(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(float) * n);
    gemm_row(a + static_cast<size_t>(i) * k, b, crow, k, n);
  }
}

void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(float) * n);
    gemm_row(a + static_cast<size_t>(i) * k, b, crow, k, n);
  }
}

void gemm_bt_serial(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<size_t>(j) * k;
      float acc = accumulate ? crow[j] : 0.0f;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = acc;
    }
  }
}

void gemm_bt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<size_t>(j) * k;
      float acc = accumulate ? crow[j] : 0.0f;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = acc;
    }
  }
}

void gemm_at_serial(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < k; ++i) {
    float* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(float) * n);
    for (int mm = 0; mm < m; ++mm) {
      float av = a[static_cast<size_t>(mm) * k + i];
      const float* brow = b + static_cast<size_t>(mm) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_at(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < k; ++i) {
    float* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(float) * n);
    for (int mm = 0; mm < m; ++mm) {
      float av = a[static_cast<size_t>(mm) * k + i];
      const float* brow = b + static_cast<size_t>(mm) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace {

// One (batch, out-channel) plane. Accumulation order over (c, kh, kw) is
// fixed; the w loop is reduction-free.
inline void conv_plane(const float* xb, const float* ko, float bias, float* yp,
                       int cin, int h, int w) {
  const int hw = h * w;
  for (int i = 0; i < hw; ++i) yp[i] = bias;
  for (int c = 0; c < cin; ++c) {
    const float* xc = xb + static_cast<size_t>(c) * hw;
    const float* kc = ko + static_cast<size_t>(c) * 9;
    for (int kh = 0; kh < 3; ++kh) {
      for (int kw = 0; kw < 3; ++kw) {
        float kv = kc[kh * 3 + kw];
        int dy = kh - 1, dx = kw - 1;
        int y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
        int x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
        for (int yy = y0; yy < y1; ++yy) {
          const float* xrow = xc + static_cast<size_t>(yy + dy) * w + dx;
          float* yrow = yp + static_cast<size_t>(yy) * w;
          for (int xx = x0; xx < x1; ++xx) yrow[xx] += kv * xrow[xx];
        }
      }
    }
  }
}

inline void conv_input_grad_plane(const float* dyb, const float* k, float* dxp,
                                  int cout, int cin_stride_c, int c, int h, int w) {
  const int hw = h * w;
  for (int i = 0; i < hw; ++i) dxp[i] = 0.0f;
  for (int o = 0; o < cout; ++o) {
    const float* dyo = dyb + static_cast<size_t>(o) * hw;
    const float* kc = k + (static_cast<size_t>(o) * cin_stride_c + c) * 9;
    // dx[y,x] += dy[y+dy', x+dx'] * k[1-dy', 1-dx'] — correlation flipped.
    for (int kh = 0; kh < 3; ++kh) {
      for (int kw = 0; kw < 3; ++kw) {
        float kv = kc[kh * 3 + kw];
        int dy = 1 - kh, dx = 1 - kw;
        int y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
        int x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
        for (int yy = y0; yy < y1; ++yy) {
          const float* dyrow = dyo + static_cast<size_t>(yy + dy) * w + dx;
          float* dxrow = dxp + static_cast<size_t>(yy) * w;
          for (int xx = x0; xx < x1; ++xx) dxrow[xx] += kv * dyrow[xx];
        }
      }
    }
  }
}

inline void conv_param_grad_oc(const float* x, const float* dy, float* dk9, float* db,
                               int batch, int cin, int h, int w, int cout, int o, int c) {
  const int hw = h * w;
  for (int kh = 0; kh < 3; ++kh) {
    for (int kw = 0; kw < 3; ++kw) {
      int dyy = kh - 1, dxx = kw - 1;
      int y0 = dyy < 0 ? 1 : 0, y1 = dyy > 0 ? h - 1 : h;
      int x0 = dxx < 0 ? 1 : 0, x1 = dxx > 0 ? w - 1 : w;
      float acc = dk9[kh * 3 + kw];
      for (int b = 0; b < batch; ++b) {
        const float* xc = x + (static_cast<size_t>(b) * cin + c) * hw;
        const float* dyo = dy + (static_cast<size_t>(b) * cout + o) * hw;
        for (int yy = y0; yy < y1; ++yy) {
          const float* xrow = xc + static_cast<size_t>(yy + dyy) * w + dxx;
          const float* dyrow = dyo + static_cast<size_t>(yy) * w;
          for (int xx = x0; xx < x1; ++xx) acc += xrow[xx] * dyrow[xx];
        }
      }
      dk9[kh * 3 + kw] = acc;
    }
  }
  if (db != nullptr && c == 0) {
    float acc = db[o];
    for (int b = 0; b < batch; ++b) {
      const float* dyo = dy + (static_cast<size_t>(b) * cout + o) * hw;
      for (int i = 0; i < hw; ++i) acc += dyo[i];
    }
    db[o] = acc;
  }
}

}  // namespace

void conv3x3_serial(const float* x, const float* k, const float* bias, float* y,
                    int batch, int cin, int h, int w, int cout) {
  const int hw = h * w;
  for (int bo = 0; bo < batch * cout; ++bo) {
    int b = bo / cout, o = bo % cout;
    conv_plane(x + static_cast<size_t>(b) * cin * hw, k + static_cast<size_t>(o) * cin * 9,
               bias[o], y + static_cast<size_t>(bo) * hw, cin, h, w);
  }
}

void conv3x3(const float* x, const float* k, const float* bias, float* y,
             int batch, int cin, int h, int w, int cout) {
  const int hw = h * w;
#pragma omp parallel for schedule(static)
  for (int bo = 0; bo < batch * cout; ++bo) {
    int b = bo / cout, o = bo % cout;
    conv_plane(x + static_cast<size_t>(b) * cin * hw, k + static_cast<size_t>(o) * cin * 9,
               bias[o], y + static_cast<size_t>(bo) * hw, cin, h, w);
  }
}

void conv3x3_backward_input_serial(const float* dy, const float* k, float* dx,
                                   int batch, int cin, int h, int w, int cout) {
  const int hw = h * w;
  for (int bc = 0; bc < batch * cin; ++bc) {
    int b = bc / cin, c = bc % cin;
    conv_input_grad_plane(dy + static_cast<size_t>(b) * cout * hw, k,
                          dx + static_cast<size_t>(bc) * hw, cout, cin, c, h, w);
  }
}

void conv3x3_backward_input(const float* dy, const float* k, float* dx,
                            int batch, int cin, int h, int w, int cout) {
  const int hw = h * w;
#pragma omp parallel for schedule(static)
  for (int bc = 0; bc < batch * cin; ++bc) {
    int b = bc / cin, c = bc % cin;
    conv_input_grad_plane(dy + static_cast<size_t>(b) * cout * hw, k,
                          dx + static_cast<size_t>(bc) * hw, cout, cin, c, h, w);
  }
}

void conv3x3_backward_params_serial(const float* x, const float* dy, float* dk, float* db,
                                    int batch, int cin, int h, int w, int cout) {
  for (int oc = 0; oc < cout * cin; ++oc) {
    int o = oc / cin, c = oc % cin;
    conv_param_grad_oc(x, dy, dk + static_cast<size_t>(oc) * 9, db, batch, cin, h, w, cout, o, c);
  }
}

void conv3x3_backward_params(const float* x, const float* dy, float* dk, float* db,
                             int batch, int cin, int h, int w, int cout) {
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < cout * cin; ++oc) {
    int o = oc / cin, c = oc % cin;
    conv_param_grad_oc(x, dy, dk + static_cast<size_t>(oc) * 9, db, batch, cin, h, w, cout, o, c);
  }
}

}  // namespace abm::nn::kernels
