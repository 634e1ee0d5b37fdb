#include "abmapper/grad_check.hpp"

#include <cmath>
#include <memory>
#include <ostream>

#include "abmapper/layers.hpp"

namespace abm::nn {

namespace {

double norm2(const Tensor& t) {
  double s = 0.0;
  for (float v : t.data) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

double norm2_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (long i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void fill_uniform(Tensor& t, Rng& rng, float scale) {
  for (auto& v : t.data) v = (rng.next_float() * 2.0f - 1.0f) * scale;
}

// Keeps values away from the ReLU kink so central differences stay valid.
void fill_uniform_away_from_zero(Tensor& t, Rng& rng, float scale, float margin) {
  for (auto& v : t.data) {
    float x;
    do {
      x = (rng.next_float() * 2.0f - 1.0f) * scale;
    } while (std::fabs(x) < margin);
    v = x;
  }
}

double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (long i = 0; i < y.numel(); ++i) s += static_cast<double>(y[i]) * w[i];
  return s;
}

}  // namespace

double fd_max_rel_err(FdProblem& problem, float eps) {
  std::vector<Tensor> analytic = problem.analytic();
  if (analytic.size() != problem.wrt.size())
    throw Error(ErrorKind::LengthMismatch, "fd_max_rel_err: analytic grads vs wrt");
  double worst = 0.0;
  for (size_t ti = 0; ti < problem.wrt.size(); ++ti) {
    Tensor& t = *problem.wrt[ti];
    Tensor fd(t.shape);
    for (long i = 0; i < t.numel(); ++i) {
      const float orig = t[i];
      t[i] = orig + eps;
      const double lp = problem.loss();
      t[i] = orig - eps;
      const double lm = problem.loss();
      t[i] = orig;
      fd[i] = static_cast<float>((lp - lm) / (2.0 * eps));
    }
    const double denom = std::max(norm2(analytic[ti]) + norm2(fd), 1e-8);
    worst = std::max(worst, norm2_diff(analytic[ti], fd) / denom);
  }
  return worst;
}

GradCheckReport run_layer_gradchecks(int trials, float eps, double tol, uint64_t seed,
                                     std::ostream* log) {
  GradCheckReport report;
  Rng rng(seed);

  auto run_block = [&](const std::string& name,
                       const std::function<FdProblem(Rng&)>& make) {
    BlockReport br;
    br.name = name;
    for (int t = 0; t < trials; ++t) {
      Rng trial_rng = rng.fork(static_cast<uint64_t>(t) * 7919 + 13);
      FdProblem p = make(trial_rng);
      br.max_rel_err = std::max(br.max_rel_err, fd_max_rel_err(p, eps));
    }
    br.pass = br.max_rel_err < tol;
    if (log != nullptr)
      *log << (br.pass ? "PASS" : "FAIL") << " gradcheck " << name
           << " max_rel_err=" << br.max_rel_err << "\n";
    report.blocks.push_back(br);
  };

  run_block("dense", [](Rng& r) {
    const int batch = 1 + static_cast<int>(r.next_below(4));
    const int in = 1 + static_cast<int>(r.next_below(8));
    const int out = 1 + static_cast<int>(r.next_below(8));
    auto x = std::make_shared<Tensor>(std::vector<int>{batch, in});
    auto w = std::make_shared<Tensor>(std::vector<int>{in, out});
    auto b = std::make_shared<Tensor>(std::vector<int>{out});
    auto lw = std::make_shared<Tensor>(std::vector<int>{batch, out});
    fill_uniform(*x, r, 1.0f);
    fill_uniform(*w, r, 1.0f);
    fill_uniform(*b, r, 1.0f);
    fill_uniform(*lw, r, 1.0f);
    FdProblem p;
    p.name = "dense";
    p.wrt = {x.get(), w.get(), b.get()};
    p.loss = [=] { return weighted_sum(dense_forward(*x, *w, *b), *lw); };
    p.analytic = [=] {
      DenseGrads g = dense_backward(*x, *w, *lw);
      return std::vector<Tensor>{g.dx, g.dw, g.db};
    };
    return p;
  });

  run_block("conv3x3", [](Rng& r) {
    const int batch = 1 + static_cast<int>(r.next_below(2));
    const int cin = 1 + static_cast<int>(r.next_below(3));
    const int cout = 1 + static_cast<int>(r.next_below(3));
    const int hw = 3 + static_cast<int>(r.next_below(3));
    auto x = std::make_shared<Tensor>(std::vector<int>{batch, cin, hw, hw});
    auto k = std::make_shared<Tensor>(std::vector<int>{cout, cin, 3, 3});
    auto b = std::make_shared<Tensor>(std::vector<int>{cout});
    auto lw = std::make_shared<Tensor>(std::vector<int>{batch, cout, hw, hw});
    fill_uniform(*x, r, 1.0f);
    fill_uniform(*k, r, 0.5f);
    fill_uniform(*b, r, 0.5f);
    fill_uniform(*lw, r, 1.0f);
    FdProblem p;
    p.name = "conv3x3";
    p.wrt = {x.get(), k.get(), b.get()};
    p.loss = [=] { return weighted_sum(conv3x3_forward(*x, *k, *b), *lw); };
    p.analytic = [=] {
      ConvGrads g = conv3x3_backward(*x, *k, *lw);
      return std::vector<Tensor>{g.dx, g.dk, g.db};
    };
    return p;
  });

  run_block("relu", [](Rng& r) {
    const int n = 4 + static_cast<int>(r.next_below(12));
    auto x = std::make_shared<Tensor>(std::vector<int>{n});
    auto lw = std::make_shared<Tensor>(std::vector<int>{n});
    fill_uniform_away_from_zero(*x, r, 1.0f, 0.05f);
    fill_uniform(*lw, r, 1.0f);
    FdProblem p;
    p.name = "relu";
    p.wrt = {x.get()};
    p.loss = [=] { return weighted_sum(relu_forward(*x), *lw); };
    p.analytic = [=] { return std::vector<Tensor>{relu_backward(*x, *lw)}; };
    return p;
  });

  run_block("softmax", [](Rng& r) {
    const int rows = 1 + static_cast<int>(r.next_below(3));
    const int cols = 2 + static_cast<int>(r.next_below(6));
    auto x = std::make_shared<Tensor>(std::vector<int>{rows, cols});
    auto lw = std::make_shared<Tensor>(std::vector<int>{rows, cols});
    fill_uniform(*x, r, 2.0f);
    fill_uniform(*lw, r, 1.0f);
    FdProblem p;
    p.name = "softmax";
    p.wrt = {x.get()};
    p.loss = [=] { return weighted_sum(softmax_forward(*x), *lw); };
    p.analytic = [=] {
      Tensor y = softmax_forward(*x);
      return std::vector<Tensor>{softmax_backward(y, *lw)};
    };
    return p;
  });

  run_block("birecurrent", [](Rng& r) {
    const int seq = 1 + static_cast<int>(r.next_below(3));
    const int in = 2 + static_cast<int>(r.next_below(3));
    const int hidden = 2 + static_cast<int>(r.next_below(3));
    auto x = std::make_shared<Tensor>(std::vector<int>{seq, in});
    auto wx_f = std::make_shared<Tensor>(std::vector<int>{in, 3 * hidden});
    auto whrz_f = std::make_shared<Tensor>(std::vector<int>{hidden, 2 * hidden});
    auto whc_f = std::make_shared<Tensor>(std::vector<int>{hidden, hidden});
    auto b_f = std::make_shared<Tensor>(std::vector<int>{3 * hidden});
    auto wx_b = std::make_shared<Tensor>(std::vector<int>{in, 3 * hidden});
    auto whrz_b = std::make_shared<Tensor>(std::vector<int>{hidden, 2 * hidden});
    auto whc_b = std::make_shared<Tensor>(std::vector<int>{hidden, hidden});
    auto b_b = std::make_shared<Tensor>(std::vector<int>{3 * hidden});
    auto lw = std::make_shared<Tensor>(std::vector<int>{seq, 2 * hidden});
    for (Tensor* t : {x.get(), wx_f.get(), whrz_f.get(), whc_f.get(), b_f.get(), wx_b.get(),
                      whrz_b.get(), whc_b.get(), b_b.get(), lw.get()})
      fill_uniform(*t, r, 0.8f);
    auto params = [=] {
      return BiGruParamRefs{wx_f.get(), whrz_f.get(), whc_f.get(), b_f.get(),
                            wx_b.get(), whrz_b.get(), whc_b.get(), b_b.get()};
    };
    FdProblem p;
    p.name = "birecurrent";
    p.wrt = {x.get(),    wx_f.get(), whrz_f.get(), whc_f.get(), b_f.get(),
             wx_b.get(), whrz_b.get(), whc_b.get(), b_b.get()};
    p.loss = [=] {
      BiGruParamRefs pr = params();
      return weighted_sum(bigru_forward_seq(*x, pr, nullptr), *lw);
    };
    p.analytic = [=] {
      BiGruParamRefs pr = params();
      BiGruCache cache;
      bigru_forward_seq(*x, pr, &cache);
      BiGruGrads g = bigru_backward(pr, cache, *lw);
      g.dx.shape = x->shape;
      return std::vector<Tensor>{g.dx,   g.dwx_f, g.dwhrz_f, g.dwhc_f, g.db_f,
                                 g.dwx_b, g.dwhrz_b, g.dwhc_b, g.db_b};
    };
    return p;
  });

  run_block("attention", [](Rng& r) {
    const int z = 1 + static_cast<int>(r.next_below(4));
    const int dk = 2 + static_cast<int>(r.next_below(5));
    const int dv = 2 + static_cast<int>(r.next_below(5));
    auto q = std::make_shared<Tensor>(std::vector<int>{dk});
    auto keys = std::make_shared<Tensor>(std::vector<int>{z, dk});
    auto values = std::make_shared<Tensor>(std::vector<int>{z, dv});
    auto lw = std::make_shared<Tensor>(std::vector<int>{dv});
    fill_uniform(*q, r, 1.0f);
    fill_uniform(*keys, r, 1.0f);
    fill_uniform(*values, r, 1.0f);
    fill_uniform(*lw, r, 1.0f);
    FdProblem p;
    p.name = "attention";
    p.wrt = {q.get(), keys.get(), values.get()};
    p.loss = [=] { return weighted_sum(scaled_attention(*q, *keys, *values).mix, *lw); };
    p.analytic = [=] {
      AttentionOut out = scaled_attention(*q, *keys, *values);
      AttentionGrads g = scaled_attention_backward(*q, *keys, *values, out, *lw);
      return std::vector<Tensor>{g.dq, g.dkeys, g.dvalues};
    };
    return p;
  });

  return report;
}

}  // namespace abm::nn
