#include "abmapper/models.hpp"

#include <algorithm>
#include <cstring>
#include <ostream>

#include "abmapper/kernels.hpp"

namespace abm::models {

namespace {

// Rows of agent i within a step-major [S*n, dim] block.
Tensor gather_agent_rows(const Tensor& x, int steps, int agents, int i) {
  const int dim = x.dim(1);
  Tensor out({steps, dim});
  for (int t = 0; t < steps; ++t)
    std::memcpy(out.ptr() + static_cast<size_t>(t) * dim,
                x.ptr() + (static_cast<size_t>(t) * agents + i) * dim, sizeof(float) * dim);
  return out;
}

void scatter_agent_rows(Tensor& dst, const Tensor& rows, int steps, int agents, int i,
                        bool add) {
  const int dim = dst.dim(1);
  for (int t = 0; t < steps; ++t) {
    float* d = dst.ptr() + (static_cast<size_t>(t) * agents + i) * dim;
    const float* s = rows.ptr() + static_cast<size_t>(t) * dim;
    if (add)
      for (int k = 0; k < dim; ++k) d[k] += s[k];
    else
      std::memcpy(d, s, sizeof(float) * dim);
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (long i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace

ModelDims tiny_dims() {
  ModelDims d;
  d.cnn_channels = 2;
  d.feature = 8;
  d.gru_hidden = 4;
  d.enc_dim = 8;
  d.attn_dim = 4;
  d.qhead_hidden = 8;
  return d;
}

std::vector<int> select_neighbors(const std::vector<Pos>& positions, int j, int z) {
  const int n = static_cast<int>(positions.size());
  z = std::min(z, n - 1);
  if (z <= 0) return {};
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(n) - 1);
  for (int i = 0; i < n; ++i)
    if (i != j) ids.push_back(i);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    const int da = manhattan(positions[static_cast<size_t>(a)], positions[static_cast<size_t>(j)]);
    const int db = manhattan(positions[static_cast<size_t>(b)], positions[static_cast<size_t>(j)]);
    if (da != db) return da < db;
    return a < b;
  });
  ids.resize(static_cast<size_t>(z));
  std::sort(ids.begin(), ids.end());
  return ids;
}

void soft_update(ParamStore& store, const std::string& target_prefix,
                 const std::string& source_prefix, float tau) {
  auto tnames = store.names(target_prefix);
  auto snames = store.names(source_prefix);
  if (tnames.size() != snames.size())
    throw Error(ErrorKind::NameMismatch, "soft_update: parameter sets differ");
  if (tau == 0.0f) return;
  for (size_t i = 0; i < tnames.size(); ++i) {
    if (tnames[i].substr(target_prefix.size()) != snames[i].substr(source_prefix.size()))
      throw Error(ErrorKind::NameMismatch, "soft_update: " + tnames[i] + " vs " + snames[i]);
    const Tensor& src = store.value(snames[i]);
    Tensor& dst = store.value(tnames[i]);
    if (!dst.same_shape(src)) throw Error(ErrorKind::ShapeMismatch, "soft_update: " + tnames[i]);
    if (tau == 1.0f) {
      dst.data = src.data;
    } else {
      // t += tau*(s - t): exact no-op when already equal
      for (long k = 0; k < dst.numel(); ++k) dst[k] += tau * (src[k] - dst[k]);
    }
  }
}

// ---------------------------------------------------------------------------
// CnnEncoder

CnnEncoder::CnnEncoder(const ModelDims& dims, ParamStore* store, std::string prefix)
    : dims_(dims), store_(store), prefix_(std::move(prefix)) {}

void CnnEncoder::ensure_params(Rng& rng) {
  const int ch = dims_.cnn_channels, cin = dims_.obs_channels;
  auto conv = [&](const std::string& name, int out_c, int in_c) {
    if (store_->has(prefix_ + name + ".k")) return;
    Tensor& k = store_->create(prefix_ + name + ".k", {out_c, in_c, 3, 3}).value;
    nn::init_glorot(k, in_c * 9, out_c * 9, rng);
    store_->create(prefix_ + name + ".b", {out_c});
  };
  conv("conv1", ch, cin);
  conv("conv2", ch, ch);
  conv("conv3", ch, ch);
  conv("conv4", ch, ch);
  auto dense = [&](const std::string& name, int in, int out) {
    if (store_->has(prefix_ + name + ".w")) return;
    Tensor& w = store_->create(prefix_ + name + ".w", {in, out}).value;
    nn::init_glorot(w, in, out, rng);
    store_->create(prefix_ + name + ".b", {out});
  };
  dense("fc1", dims_.flat_len(), dims_.feature);
  dense("fc2", dims_.feature, dims_.feature);
}

Tensor CnnEncoder::forward(const Tensor& obs, CnnCache* cache) const {
  const int batch = obs.dim(0);
  const int ch = dims_.cnn_channels;
  Tensor x(std::vector<int>{batch, dims_.obs_channels, dims_.fov, dims_.fov}, obs.data);
  const auto v = [&](const char* n) -> const Tensor& { return store_->value(prefix_ + n); };
  Tensor c1 = nn::conv3x3_forward(x, v("conv1.k"), v("conv1.b"));
  Tensor a1 = nn::relu_forward(c1);
  Tensor c2 = nn::conv3x3_forward(a1, v("conv2.k"), v("conv2.b"));
  Tensor a2 = nn::relu_forward(c2);
  Tensor c3 = nn::conv3x3_forward(a2, v("conv3.k"), v("conv3.b"));
  Tensor a3 = nn::relu_forward(c3);
  Tensor c4 = nn::conv3x3_forward(a3, v("conv4.k"), v("conv4.b"));
  Tensor a4 = nn::relu_forward(c4);
  Tensor flat(std::vector<int>{batch, ch * dims_.fov * dims_.fov}, a4.data);
  Tensor d1 = nn::dense_forward(flat, v("fc1.w"), v("fc1.b"));
  Tensor r5 = nn::relu_forward(d1);
  Tensor feat = nn::dense_forward(r5, v("fc2.w"), v("fc2.b"));
  if (cache != nullptr) {
    cache->x = std::move(x);
    cache->c1 = std::move(c1);
    cache->a1 = std::move(a1);
    cache->c2 = std::move(c2);
    cache->a2 = std::move(a2);
    cache->c3 = std::move(c3);
    cache->a3 = std::move(a3);
    cache->c4 = std::move(c4);
    cache->a4 = std::move(a4);
    cache->d1 = std::move(d1);
    cache->r5 = std::move(r5);
    cache->feat = feat;
  }
  return feat;
}

Tensor CnnEncoder::backward(const CnnCache& cache, const Tensor& dfeat, bool want_dx) const {
  const int batch = cache.x.dim(0);
  const int ch = dims_.cnn_channels;
  const auto v = [&](const char* n) -> const Tensor& { return store_->value(prefix_ + n); };
  const auto g = [&](const char* n) -> Tensor& { return store_->grad(prefix_ + n); };

  nn::DenseGrads g2 = nn::dense_backward(cache.r5, v("fc2.w"), dfeat);
  accumulate(g("fc2.w"), g2.dw);
  accumulate(g("fc2.b"), g2.db);
  Tensor dd1 = nn::relu_backward(cache.d1, g2.dx);
  Tensor flat(std::vector<int>{batch, ch * dims_.fov * dims_.fov}, cache.a4.data);
  nn::DenseGrads g1 = nn::dense_backward(flat, v("fc1.w"), dd1);
  accumulate(g("fc1.w"), g1.dw);
  accumulate(g("fc1.b"), g1.db);
  Tensor da4(std::vector<int>{batch, ch, dims_.fov, dims_.fov}, g1.dx.data);

  Tensor dc4 = nn::relu_backward(cache.c4, da4);
  nn::ConvGrads c4g = nn::conv3x3_backward(cache.a3, v("conv4.k"), dc4);
  accumulate(g("conv4.k"), c4g.dk);
  accumulate(g("conv4.b"), c4g.db);
  Tensor dc3 = nn::relu_backward(cache.c3, c4g.dx);
  nn::ConvGrads c3g = nn::conv3x3_backward(cache.a2, v("conv3.k"), dc3);
  accumulate(g("conv3.k"), c3g.dk);
  accumulate(g("conv3.b"), c3g.db);
  Tensor dc2 = nn::relu_backward(cache.c2, c3g.dx);
  nn::ConvGrads c2g = nn::conv3x3_backward(cache.a1, v("conv2.k"), dc2);
  accumulate(g("conv2.k"), c2g.dk);
  accumulate(g("conv2.b"), c2g.db);
  Tensor dc1 = nn::relu_backward(cache.c1, c2g.dx);
  nn::ConvGrads c1g = nn::conv3x3_backward(cache.x, v("conv1.k"), dc1);
  accumulate(g("conv1.k"), c1g.dk);
  accumulate(g("conv1.b"), c1g.db);
  if (!want_dx) return Tensor();
  Tensor dobs(std::vector<int>{batch, dims_.obs_len()}, c1g.dx.data);
  return dobs;
}

// ---------------------------------------------------------------------------
// ActorNet

ActorNet::ActorNet(const ModelDims& dims, bool comm, ParamStore* store, std::string prefix)
    : dims_(dims), comm_(comm), store_(store), prefix_(std::move(prefix)) {}

void ActorNet::ensure_params(Rng& rng) {
  CnnEncoder(dims_, store_, prefix_ + "cnn.").ensure_params(rng);
  const int h = dims_.gru_hidden, d = dims_.feature;
  if (comm_ && !store_->has(prefix_ + "comm.wx_f")) {
    auto mk = [&](const std::string& name, std::vector<int> shape, int fi, int fo) {
      Tensor& t = store_->create(prefix_ + name, std::move(shape)).value;
      nn::init_glorot(t, fi, fo, rng);
    };
    for (const char* dir : {"f", "b"}) {
      mk(std::string("comm.wx_") + dir, {d, 3 * h}, d, h);
      mk(std::string("comm.whrz_") + dir, {h, 2 * h}, h, h);
      mk(std::string("comm.whc_") + dir, {h, h}, h, h);
      store_->create(prefix_ + "comm.b_" + dir, {3 * h});
    }
  }
  const int head_in = comm_ ? 2 * h : d;
  if (!store_->has(prefix_ + "head.w")) {
    Tensor& w = store_->create(prefix_ + "head.w", {head_in, dims_.n_actions}).value;
    nn::init_glorot(w, head_in, dims_.n_actions, rng);
    store_->create(prefix_ + "head.b", {dims_.n_actions});
  }
}

Tensor ActorNet::forward(const Tensor& obs, int steps, int agents, ActorCache* cache) const {
  if (obs.dim(0) != steps * agents || obs.dim(1) != dims_.obs_len())
    throw Error(ErrorKind::ShapeMismatch, "actor forward: obs rows");
  CnnEncoder cnn(dims_, store_, prefix_ + "cnn.");
  CnnCache* cnn_cache = cache != nullptr ? &cache->cnn : nullptr;
  Tensor feats = cnn.forward(obs, cnn_cache);
  Tensor head_in;
  if (comm_) {
    nn::BiGruParamRefs p{&store_->value(prefix_ + "comm.wx_f"),
                         &store_->value(prefix_ + "comm.whrz_f"),
                         &store_->value(prefix_ + "comm.whc_f"),
                         &store_->value(prefix_ + "comm.b_f"),
                         &store_->value(prefix_ + "comm.wx_b"),
                         &store_->value(prefix_ + "comm.whrz_b"),
                         &store_->value(prefix_ + "comm.whc_b"),
                         &store_->value(prefix_ + "comm.b_b")};
    // step-major rows [t*n+i] are exactly [batch=T, seq=n] layout
    Tensor out = nn::bigru_forward(feats, steps, agents, p, cache ? &cache->gru : nullptr);
    head_in = Tensor(std::vector<int>{steps * agents, 2 * dims_.gru_hidden}, std::move(out.data));
  } else {
    head_in = feats;
  }
  Tensor logits =
      nn::dense_forward(head_in, store_->value(prefix_ + "head.w"), store_->value(prefix_ + "head.b"));
  Tensor probs = nn::softmax_forward(logits);
  if (cache != nullptr) {
    cache->steps = steps;
    cache->agents = agents;
    cache->feats = std::move(feats);
    cache->head_in = std::move(head_in);
    cache->logits = std::move(logits);
    cache->probs = probs;
  }
  return probs;
}

Tensor ActorNet::backward(const ActorCache& cache, const Tensor& dlogits, bool want_dobs) const {
  nn::DenseGrads hg = nn::dense_backward(cache.head_in, store_->value(prefix_ + "head.w"), dlogits);
  accumulate(store_->grad(prefix_ + "head.w"), hg.dw);
  accumulate(store_->grad(prefix_ + "head.b"), hg.db);
  Tensor dfeats;
  if (comm_) {
    nn::BiGruParamRefs p{&store_->value(prefix_ + "comm.wx_f"),
                         &store_->value(prefix_ + "comm.whrz_f"),
                         &store_->value(prefix_ + "comm.whc_f"),
                         &store_->value(prefix_ + "comm.b_f"),
                         &store_->value(prefix_ + "comm.wx_b"),
                         &store_->value(prefix_ + "comm.whrz_b"),
                         &store_->value(prefix_ + "comm.whc_b"),
                         &store_->value(prefix_ + "comm.b_b")};
    nn::BiGruGrads gg = nn::bigru_backward(p, cache.gru, hg.dx);
    accumulate(store_->grad(prefix_ + "comm.wx_f"), gg.dwx_f);
    accumulate(store_->grad(prefix_ + "comm.whrz_f"), gg.dwhrz_f);
    accumulate(store_->grad(prefix_ + "comm.whc_f"), gg.dwhc_f);
    accumulate(store_->grad(prefix_ + "comm.b_f"), gg.db_f);
    accumulate(store_->grad(prefix_ + "comm.wx_b"), gg.dwx_b);
    accumulate(store_->grad(prefix_ + "comm.whrz_b"), gg.dwhrz_b);
    accumulate(store_->grad(prefix_ + "comm.whc_b"), gg.dwhc_b);
    accumulate(store_->grad(prefix_ + "comm.b_b"), gg.db_b);
    dfeats = Tensor(std::vector<int>{cache.steps * cache.agents, dims_.feature},
                    std::move(gg.dx.data));
  } else {
    dfeats = std::move(hg.dx);
  }
  CnnEncoder cnn(dims_, store_, prefix_ + "cnn.");
  return cnn.backward(cache.cnn, dfeats, want_dobs);
}

// ---------------------------------------------------------------------------
// CriticNet

CriticNet::CriticNet(const ModelDims& dims, bool attention, bool share_encoders, int n_agents,
                     ParamStore* store, std::string prefix)
    : dims_(dims),
      attention_(attention),
      share_(share_encoders),
      n_agents_(n_agents),
      store_(store),
      prefix_(std::move(prefix)) {}

std::string CriticNet::enc_name(const char* base, int agent, const char* leaf) const {
  if (share_) return prefix_ + base + "." + leaf;
  return prefix_ + base + "." + std::to_string(agent) + "." + leaf;
}

void CriticNet::ensure_params(Rng& rng) {
  CnnEncoder(dims_, store_, prefix_ + "cnn.").ensure_params(rng);
  const int enc = dims_.enc_dim, feat = dims_.feature, na = dims_.n_actions;
  const int n_blocks = share_ ? 1 : n_agents_;
  auto dense = [&](const std::string& name, int in, int out) {
    if (store_->has(name + ".w")) return;
    Tensor& w = store_->create(name + ".w", {in, out}).value;
    nn::init_glorot(w, in, out, rng);
    store_->create(name + ".b", {out});
  };
  for (int j = 0; j < n_blocks; ++j) {
    const std::string idx = share_ ? "" : "." + std::to_string(j);
    if (attention_) dense(prefix_ + "sa_enc" + idx, feat + na, enc);
    dense(prefix_ + "s_enc" + idx, feat, enc);
    dense(prefix_ + "qhead" + idx + ".fc1", enc + dims_.attn_dim, dims_.qhead_hidden);
    dense(prefix_ + "qhead" + idx + ".fc2", dims_.qhead_hidden, na);
  }
  if (attention_ && !store_->has(prefix_ + "attn.query.w")) {
    for (const char* nm : {"attn.query.w", "attn.key.w", "attn.value.w"}) {
      Tensor& w = store_->create(prefix_ + nm, {enc, dims_.attn_dim}).value;
      nn::init_glorot(w, enc, dims_.attn_dim, rng);
    }
  }
}

Tensor CriticNet::forward(const Tensor& obs, const std::vector<int>& actions,
                          const std::vector<std::vector<Pos>>& positions, int steps, int agents,
                          int z, const std::vector<CriticRecord>& records,
                          CriticCache* cache) const {
  const int rows = steps * agents;
  if (obs.dim(0) != rows || static_cast<int>(actions.size()) != rows ||
      static_cast<int>(positions.size()) != steps)
    throw Error(ErrorKind::ShapeMismatch, "critic forward: inputs");
  const int enc = dims_.enc_dim, na = dims_.n_actions, feat = dims_.feature;

  CriticCache local;
  CriticCache& c = cache != nullptr ? *cache : local;
  c.steps = steps;
  c.agents = agents;
  c.z = z;
  c.records = records;

  CnnEncoder cnn(dims_, store_, prefix_ + "cnn.");
  c.feats = cnn.forward(obs, cache != nullptr ? &c.cnn : nullptr);

  // state encoder h per agent
  c.h_pre = Tensor({rows, enc});
  for (int i = 0; i < (share_ ? 1 : agents); ++i) {
    const Tensor& w = store_->value(enc_name("s_enc", i, "w"));
    const Tensor& b = store_->value(enc_name("s_enc", i, "b"));
    if (share_) {
      c.h_pre = nn::dense_forward(c.feats, w, b);
    } else {
      Tensor rows_i = gather_agent_rows(c.feats, steps, agents, i);
      Tensor out = nn::dense_forward(rows_i, w, b);
      scatter_agent_rows(c.h_pre, out, steps, agents, i, false);
    }
  }
  c.h = nn::relu_forward(c.h_pre);

  if (attention_) {
    // state-action rows: [cnn feature | one-hot action]
    c.sa = Tensor({rows, feat + na});
    for (int r = 0; r < rows; ++r) {
      float* dst = c.sa.ptr() + static_cast<size_t>(r) * (feat + na);
      std::memcpy(dst, c.feats.ptr() + static_cast<size_t>(r) * feat, sizeof(float) * feat);
      dst[feat + actions[static_cast<size_t>(r)]] = 1.0f;
    }
    c.e_pre = Tensor({rows, enc});
    for (int i = 0; i < (share_ ? 1 : agents); ++i) {
      const Tensor& w = store_->value(enc_name("sa_enc", i, "w"));
      const Tensor& b = store_->value(enc_name("sa_enc", i, "b"));
      if (share_) {
        c.e_pre = nn::dense_forward(c.sa, w, b);
      } else {
        Tensor rows_i = gather_agent_rows(c.sa, steps, agents, i);
        Tensor out = nn::dense_forward(rows_i, w, b);
        scatter_agent_rows(c.e_pre, out, steps, agents, i, false);
      }
    }
    c.e = nn::relu_forward(c.e_pre);
    const Tensor& wq = store_->value(prefix_ + "attn.query.w");
    const Tensor& wk = store_->value(prefix_ + "attn.key.w");
    const Tensor& wv = store_->value(prefix_ + "attn.value.w");
    c.q_all = Tensor({rows, dims_.attn_dim});
    c.k_all = Tensor({rows, dims_.attn_dim});
    c.v_all = Tensor({rows, dims_.attn_dim});
    nn::kernels::gemm(c.e.ptr(), wq.ptr(), c.q_all.ptr(), rows, enc, dims_.attn_dim);
    nn::kernels::gemm(c.e.ptr(), wk.ptr(), c.k_all.ptr(), rows, enc, dims_.attn_dim);
    nn::kernels::gemm(c.e.ptr(), wv.ptr(), c.v_all.ptr(), rows, enc, dims_.attn_dim);
  }

  const int nrec = static_cast<int>(records.size());
  c.neighbors.assign(static_cast<size_t>(nrec), {});
  c.attn.assign(static_cast<size_t>(nrec), {});
  c.fin = Tensor({nrec, enc + dims_.attn_dim});
  for (int r = 0; r < nrec; ++r) {
    const CriticRecord& rec = records[static_cast<size_t>(r)];
    const int row = rec.t * agents + rec.j;
    float* fin_row = c.fin.ptr() + static_cast<size_t>(r) * (enc + dims_.attn_dim);
    std::memcpy(fin_row, c.h.ptr() + static_cast<size_t>(row) * enc, sizeof(float) * enc);
    if (!attention_) continue;
    auto nb = select_neighbors(positions[static_cast<size_t>(rec.t)], rec.j, z);
    if (nb.empty()) continue;
    const int zn = static_cast<int>(nb.size());
    Tensor q(std::vector<int>{dims_.attn_dim});
    std::memcpy(q.ptr(), c.q_all.ptr() + static_cast<size_t>(row) * dims_.attn_dim,
                sizeof(float) * dims_.attn_dim);
    Tensor keys({zn, dims_.attn_dim}), values({zn, dims_.attn_dim});
    for (int p = 0; p < zn; ++p) {
      const int nrow = rec.t * agents + nb[static_cast<size_t>(p)];
      std::memcpy(keys.ptr() + static_cast<size_t>(p) * dims_.attn_dim,
                  c.k_all.ptr() + static_cast<size_t>(nrow) * dims_.attn_dim,
                  sizeof(float) * dims_.attn_dim);
      std::memcpy(values.ptr() + static_cast<size_t>(p) * dims_.attn_dim,
                  c.v_all.ptr() + static_cast<size_t>(nrow) * dims_.attn_dim,
                  sizeof(float) * dims_.attn_dim);
    }
    nn::AttentionOut out = nn::scaled_attention(q, keys, values);
    std::memcpy(fin_row + enc, out.mix.ptr(), sizeof(float) * dims_.attn_dim);
    c.neighbors[static_cast<size_t>(r)] = std::move(nb);
    c.attn[static_cast<size_t>(r)] = std::move(out);
  }

  // per-agent two-layer value head over its records
  c.f1 = Tensor({nrec, dims_.qhead_hidden});
  c.qvec = Tensor({nrec, na});
  std::vector<std::vector<int>> by_agent(static_cast<size_t>(agents));
  for (int r = 0; r < nrec; ++r)
    by_agent[static_cast<size_t>(records[static_cast<size_t>(r)].j)].push_back(r);
  const int fin_dim = enc + dims_.attn_dim;
  for (int j = 0; j < agents; ++j) {
    const auto& idx = by_agent[static_cast<size_t>(j)];
    if (idx.empty()) continue;
    const int m = static_cast<int>(idx.size());
    Tensor fin_j({m, fin_dim});
    for (int p = 0; p < m; ++p)
      std::memcpy(fin_j.ptr() + static_cast<size_t>(p) * fin_dim,
                  c.fin.ptr() + static_cast<size_t>(idx[static_cast<size_t>(p)]) * fin_dim,
                  sizeof(float) * fin_dim);
    const int blk = share_ ? 0 : j;
    Tensor f1 = nn::dense_forward(fin_j, store_->value(enc_name("qhead", blk, "fc1.w")),
                                  store_->value(enc_name("qhead", blk, "fc1.b")));
    Tensor fr = nn::relu_forward(f1);
    Tensor q = nn::dense_forward(fr, store_->value(enc_name("qhead", blk, "fc2.w")),
                                 store_->value(enc_name("qhead", blk, "fc2.b")));
    for (int p = 0; p < m; ++p) {
      const int r = idx[static_cast<size_t>(p)];
      std::memcpy(c.f1.ptr() + static_cast<size_t>(r) * dims_.qhead_hidden,
                  f1.ptr() + static_cast<size_t>(p) * dims_.qhead_hidden,
                  sizeof(float) * dims_.qhead_hidden);
      std::memcpy(c.qvec.ptr() + static_cast<size_t>(r) * na,
                  q.ptr() + static_cast<size_t>(p) * na, sizeof(float) * na);
    }
  }
  c.fr = nn::relu_forward(c.f1);
  return c.qvec;
}

Tensor CriticNet::backward(const CriticCache& c, const Tensor& dqvec, bool want_dobs) const {
  const int steps = c.steps, agents = c.agents;
  const int rows = steps * agents;
  const int enc = dims_.enc_dim, na = dims_.n_actions, feat = dims_.feature;
  const int fin_dim = enc + dims_.attn_dim;
  const int nrec = static_cast<int>(c.records.size());

  // value heads
  Tensor dfin({nrec, fin_dim});
  std::vector<std::vector<int>> by_agent(static_cast<size_t>(agents));
  for (int r = 0; r < nrec; ++r)
    by_agent[static_cast<size_t>(c.records[static_cast<size_t>(r)].j)].push_back(r);
  for (int j = 0; j < agents; ++j) {
    const auto& idx = by_agent[static_cast<size_t>(j)];
    if (idx.empty()) continue;
    const int m = static_cast<int>(idx.size());
    Tensor fin_j({m, fin_dim}), fr_j({m, dims_.qhead_hidden}), f1_j({m, dims_.qhead_hidden}),
        dq_j({m, na});
    for (int p = 0; p < m; ++p) {
      const int r = idx[static_cast<size_t>(p)];
      std::memcpy(fin_j.ptr() + static_cast<size_t>(p) * fin_dim,
                  c.fin.ptr() + static_cast<size_t>(r) * fin_dim, sizeof(float) * fin_dim);
      std::memcpy(fr_j.ptr() + static_cast<size_t>(p) * dims_.qhead_hidden,
                  c.fr.ptr() + static_cast<size_t>(r) * dims_.qhead_hidden,
                  sizeof(float) * dims_.qhead_hidden);
      std::memcpy(f1_j.ptr() + static_cast<size_t>(p) * dims_.qhead_hidden,
                  c.f1.ptr() + static_cast<size_t>(r) * dims_.qhead_hidden,
                  sizeof(float) * dims_.qhead_hidden);
      std::memcpy(dq_j.ptr() + static_cast<size_t>(p) * na,
                  dqvec.ptr() + static_cast<size_t>(r) * na, sizeof(float) * na);
    }
    const int blk = share_ ? 0 : j;
    nn::DenseGrads g2 =
        nn::dense_backward(fr_j, store_->value(enc_name("qhead", blk, "fc2.w")), dq_j);
    accumulate(store_->grad(enc_name("qhead", blk, "fc2.w")), g2.dw);
    accumulate(store_->grad(enc_name("qhead", blk, "fc2.b")), g2.db);
    Tensor df1 = nn::relu_backward(f1_j, g2.dx);
    nn::DenseGrads g1 =
        nn::dense_backward(fin_j, store_->value(enc_name("qhead", blk, "fc1.w")), df1);
    accumulate(store_->grad(enc_name("qhead", blk, "fc1.w")), g1.dw);
    accumulate(store_->grad(enc_name("qhead", blk, "fc1.b")), g1.db);
    for (int p = 0; p < m; ++p)
      std::memcpy(dfin.ptr() + static_cast<size_t>(idx[static_cast<size_t>(p)]) * fin_dim,
                  g1.dx.ptr() + static_cast<size_t>(p) * fin_dim, sizeof(float) * fin_dim);
  }

  Tensor dh({rows, enc});
  Tensor dfeats({rows, feat});
  if (attention_) {
    Tensor dq_all({rows, dims_.attn_dim}), dk_all({rows, dims_.attn_dim}),
        dv_all({rows, dims_.attn_dim});
    for (int r = 0; r < nrec; ++r) {
      const CriticRecord& rec = c.records[static_cast<size_t>(r)];
      const int row = rec.t * agents + rec.j;
      const float* dfin_row = dfin.ptr() + static_cast<size_t>(r) * fin_dim;
      float* dh_row = dh.ptr() + static_cast<size_t>(row) * enc;
      for (int k = 0; k < enc; ++k) dh_row[k] += dfin_row[k];
      const auto& nb = c.neighbors[static_cast<size_t>(r)];
      if (nb.empty()) continue;
      const int zn = static_cast<int>(nb.size());
      Tensor dmix(std::vector<int>{dims_.attn_dim});
      std::memcpy(dmix.ptr(), dfin_row + enc, sizeof(float) * dims_.attn_dim);
      Tensor q(std::vector<int>{dims_.attn_dim});
      std::memcpy(q.ptr(), c.q_all.ptr() + static_cast<size_t>(row) * dims_.attn_dim,
                  sizeof(float) * dims_.attn_dim);
      Tensor keys({zn, dims_.attn_dim}), values({zn, dims_.attn_dim});
      for (int p = 0; p < zn; ++p) {
        const int nrow = rec.t * agents + nb[static_cast<size_t>(p)];
        std::memcpy(keys.ptr() + static_cast<size_t>(p) * dims_.attn_dim,
                    c.k_all.ptr() + static_cast<size_t>(nrow) * dims_.attn_dim,
                    sizeof(float) * dims_.attn_dim);
        std::memcpy(values.ptr() + static_cast<size_t>(p) * dims_.attn_dim,
                    c.v_all.ptr() + static_cast<size_t>(nrow) * dims_.attn_dim,
                    sizeof(float) * dims_.attn_dim);
      }
      nn::AttentionGrads ag = nn::scaled_attention_backward(
          q, keys, values, c.attn[static_cast<size_t>(r)], dmix);
      float* dq_row = dq_all.ptr() + static_cast<size_t>(row) * dims_.attn_dim;
      for (int k = 0; k < dims_.attn_dim; ++k) dq_row[k] += ag.dq[k];
      for (int p = 0; p < zn; ++p) {
        const int nrow = rec.t * agents + nb[static_cast<size_t>(p)];
        float* dk_row = dk_all.ptr() + static_cast<size_t>(nrow) * dims_.attn_dim;
        float* dv_row = dv_all.ptr() + static_cast<size_t>(nrow) * dims_.attn_dim;
        for (int k = 0; k < dims_.attn_dim; ++k) {
          dk_row[k] += ag.dkeys.at(p, k);
          dv_row[k] += ag.dvalues.at(p, k);
        }
      }
    }
    const Tensor& wq = store_->value(prefix_ + "attn.query.w");
    const Tensor& wk = store_->value(prefix_ + "attn.key.w");
    const Tensor& wv = store_->value(prefix_ + "attn.value.w");
    Tensor de({rows, enc});
    nn::kernels::gemm_bt(dq_all.ptr(), wq.ptr(), de.ptr(), rows, dims_.attn_dim, enc, true);
    nn::kernels::gemm_bt(dk_all.ptr(), wk.ptr(), de.ptr(), rows, dims_.attn_dim, enc, true);
    nn::kernels::gemm_bt(dv_all.ptr(), wv.ptr(), de.ptr(), rows, dims_.attn_dim, enc, true);
    nn::kernels::gemm_at(c.e.ptr(), dq_all.ptr(), store_->grad(prefix_ + "attn.query.w").ptr(),
                         rows, enc, dims_.attn_dim, true);
    nn::kernels::gemm_at(c.e.ptr(), dk_all.ptr(), store_->grad(prefix_ + "attn.key.w").ptr(),
                         rows, enc, dims_.attn_dim, true);
    nn::kernels::gemm_at(c.e.ptr(), dv_all.ptr(), store_->grad(prefix_ + "attn.value.w").ptr(),
                         rows, enc, dims_.attn_dim, true);
    Tensor de_pre = nn::relu_backward(c.e_pre, de);
    for (int i = 0; i < (share_ ? 1 : agents); ++i) {
      const Tensor& w = store_->value(enc_name("sa_enc", i, "w"));
      nn::DenseGrads g = share_ ? nn::dense_backward(c.sa, w, de_pre)
                                : nn::dense_backward(gather_agent_rows(c.sa, steps, agents, i), w,
                                                     gather_agent_rows(de_pre, steps, agents, i));
      accumulate(store_->grad(enc_name("sa_enc", i, "w")), g.dw);
      accumulate(store_->grad(enc_name("sa_enc", i, "b")), g.db);
      // strip the one-hot action block from the input gradient
      if (share_) {
        for (int r = 0; r < rows; ++r) {
          float* dst = dfeats.ptr() + static_cast<size_t>(r) * feat;
          const float* src = g.dx.ptr() + static_cast<size_t>(r) * (feat + na);
          for (int k = 0; k < feat; ++k) dst[k] += src[k];
        }
      } else {
        for (int t = 0; t < steps; ++t) {
          float* dst = dfeats.ptr() + (static_cast<size_t>(t) * agents + i) * feat;
          const float* src = g.dx.ptr() + static_cast<size_t>(t) * (feat + na);
          for (int k = 0; k < feat; ++k) dst[k] += src[k];
        }
      }
    }
  } else {
    for (int r = 0; r < nrec; ++r) {
      const CriticRecord& rec = c.records[static_cast<size_t>(r)];
      const int row = rec.t * agents + rec.j;
      const float* dfin_row = dfin.ptr() + static_cast<size_t>(r) * fin_dim;
      float* dh_row = dh.ptr() + static_cast<size_t>(row) * enc;
      for (int k = 0; k < enc; ++k) dh_row[k] += dfin_row[k];
    }
  }

  Tensor dh_pre = nn::relu_backward(c.h_pre, dh);
  for (int i = 0; i < (share_ ? 1 : agents); ++i) {
    const Tensor& w = store_->value(enc_name("s_enc", i, "w"));
    nn::DenseGrads g = share_ ? nn::dense_backward(c.feats, w, dh_pre)
                              : nn::dense_backward(gather_agent_rows(c.feats, steps, agents, i), w,
                                                   gather_agent_rows(dh_pre, steps, agents, i));
    accumulate(store_->grad(enc_name("s_enc", i, "w")), g.dw);
    accumulate(store_->grad(enc_name("s_enc", i, "b")), g.db);
    if (share_)
      accumulate(dfeats, g.dx);
    else
      scatter_agent_rows(dfeats, g.dx, steps, agents, i, true);
  }

  CnnEncoder cnn(dims_, store_, prefix_ + "cnn.");
  return cnn.backward(c.cnn, dfeats, want_dobs);
}

CriticNet::SingleQ CriticNet::q_single(const Tensor& all_obs, const std::vector<int>& actions,
                                       const std::vector<Pos>& positions, int j, int z) const {
  const int n = all_obs.dim(0);
  CriticCache cache;
  std::vector<CriticRecord> records{{0, j}};
  Tensor qvec = forward(all_obs, actions, {positions}, 1, n, z, records, &cache);
  SingleQ out;
  out.q = Tensor(std::vector<int>{dims_.n_actions});
  std::memcpy(out.q.ptr(), qvec.ptr(), sizeof(float) * dims_.n_actions);
  out.mix = Tensor(std::vector<int>{dims_.attn_dim});
  std::memcpy(out.mix.ptr(), cache.fin.ptr() + dims_.enc_dim, sizeof(float) * dims_.attn_dim);
  out.weights = cache.attn[0].weights;
  out.neighbors = cache.neighbors[0];
  return out;
}

// ---------------------------------------------------------------------------
// ModelSet

std::unique_ptr<ModelSet> ModelSet::create(const ModelDims& dims, bool actor_comm,
                                           bool critic_attention, bool share_encoders,
                                           int n_agents, uint64_t init_seed) {
  auto set = std::make_unique<ModelSet>();
  set->dims = dims;
  set->actor = std::make_unique<ActorNet>(dims, actor_comm, &set->store, "actor.");
  set->critic = std::make_unique<CriticNet>(dims, critic_attention, share_encoders, n_agents,
                                            &set->store, "critic.");
  set->target = std::make_unique<CriticNet>(dims, critic_attention, share_encoders, n_agents,
                                            &set->store, "target.");
  Rng actor_rng(derive_seed(init_seed, 101));
  Rng critic_rng(derive_seed(init_seed, 202));
  Rng target_rng(derive_seed(init_seed, 303));
  set->actor->ensure_params(actor_rng);
  set->critic->ensure_params(critic_rng);
  set->target->ensure_params(target_rng);
  set->store.copy_values_from(set->store, "target.", "critic.");
  return set;
}

std::unique_ptr<ModelSet> ModelSet::from_store(const ModelDims& dims, bool actor_comm,
                                               bool critic_attention, bool share_encoders,
                                               int n_agents, ParamStore store) {
  auto set = std::make_unique<ModelSet>();
  set->dims = dims;
  set->store = std::move(store);
  set->actor = std::make_unique<ActorNet>(dims, actor_comm, &set->store, "actor.");
  set->critic = std::make_unique<CriticNet>(dims, critic_attention, share_encoders, n_agents,
                                            &set->store, "critic.");
  set->target = std::make_unique<CriticNet>(dims, critic_attention, share_encoders, n_agents,
                                            &set->store, "target.");
  return set;
}

// ---------------------------------------------------------------------------
// End-to-end gradient checks

void run_network_gradchecks(int trials, float eps, double tol, uint64_t seed,
                            nn::GradCheckReport* report, std::ostream* log) {
  Rng rng(seed);

  auto run_block = [&](const std::string& name,
                       const std::function<nn::FdProblem(Rng&)>& make) {
    nn::BlockReport br;
    br.name = name;
    for (int t = 0; t < trials; ++t) {
      Rng trial_rng = rng.fork(static_cast<uint64_t>(t) * 5077 + 3);
      nn::FdProblem p = make(trial_rng);
      br.max_rel_err = std::max(br.max_rel_err, nn::fd_max_rel_err(p, eps));
    }
    br.pass = br.max_rel_err < tol;
    if (log != nullptr)
      *log << (br.pass ? "PASS" : "FAIL") << " gradcheck " << name
           << " max_rel_err=" << br.max_rel_err << "\n";
    report->blocks.push_back(br);
  };

  run_block("actor_end_to_end", [](Rng& r) {
    const ModelDims dims = tiny_dims();
    const int n = 2, steps = 2;
    auto set = std::shared_ptr<ModelSet>(
        ModelSet::create(dims, /*comm=*/true, true, false, n, r.next_u64()));
    auto obs = std::make_shared<Tensor>(std::vector<int>{steps * n, dims.obs_len()});
    auto w = std::make_shared<Tensor>(std::vector<int>{steps * n, dims.n_actions});
    for (auto& v : obs->data) v = r.next_float();
    for (auto& v : w->data) v = (r.next_float() * 2.0f - 1.0f);
    nn::FdProblem p;
    p.name = "actor_end_to_end";
    auto names = set->store.names("actor.");
    for (const auto& nm : names) p.wrt.push_back(&set->store.value(nm));
    p.wrt.push_back(obs.get());
    p.loss = [=] {
      Tensor probs = set->actor->forward(*obs, steps, n, nullptr);
      double s = 0.0;
      for (long i = 0; i < probs.numel(); ++i) s += static_cast<double>(probs[i]) * (*w)[i];
      return s;
    };
    p.analytic = [=] {
      set->store.zero_grads("actor.");
      ActorCache cache;
      Tensor probs = set->actor->forward(*obs, steps, n, &cache);
      Tensor dlogits = nn::softmax_backward(probs, *w);
      Tensor dobs = set->actor->backward(cache, dlogits, /*want_dobs=*/true);
      std::vector<Tensor> grads;
      for (const auto& nm : set->store.names("actor.")) grads.push_back(set->store.grad(nm));
      grads.push_back(dobs);
      return grads;
    };
    return p;
  });

  run_block("critic_end_to_end", [](Rng& r) {
    const ModelDims dims = tiny_dims();
    const int n = 3, steps = 2, z = 2;
    auto set = std::shared_ptr<ModelSet>(
        ModelSet::create(dims, true, /*attention=*/true, false, n, r.next_u64()));
    auto obs = std::make_shared<Tensor>(std::vector<int>{steps * n, dims.obs_len()});
    for (auto& v : obs->data) v = r.next_float();
    auto actions = std::make_shared<std::vector<int>>();
    for (int i = 0; i < steps * n; ++i)
      actions->push_back(static_cast<int>(r.next_below(static_cast<uint64_t>(dims.n_actions))));
    auto positions = std::make_shared<std::vector<std::vector<Pos>>>();
    for (int t = 0; t < steps; ++t) {
      std::vector<Pos> row;
      for (int i = 0; i < n; ++i)
        row.push_back({static_cast<int>(r.next_below(8)), static_cast<int>(r.next_below(8))});
      positions->push_back(row);
    }
    auto records = std::make_shared<std::vector<CriticRecord>>();
    for (int t = 0; t < steps; ++t)
      for (int j = 0; j < n; ++j) records->push_back({t, j});
    auto w = std::make_shared<Tensor>(
        std::vector<int>{static_cast<int>(records->size()), dims.n_actions});
    for (auto& v : w->data) v = (r.next_float() * 2.0f - 1.0f);
    nn::FdProblem p;
    p.name = "critic_end_to_end";
    for (const auto& nm : set->store.names("critic.")) p.wrt.push_back(&set->store.value(nm));
    p.wrt.push_back(obs.get());
    p.loss = [=] {
      Tensor qvec =
          set->critic->forward(*obs, *actions, *positions, steps, n, z, *records, nullptr);
      double s = 0.0;
      for (long i = 0; i < qvec.numel(); ++i) s += static_cast<double>(qvec[i]) * (*w)[i];
      return s;
    };
    p.analytic = [=] {
      set->store.zero_grads("critic.");
      CriticCache cache;
      set->critic->forward(*obs, *actions, *positions, steps, n, z, *records, &cache);
      Tensor dobs = set->critic->backward(cache, *w, /*want_dobs=*/true);
      std::vector<Tensor> grads;
      for (const auto& nm : set->store.names("critic.")) grads.push_back(set->store.grad(nm));
      grads.push_back(dobs);
      return grads;
    };
    return p;
  });
}

}  // namespace abm::models
