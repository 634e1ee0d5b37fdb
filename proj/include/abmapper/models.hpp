#pragma once

#include <memory>
#include <string>
#include <vector>

#include "abmapper/grad_check.hpp"
#include "abmapper/grid_world.hpp"
#include "abmapper/layers.hpp"
#include "abmapper/param_store.hpp"

namespace abm::models {

using env::Pos;
using nn::ParamStore;
using nn::Tensor;

struct ModelDims {
  int obs_channels = env::Observation::kChannels;
  int fov = env::Observation::kFov;
  int cnn_channels = 8;
  int feature = 128;     // CNN output feature width
  int gru_hidden = 64;   // per direction; concatenated output is 2x
  int enc_dim = 64;      // state-action encoding e
  int attn_dim = 32;     // query/key/value width d_k
  int qhead_hidden = 128;
  int n_actions = 5;

  int obs_len() const { return obs_channels * fov * fov; }
  int flat_len() const { return cnn_channels * fov * fov; }
};

// Small dimensions with the full graph structure; used by the end-to-end
// gradient checks to keep finite differencing tractable.
ModelDims tiny_dims();

// The z nearest agents to agent j by Manhattan distance, self excluded,
// distance ties broken by lower id. Returned in ascending id order (the
// canonical iteration order for attention). z is clamped to n-1.
std::vector<int> select_neighbors(const std::vector<Pos>& positions, int j, int z);

// target <- tau*source + (1-tau)*target elementwise, matching names by
// suffix under the two prefixes.
void soft_update(ParamStore& store, const std::string& target_prefix,
                 const std::string& source_prefix, float tau);

// ---------------------------------------------------------------------------

struct CnnCache {
  Tensor x;                                // [B,C,F,F]
  Tensor c1, a1, c2, a2, c3, a3, c4, a4;   // conv / relu pairs
  Tensor d1, r5;                           // first dense + relu
  Tensor feat;                             // [B, feature]
};

/// The 6-layer observation encoder: 4x (conv3x3 + relu), then 2 dense layers.
class CnnEncoder {
 public:
  CnnEncoder(const ModelDims& dims, ParamStore* store, std::string prefix);
  void ensure_params(Rng& rng);
  // obs: [B, C*F*F] rows; returns [B, feature].
  Tensor forward(const Tensor& obs, CnnCache* cache) const;
  // Accumulates parameter grads into the store; returns d(obs) rows when
  // want_dx (shape [B, C*F*F]), else an empty tensor.
  Tensor backward(const CnnCache& cache, const Tensor& dfeat, bool want_dx) const;

 private:
  ModelDims dims_;
  ParamStore* store_;
  std::string prefix_;
};

struct ActorCache {
  int steps = 0, agents = 0;
  CnnCache cnn;
  Tensor feats;            // [T*n, feature]
  nn::BiGruCache gru;      // batch = T, seq = n
  Tensor head_in;          // [T*n, head input width]
  Tensor logits, probs;    // [T*n, n_actions]
};

/// Policy network: shared CNN per agent, optional bidirectional-recurrent
/// communication over the agent sequence, then a per-agent softmax head.
class ActorNet {
 public:
  ActorNet(const ModelDims& dims, bool comm, ParamStore* store, std::string prefix);
  void ensure_params(Rng& rng);

  // obs rows laid out step-major: row t*n + i is agent i at step t.
  // Returns action probabilities [T*n, n_actions].
  Tensor forward(const Tensor& obs, int steps, int agents, ActorCache* cache) const;
  // dlogits: [T*n, n_actions]. Accumulates grads; returns d(obs) if wanted.
  Tensor backward(const ActorCache& cache, const Tensor& dlogits, bool want_dobs) const;

  bool comm() const { return comm_; }
  const ModelDims& dims() const { return dims_; }

 private:
  ModelDims dims_;
  bool comm_;
  ParamStore* store_;
  std::string prefix_;
};

struct CriticRecord {
  int t = 0, j = 0;  // step index within the batch, agent id
};

struct CriticCache {
  int steps = 0, agents = 0, z = 0;
  CnnCache cnn;
  Tensor feats;        // [S*n, feature]
  Tensor sa;           // [S*n, feature+A] state-action rows (attention only)
  Tensor e_pre, e;     // [S*n, enc] encoder pre/post relu (attention only)
  Tensor h_pre, h;     // [S*n, enc]
  Tensor q_all, k_all, v_all;  // [S*n, attn] projections (attention only)
  std::vector<std::vector<int>> neighbors;  // per record
  std::vector<nn::AttentionOut> attn;       // per record
  Tensor fin;          // [R, enc+attn]
  Tensor f1, fr;       // [R, qhead_hidden]
  Tensor qvec;         // [R, n_actions]
  std::vector<CriticRecord> records;
};

/// Centralized critic: per-agent state(-action) encoders over a shared CNN,
/// scaled dot-product attention over the z nearest neighbors, per-agent
/// two-layer value head emitting one value per action.
class CriticNet {
 public:
  CriticNet(const ModelDims& dims, bool attention, bool share_encoders, int n_agents,
            ParamStore* store, std::string prefix);
  void ensure_params(Rng& rng);

  // Batched forward over S steps of n agents. obs rows step-major as in
  // ActorNet; actions: one per row (Stay for done agents); positions: [S][n].
  // Only the listed records get attention + head evaluation.
  Tensor forward(const Tensor& obs, const std::vector<int>& actions,
                 const std::vector<std::vector<Pos>>& positions, int steps, int agents, int z,
                 const std::vector<CriticRecord>& records, CriticCache* cache) const;
  // dqvec: [R, n_actions].
  Tensor backward(const CriticCache& cache, const Tensor& dqvec, bool want_dobs) const;

  struct SingleQ {
    Tensor q;          // [n_actions]
    Tensor mix;        // [attn_dim]
    Tensor weights;    // [|Z|]
    std::vector<int> neighbors;
  };
  // The per-spec single-agent query: Q_j over all actions plus the attention
  // internals, for agent j given the joint (obs, actions, positions).
  SingleQ q_single(const Tensor& all_obs, const std::vector<int>& actions,
                   const std::vector<Pos>& positions, int j, int z) const;

  bool attention() const { return attention_; }
  bool shared_encoders() const { return share_; }
  const ModelDims& dims() const { return dims_; }

 private:
  std::string enc_name(const char* base, int agent, const char* leaf) const;
  ModelDims dims_;
  bool attention_;
  bool share_;
  int n_agents_;
  ParamStore* store_;
  std::string prefix_;
};

// ---------------------------------------------------------------------------

/// One complete set of learnable networks: actor, critic, target critic,
/// backed by a single store ("actor.", "critic.", "target." prefixes).
struct ModelSet {
  ModelDims dims;
  ParamStore store;
  std::unique_ptr<ActorNet> actor;
  std::unique_ptr<CriticNet> critic;
  std::unique_ptr<CriticNet> target;

  static std::unique_ptr<ModelSet> create(const ModelDims& dims, bool actor_comm,
                                          bool critic_attention, bool share_encoders,
                                          int n_agents, uint64_t init_seed);
  // Rebinds networks onto an existing store (e.g. loaded from checkpoint).
  static std::unique_ptr<ModelSet> from_store(const ModelDims& dims, bool actor_comm,
                                              bool critic_attention, bool share_encoders,
                                              int n_agents, ParamStore store);
};

// End-to-end gradient check problems over the full actor and critic graphs
// (tiny dims). Appended to the layer suite by cmd_gradcheck.
void run_network_gradchecks(int trials, float eps, double tol, uint64_t seed,
                            nn::GradCheckReport* report, std::ostream* log);

}  // namespace abm::models
