#include "abmapper/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace abm::train {

Mode parse_mode(const std::string& name) {
  if (name == "ABMapper") return Mode::ABMapper;
  if (name == "AttentionOnly") return Mode::AttentionOnly;
  if (name == "BicNetOnly") return Mode::BicNetOnly;
  if (name == "MapperBaseline") return Mode::MapperBaseline;
  throw Error(ErrorKind::TypeError, "unknown mode: " + name);
}

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::ABMapper: return "ABMapper";
    case Mode::AttentionOnly: return "AttentionOnly";
    case Mode::BicNetOnly: return "BicNetOnly";
    case Mode::MapperBaseline: return "MapperBaseline";
  }
  return "?";
}

double actor_loss(std::span<const float> log_probs, std::span<const float> y) {
  if (log_probs.size() != y.size())
    throw Error(ErrorKind::LengthMismatch, "actor_loss: log_probs vs y");
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i)
    s += static_cast<double>(log_probs[i]) * y[i];
  return -s;
}

double critic_loss(std::span<const float> q, std::span<const float> y) {
  if (q.size() != y.size()) throw Error(ErrorKind::LengthMismatch, "critic_loss: q vs y");
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(q[i]) - y[i];
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------

Learner Learner::create(Mode mode, const models::ModelDims& dims, int n_agents, int z,
                        bool share_encoders, uint64_t init_seed) {
  Learner learner;
  learner.mode = mode;
  learner.dims = dims;
  learner.n_agents = n_agents;
  learner.z = z;
  learner.share_encoders = share_encoders;
  const bool comm = mode == Mode::ABMapper || mode == Mode::BicNetOnly;
  const bool attention = mode == Mode::ABMapper || mode == Mode::AttentionOnly;
  if (mode == Mode::MapperBaseline) {
    for (int i = 0; i < n_agents; ++i)
      learner.sets.push_back(ModelSet::create(dims, false, false, false, 1,
                                              derive_seed(init_seed, 0x5e7 + i)));
  } else {
    learner.sets.push_back(
        ModelSet::create(dims, comm, attention, share_encoders, n_agents, init_seed));
  }
  return learner;
}

namespace {

// Action probabilities for one joint step. [n, n_actions].
Tensor step_probs(const Learner& learner, const Tensor& obs) {
  const int n = obs.dim(0);
  if (!learner.per_agent()) return learner.sets[0]->actor->forward(obs, 1, n, nullptr);
  Tensor probs({n, learner.dims.n_actions});
  const int len = obs.dim(1);
  for (int i = 0; i < n; ++i) {
    Tensor row({1, len});
    std::memcpy(row.ptr(), obs.ptr() + static_cast<size_t>(i) * len, sizeof(float) * len);
    Tensor p = learner.sets[static_cast<size_t>(i)]->actor->forward(row, 1, 1, nullptr);
    std::memcpy(probs.ptr() + static_cast<size_t>(i) * learner.dims.n_actions, p.ptr(),
                sizeof(float) * learner.dims.n_actions);
  }
  return probs;
}

int sample_row(const Tensor& probs, int row, Rng& rng) {
  const int na = probs.dim(1);
  const float u = rng.next_float();
  float acc = 0.0f;
  for (int a = 0; a < na; ++a) {
    acc += probs.at(row, a);
    if (u < acc) return a;
  }
  return na - 1;
}

int argmax_row(const Tensor& probs, int row) {
  const int na = probs.dim(1);
  int best = 0;
  for (int a = 1; a < na; ++a)
    if (probs.at(row, a) > probs.at(row, best)) best = a;
  return best;
}

Tensor joint_observation(const GridWorld& world) {
  const int n = world.num_agents();
  Tensor obs({n, env::Observation::kChannels * env::Observation::kFov * env::Observation::kFov});
  for (int i = 0; i < n; ++i) {
    env::Observation o = world.observe(i);
    std::memcpy(obs.ptr() + static_cast<size_t>(i) * o.data.size(), o.data.data(),
                sizeof(float) * o.data.size());
  }
  return obs;
}

}  // namespace

Trajectory run_episode(GridWorld& world, const Learner& learner, bool greedy, Rng& rng,
                       bool record) {
  const int n = world.num_agents();
  Trajectory traj;
  traj.agents = n;
  traj.agent_return.assign(static_cast<size_t>(n), 0.0f);
  while (!world.all_done() && world.steps_taken() < world.max_steps()) {
    StepData sd;
    sd.obs = joint_observation(world);
    sd.positions = world.agent_positions();
    sd.live = world.done_flags();
    for (auto& f : sd.live) f = f ? 0 : 1;
    Tensor probs = step_probs(learner, sd.obs);
    std::vector<env::Action> actions(static_cast<size_t>(n), env::Action::Stay);
    sd.actions.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      if (!sd.live[static_cast<size_t>(i)]) continue;
      const int a = greedy ? argmax_row(probs, i) : sample_row(probs, i, rng);
      actions[static_cast<size_t>(i)] = static_cast<env::Action>(a);
      sd.actions[static_cast<size_t>(i)] = a;
    }
    env::StepResult res = world.step(actions);
    sd.rewards = res.rewards;
    sd.done_after = res.dones;
    for (int i = 0; i < n; ++i)
      traj.agent_return[static_cast<size_t>(i)] += res.rewards[static_cast<size_t>(i)];
    if (record) traj.steps.push_back(std::move(sd));
  }
  traj.episode_len = world.steps_taken();
  traj.success = env::success_rate(world);
  traj.world_hash = world.trajectory_hash();
  traj.final_done = world.done_flags();
  if (record) {
    traj.final_obs = joint_observation(world);
    traj.final_positions = world.agent_positions();
    traj.bootstrap_actions.assign(static_cast<size_t>(n), 0);
    if (!world.all_done()) {
      Tensor probs = step_probs(learner, traj.final_obs);
      for (int i = 0; i < n; ++i)
        if (!traj.final_done[static_cast<size_t>(i)])
          traj.bootstrap_actions[static_cast<size_t>(i)] =
              greedy ? argmax_row(probs, i) : sample_row(probs, i, rng);
    }
  }
  return traj;
}

UpdateBatch build_update_batch(const Trajectory& traj) {
  const int T = static_cast<int>(traj.steps.size());
  const int n = traj.agents;
  if (T == 0) throw Error(ErrorKind::LengthMismatch, "empty trajectory");
  const int len = traj.steps[0].obs.dim(1);
  UpdateBatch b;
  b.steps = T;
  b.agents = n;
  b.obs = Tensor({T * n, len});
  b.next_obs = Tensor({T * n, len});
  b.actions.assign(static_cast<size_t>(T) * n, 0);
  b.next_actions.assign(static_cast<size_t>(T) * n, 0);
  for (int t = 0; t < T; ++t) {
    const StepData& sd = traj.steps[static_cast<size_t>(t)];
    std::memcpy(b.obs.ptr() + static_cast<size_t>(t) * n * len, sd.obs.ptr(),
                sizeof(float) * n * len);
    const bool last = t == T - 1;
    const Tensor& nxt = last ? traj.final_obs : traj.steps[static_cast<size_t>(t) + 1].obs;
    std::memcpy(b.next_obs.ptr() + static_cast<size_t>(t) * n * len, nxt.ptr(),
                sizeof(float) * n * len);
    b.positions.push_back(sd.positions);
    b.next_positions.push_back(last ? traj.final_positions
                                    : traj.steps[static_cast<size_t>(t) + 1].positions);
    for (int i = 0; i < n; ++i) {
      b.actions[static_cast<size_t>(t) * n + i] = sd.actions[static_cast<size_t>(i)];
      b.next_actions[static_cast<size_t>(t) * n + i] =
          last ? traj.bootstrap_actions[static_cast<size_t>(i)]
               : traj.steps[static_cast<size_t>(t) + 1].actions[static_cast<size_t>(i)];
      if (sd.live[static_cast<size_t>(i)]) {
        b.records.push_back({t, i});
        b.rewards.push_back(sd.rewards[static_cast<size_t>(i)]);
        b.terminal.push_back(sd.done_after[static_cast<size_t>(i)]);
      }
    }
  }
  return b;
}

namespace {

// q values of the executed next actions, from a target critic, for the given
// records; terminal records get 0.
std::vector<float> next_q_values(const models::CriticNet& target, const UpdateBatch& b, int z) {
  std::vector<models::CriticRecord> nonterm;
  std::vector<size_t> where;
  for (size_t r = 0; r < b.records.size(); ++r)
    if (!b.terminal[r]) {
      nonterm.push_back(b.records[r]);
      where.push_back(r);
    }
  std::vector<float> out(b.records.size(), 0.0f);
  if (nonterm.empty()) return out;
  Tensor qvec = target.forward(b.next_obs, b.next_actions, b.next_positions, b.steps, b.agents,
                               z, nonterm, nullptr);
  for (size_t k = 0; k < nonterm.size(); ++k) {
    const auto& rec = nonterm[k];
    const int row = rec.t * b.agents + rec.j;
    out[where[k]] = qvec.at(static_cast<int>(k), b.next_actions[static_cast<size_t>(row)]);
  }
  return out;
}

}  // namespace

std::vector<float> compute_td_targets(const Learner& learner, const UpdateBatch& batch,
                                      float gamma) {
  std::vector<float> q_next;
  if (!learner.per_agent()) {
    q_next = next_q_values(*learner.sets[0]->target, batch, learner.z);
  } else {
    // per-agent batches are single-agent; build them on the fly
    q_next.assign(batch.records.size(), 0.0f);
    for (int j = 0; j < batch.agents; ++j) {
      UpdateBatch sub;  // agent j's rows only
      const int T = batch.steps, len = batch.obs.dim(1);
      sub.steps = T;
      sub.agents = 1;
      sub.obs = Tensor({T, len});
      sub.next_obs = Tensor({T, len});
      for (int t = 0; t < T; ++t) {
        std::memcpy(sub.obs.ptr() + static_cast<size_t>(t) * len,
                    batch.obs.ptr() + (static_cast<size_t>(t) * batch.agents + j) * len,
                    sizeof(float) * len);
        std::memcpy(sub.next_obs.ptr() + static_cast<size_t>(t) * len,
                    batch.next_obs.ptr() + (static_cast<size_t>(t) * batch.agents + j) * len,
                    sizeof(float) * len);
        sub.actions.push_back(batch.actions[static_cast<size_t>(t) * batch.agents + j]);
        sub.next_actions.push_back(batch.next_actions[static_cast<size_t>(t) * batch.agents + j]);
        sub.positions.push_back({batch.positions[static_cast<size_t>(t)][static_cast<size_t>(j)]});
        sub.next_positions.push_back(
            {batch.next_positions[static_cast<size_t>(t)][static_cast<size_t>(j)]});
      }
      std::vector<size_t> where;
      for (size_t r = 0; r < batch.records.size(); ++r)
        if (batch.records[r].j == j) {
          sub.records.push_back({batch.records[r].t, 0});
          sub.rewards.push_back(batch.rewards[r]);
          sub.terminal.push_back(batch.terminal[r]);
          where.push_back(r);
        }
      auto sub_q = next_q_values(*learner.sets[static_cast<size_t>(j)]->target, sub, 0);
      for (size_t k = 0; k < where.size(); ++k) q_next[where[k]] = sub_q[k];
    }
  }
  std::vector<float> y(batch.records.size());
  for (size_t r = 0; r < y.size(); ++r)
    y[r] = td_target(batch.rewards[r], gamma, q_next[r], batch.terminal[r] != 0);
  return y;
}

namespace {

struct SetUpdateResult {
  double actor_loss = 0.0, critic_loss = 0.0;
  bool actor_clipped = false, critic_clipped = false;
};

constexpr double kGradClipNorm = 10.0;

// Critic step (Eq. 3) then actor step (Eq. 1) for one model set over one
// batch with precomputed targets y.
SetUpdateResult update_one_set(ModelSet& set, const UpdateBatch& batch,
                               std::span<const float> y, int z, float lr_actor,
                               float lr_critic, float tau) {
  SetUpdateResult out;
  const int na = set.dims.n_actions;
  const size_t nrec = batch.records.size();

  // --- critic ---
  set.store.zero_grads("critic.");
  models::CriticCache cc;
  Tensor qvec = set.critic->forward(batch.obs, batch.actions, batch.positions, batch.steps,
                                    batch.agents, z, batch.records, &cc);
  std::vector<float> q_sel(nrec);
  Tensor dq({static_cast<int>(nrec), na});
  for (size_t r = 0; r < nrec; ++r) {
    const auto& rec = batch.records[r];
    const int a = batch.actions[static_cast<size_t>(rec.t) * batch.agents + rec.j];
    q_sel[r] = qvec.at(static_cast<int>(r), a);
    dq.at(static_cast<int>(r), a) = 2.0f * (q_sel[r] - y[r]);
  }
  out.critic_loss = critic_loss(q_sel, y);
  set.critic->backward(cc, dq, false);
  out.critic_clipped = set.store.clip_grad_norm("critic.", kGradClipNorm);
  set.store.adam_step("critic.", lr_critic);

  // --- actor ---
  set.store.zero_grads("actor.");
  models::ActorCache ac;
  Tensor probs = set.actor->forward(batch.obs, batch.steps, batch.agents, &ac);
  std::vector<float> log_probs(nrec);
  Tensor dlogits({batch.steps * batch.agents, na});
  for (size_t r = 0; r < nrec; ++r) {
    const auto& rec = batch.records[r];
    const int row = rec.t * batch.agents + rec.j;
    const int a = batch.actions[static_cast<size_t>(row)];
    log_probs[r] = std::log(std::max(probs.at(row, a), 1e-30f));
    for (int k = 0; k < na; ++k) {
      const float indicator = k == a ? 1.0f : 0.0f;
      dlogits.at(row, k) += -y[r] * (indicator - probs.at(row, k));
    }
  }
  out.actor_loss = actor_loss(log_probs, y);
  set.actor->backward(ac, dlogits, false);
  out.actor_clipped = set.store.clip_grad_norm("actor.", kGradClipNorm);
  set.store.adam_step("actor.", lr_actor);

  models::soft_update(set.store, "target.", "critic.", tau);
  return out;
}

UpdateBatch single_agent_view(const UpdateBatch& batch, int j) {
  UpdateBatch sub;
  const int T = batch.steps, len = batch.obs.dim(1);
  sub.steps = T;
  sub.agents = 1;
  sub.obs = Tensor({T, len});
  sub.next_obs = Tensor({T, len});
  for (int t = 0; t < T; ++t) {
    std::memcpy(sub.obs.ptr() + static_cast<size_t>(t) * len,
                batch.obs.ptr() + (static_cast<size_t>(t) * batch.agents + j) * len,
                sizeof(float) * len);
    std::memcpy(sub.next_obs.ptr() + static_cast<size_t>(t) * len,
                batch.next_obs.ptr() + (static_cast<size_t>(t) * batch.agents + j) * len,
                sizeof(float) * len);
    sub.actions.push_back(batch.actions[static_cast<size_t>(t) * batch.agents + j]);
    sub.next_actions.push_back(batch.next_actions[static_cast<size_t>(t) * batch.agents + j]);
    sub.positions.push_back({batch.positions[static_cast<size_t>(t)][static_cast<size_t>(j)]});
    sub.next_positions.push_back(
        {batch.next_positions[static_cast<size_t>(t)][static_cast<size_t>(j)]});
  }
  for (size_t r = 0; r < batch.records.size(); ++r)
    if (batch.records[r].j == j) {
      sub.records.push_back({batch.records[r].t, 0});
      sub.rewards.push_back(batch.rewards[r]);
      sub.terminal.push_back(batch.terminal[r]);
    }
  return sub;
}

}  // namespace

UpdateStats update(Learner& learner, const Trajectory& traj, const RunConfig& config) {
  UpdateBatch batch = build_update_batch(traj);
  UpdateStats stats;
  const float lr_a = config.resolved_lr_actor();
  const float lr_c = config.resolved_lr_critic();
  if (!learner.per_agent()) {
    std::vector<float> y = compute_td_targets(learner, batch, config.gamma);
    if (config.advantage_baseline) {
      // study flag: subtract the target critic's mean action value at o_t
      Tensor base = learner.sets[0]->target->forward(batch.obs, batch.actions, batch.positions,
                                                     batch.steps, batch.agents, learner.z,
                                                     batch.records, nullptr);
      for (size_t r = 0; r < y.size(); ++r) {
        float mean = 0.0f;
        for (int a = 0; a < learner.dims.n_actions; ++a)
          mean += base.at(static_cast<int>(r), a);
        y[r] -= mean / static_cast<float>(learner.dims.n_actions);
      }
    }
    SetUpdateResult res =
        update_one_set(*learner.sets[0], batch, y, learner.z, lr_a, lr_c, config.tau);
    stats.actor_loss = res.actor_loss;
    stats.critic_loss = res.critic_loss;
    stats.actor_clipped = res.actor_clipped;
    stats.critic_clipped = res.critic_clipped;
  } else {
    for (int j = 0; j < batch.agents; ++j) {
      UpdateBatch sub = single_agent_view(batch, j);
      if (sub.records.empty()) continue;
      ModelSet& set = *learner.sets[static_cast<size_t>(j)];
      std::vector<float> q_next = next_q_values(*set.target, sub, 0);
      std::vector<float> y(sub.records.size());
      for (size_t r = 0; r < y.size(); ++r)
        y[r] = td_target(sub.rewards[r], config.gamma, q_next[r], sub.terminal[r] != 0);
      SetUpdateResult res = update_one_set(set, sub, y, 0, lr_a, lr_c, config.tau);
      stats.actor_loss += res.actor_loss;
      stats.critic_loss += res.critic_loss;
      stats.actor_clipped = stats.actor_clipped || res.actor_clipped;
      stats.critic_clipped = stats.critic_clipped || res.critic_clipped;
    }
  }
  if (!std::isfinite(stats.actor_loss) || !std::isfinite(stats.critic_loss))
    throw Error(ErrorKind::NonFiniteLoss, "non-finite loss in update");
  return stats;
}

std::vector<int> mapper_evolution(Learner& learner, std::span<const double> period_returns,
                                  Rng& rng) {
  const size_t n = learner.sets.size();
  if (period_returns.size() != n)
    throw Error(ErrorKind::LengthMismatch, "mapper_evolution: returns vs model sets");
  // softmax over period returns
  double mx = period_returns[0];
  for (double r : period_returns) mx = std::max(mx, r);
  std::vector<double> p(n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] = std::exp(period_returns[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;

  std::vector<int> assignment(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const float u = rng.next_float();
    double acc = 0.0;
    int pick = static_cast<int>(n) - 1;
    for (size_t k = 0; k < n; ++k) {
      acc += p[k];
      if (u < acc) {
        pick = static_cast<int>(k);
        break;
      }
    }
    assignment[i] = pick;
  }
  // copy from a pre-evolution snapshot so assignments are simultaneous
  std::vector<nn::ParamStore> snapshot;
  snapshot.reserve(n);
  for (const auto& set : learner.sets) snapshot.push_back(set->store);
  for (size_t i = 0; i < n; ++i) {
    learner.sets[i]->store = snapshot[static_cast<size_t>(assignment[i])];
    learner.sets[i]->store.reset_moments("");
  }
  return assignment;
}

EvalStats evaluate(const Learner& learner, const GridMap& map, const RunConfig& config,
                   int n_episodes, uint64_t seed_base) {
  EvalStats stats;
  stats.episodes = n_episodes;
  if (n_episodes <= 0) return stats;
  std::vector<double> success(static_cast<size_t>(n_episodes));
  std::vector<double> steps(static_cast<size_t>(n_episodes));
  std::vector<double> reward(static_cast<size_t>(n_episodes));
  bool failed = false;
  std::string error_msg;
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n_episodes; ++k) {
    try {
      GridWorld world(map, config.n_agents, config.n_dyn, config.init_mode,
                      derive_seed(seed_base, 0xEA0 + static_cast<uint64_t>(k)),
                      config.reward_config(), config.max_steps);
      Rng rng(derive_seed(seed_base, 0xEB0 + static_cast<uint64_t>(k)));
      Trajectory traj = run_episode(world, learner, /*greedy=*/true, rng, /*record=*/false);
      success[static_cast<size_t>(k)] = traj.success;
      steps[static_cast<size_t>(k)] = traj.episode_len;
      double mean_ret = 0.0;
      for (float r : traj.agent_return) mean_ret += r;
      reward[static_cast<size_t>(k)] = mean_ret / traj.agent_return.size();
    } catch (const std::exception& e) {
#pragma omp critical
      {
        failed = true;
        error_msg = e.what();
      }
    }
  }
  if (failed) throw Error(ErrorKind::InsufficientFreeCells, "evaluate: " + error_msg);
  double sum = 0.0, sum_sq = 0.0, st = 0.0, rw = 0.0;
  for (int k = 0; k < n_episodes; ++k) {
    sum += success[static_cast<size_t>(k)];
    sum_sq += success[static_cast<size_t>(k)] * success[static_cast<size_t>(k)];
    st += steps[static_cast<size_t>(k)];
    rw += reward[static_cast<size_t>(k)];
  }
  stats.success_mean = sum / n_episodes;
  stats.success_std = std::sqrt(std::max(0.0, sum_sq / n_episodes - stats.success_mean * stats.success_mean));
  stats.mean_steps = st / n_episodes;
  stats.mean_reward = rw / n_episodes;
  return stats;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const Learner& learner, const std::string& base_path,
                     const std::vector<std::pair<std::string, std::string>>& extra_meta) {
  nn::ParamStore merged;
  for (size_t s = 0; s < learner.sets.size(); ++s) {
    const std::string prefix = "set" + std::to_string(s) + ".";
    for (const auto& name : learner.sets[s]->store.names()) {
      auto& e = merged.create(prefix + name, learner.sets[s]->store.value(name).shape);
      e.value.data = learner.sets[s]->store.value(name).data;
    }
  }
  std::vector<std::pair<std::string, std::string>> meta;
  meta.emplace_back("format", "abmapper-ckpt-1");
  meta.emplace_back("mode", mode_name(learner.mode));
  meta.emplace_back("n_agents", std::to_string(learner.n_agents));
  meta.emplace_back("z", std::to_string(learner.z));
  meta.emplace_back("share_encoders", learner.share_encoders ? "1" : "0");
  meta.emplace_back("n_sets", std::to_string(learner.sets.size()));
  const auto& d = learner.dims;
  meta.emplace_back("cnn_channels", std::to_string(d.cnn_channels));
  meta.emplace_back("feature", std::to_string(d.feature));
  meta.emplace_back("gru_hidden", std::to_string(d.gru_hidden));
  meta.emplace_back("enc_dim", std::to_string(d.enc_dim));
  meta.emplace_back("attn_dim", std::to_string(d.attn_dim));
  meta.emplace_back("qhead_hidden", std::to_string(d.qhead_hidden));
  for (const auto& kv : extra_meta) meta.push_back(kv);
  merged.save(base_path, meta);
}

namespace {

int meta_int(const std::vector<std::pair<std::string, std::string>>& meta,
             const std::string& key) {
  for (const auto& [k, v] : meta)
    if (k == key) return std::stoi(v);
  throw Error(ErrorKind::CorruptManifest, "checkpoint meta missing key: " + key);
}

std::string meta_str(const std::vector<std::pair<std::string, std::string>>& meta,
                     const std::string& key) {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  throw Error(ErrorKind::CorruptManifest, "checkpoint meta missing key: " + key);
}

}  // namespace

Learner load_checkpoint(const std::string& base_path) {
  auto [merged, meta] = nn::ParamStore::load(base_path);
  if (meta_str(meta, "format") != "abmapper-ckpt-1")
    throw Error(ErrorKind::CorruptManifest, "unknown checkpoint format");
  Learner learner;
  learner.mode = parse_mode(meta_str(meta, "mode"));
  learner.n_agents = meta_int(meta, "n_agents");
  learner.z = meta_int(meta, "z");
  learner.share_encoders = meta_int(meta, "share_encoders") != 0;
  learner.dims.cnn_channels = meta_int(meta, "cnn_channels");
  learner.dims.feature = meta_int(meta, "feature");
  learner.dims.gru_hidden = meta_int(meta, "gru_hidden");
  learner.dims.enc_dim = meta_int(meta, "enc_dim");
  learner.dims.attn_dim = meta_int(meta, "attn_dim");
  learner.dims.qhead_hidden = meta_int(meta, "qhead_hidden");
  const int n_sets = meta_int(meta, "n_sets");
  const bool comm = learner.mode == Mode::ABMapper || learner.mode == Mode::BicNetOnly;
  const bool attention =
      learner.mode == Mode::ABMapper || learner.mode == Mode::AttentionOnly;
  for (int s = 0; s < n_sets; ++s) {
    const std::string prefix = "set" + std::to_string(s) + ".";
    nn::ParamStore store;
    for (const auto& name : merged.names(prefix)) {
      auto& e = store.create(name.substr(prefix.size()), merged.value(name).shape);
      e.value.data = merged.value(name).data;
    }
    const int set_agents = n_sets > 1 ? 1 : learner.n_agents;
    learner.sets.push_back(models::ModelSet::from_store(
        learner.dims, n_sets > 1 ? false : comm, n_sets > 1 ? false : attention,
        learner.share_encoders, set_agents, std::move(store)));
  }
  if (learner.sets.empty()) throw Error(ErrorKind::CorruptManifest, "checkpoint has no models");
  return learner;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(RunConfig config, GridMap map, std::string out_dir)
    : config_(std::move(config)), map_(std::move(map)), out_dir_(std::move(out_dir)) {
  learner_ = Learner::create(config_.mode, models::ModelDims{}, config_.n_agents, config_.z,
                             config_.share_encoders_resolved(),
                             derive_seed(config_.seed, 0x1417));
}

TrainResult Trainer::run(std::ostream* console) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir_);
  std::ofstream metrics(out_dir_ + "/metrics.csv", std::ios::binary);
  metrics << "episode,mode,success_rate,mean_reward,actor_loss,critic_loss,wall_clock_s\n";
  std::ofstream evals(out_dir_ + "/eval.csv", std::ios::binary);
  evals << "episode,success_mean,success_std,mean_steps,mean_reward\n";
  std::ofstream log(out_dir_ + "/train.log", std::ios::binary);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> period_returns(learner_.sets.size(), 0.0);
  Rng evolution_rng(derive_seed(config_.seed, 0xEE0));
  TrainResult result;
  char buf[256];

  auto run_eval = [&](int episode) {
    EvalStats es = evaluate(learner_, map_, config_, config_.eval_episodes,
                            derive_seed(config_.seed, 0xE7A1 + static_cast<uint64_t>(episode)));
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.3f,%.6f\n", episode, es.success_mean,
                  es.success_std, es.mean_steps, es.mean_reward);
    evals << buf;
    evals.flush();
    if (console != nullptr)
      *console << "episode " << episode << " eval success " << env::format_rate(es.success_mean)
               << " mean_steps " << es.mean_steps << "\n";
    return es;
  };

  EvalStats last_eval;
  for (int e = 0; e < config_.episodes; ++e) {
    GridWorld world(map_, config_.n_agents, config_.n_dyn, config_.init_mode,
                    derive_seed(config_.seed, 0xA0000000ull + static_cast<uint64_t>(e)),
                    config_.reward_config(), config_.max_steps);
    Rng rollout_rng(derive_seed(config_.seed, 0xB0000000ull + static_cast<uint64_t>(e)));
    Trajectory traj = run_episode(world, learner_, /*greedy=*/false, rollout_rng, true);
    UpdateStats us;
    try {
      us = update(learner_, traj, config_);
    } catch (const Error& err) {
      if (err.kind() == ErrorKind::NonFiniteLoss) {
        save_checkpoint(learner_, out_dir_ + "/ckpt_abort",
                        {{"episode", std::to_string(e)}, {"reason", "non-finite-loss"}});
        log << "episode " << e << ": non-finite loss, state dumped to ckpt_abort\n";
      }
      throw;
    }
    if (us.actor_clipped || us.critic_clipped)
      log << "episode " << e << ": grad clip fired (actor=" << us.actor_clipped
          << " critic=" << us.critic_clipped << ")\n";

    double mean_ret = 0.0;
    for (float r : traj.agent_return) mean_ret += r;
    mean_ret /= traj.agent_return.size();
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::snprintf(buf, sizeof(buf), "%d,%s,%.4f,%.6g,%.6g,%.6g,%.3f\n", e,
                  mode_name(config_.mode).c_str(), traj.success, mean_ret, us.actor_loss,
                  us.critic_loss, wall);
    metrics << buf;

    if (learner_.per_agent()) {
      for (size_t i = 0; i < period_returns.size(); ++i)
        period_returns[i] += traj.agent_return[i];
      if ((e + 1) % config_.evolution_period == 0) {
        auto assignment = mapper_evolution(learner_, period_returns, evolution_rng);
        log << "episode " << e << ": evolution assignment";
        for (int a : assignment) log << " " << a;
        log << "\n";
        std::fill(period_returns.begin(), period_returns.end(), 0.0);
      }
    }

    if (config_.eval_every > 0 && (e + 1) % config_.eval_every == 0) {
      last_eval = run_eval(e + 1);
      save_checkpoint(learner_, out_dir_ + "/ckpt_ep" + std::to_string(e + 1),
                      {{"episode", std::to_string(e + 1)}});
    }
  }
  last_eval = run_eval(config_.episodes);
  result.final_checkpoint = out_dir_ + "/ckpt_final";
  save_checkpoint(learner_, result.final_checkpoint,
                  {{"episode", std::to_string(config_.episodes)}});
  result.final_eval_success = last_eval.success_mean;
  return result;
}

}  // namespace abm::train
