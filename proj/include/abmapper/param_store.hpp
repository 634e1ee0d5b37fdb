#pragma once

#include <map>
#include <string>
#include <vector>

#include "abmapper/tensor.hpp"

namespace abm::nn {

struct ParamEntry {
  Tensor value;
  Tensor grad;
  Tensor m, v;    // optimizer moments
  long step = 0;  // per-entry adam step count
};

/// Named, shaped, flat float32 arrays for every learnable tensor, with
/// gradients and optimizer moments. Single writer; value snapshots may be
/// read concurrently.
class ParamStore {
 public:
  ParamEntry& create(const std::string& name, std::vector<int> shape);
  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;
  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }
  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  // Sorted names, optionally restricted to a prefix.
  std::vector<std::string> names(const std::string& prefix = "") const;

  void zero_grads(const std::string& prefix = "");
  // Global L2 norm of gradients under prefix.
  double grad_norm(const std::string& prefix = "") const;
  // Scales gradients so their global norm is at most max_norm.
  // Returns true when clipping fired.
  bool clip_grad_norm(const std::string& prefix, double max_norm);
  // Adaptive-moment update of all entries under prefix, in place.
  void adam_step(const std::string& prefix, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
                 float eps = 1e-8f);
  void reset_moments(const std::string& prefix = "");

  // Copies values (not moments) from another store, matching names 1:1 under
  // the given prefixes. Throws NameMismatch if the name sets differ.
  void copy_values_from(const ParamStore& src, const std::string& dst_prefix,
                        const std::string& src_prefix);

  // Checkpoint: <base>.manifest (text: meta lines then per-tensor
  // name/shape/offset/length) + <base>.blob (raw little-endian float32).
  // Save order is sorted by name, so save -> load -> save is byte-identical.
  void save(const std::string& base_path,
            const std::vector<std::pair<std::string, std::string>>& meta = {}) const;
  // Loads values; gradients and moments reset. Returns the meta lines.
  static std::pair<ParamStore, std::vector<std::pair<std::string, std::string>>> load(
      const std::string& base_path);

  size_t size() const { return entries_.size(); }
  long total_params() const;

 private:
  std::map<std::string, ParamEntry> entries_;
};

}  // namespace abm::nn
