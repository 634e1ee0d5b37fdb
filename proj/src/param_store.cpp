#include "abmapper/param_store.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace abm::nn {

ParamEntry& ParamStore::create(const std::string& name, std::vector<int> shape) {
  if (has(name)) throw Error(ErrorKind::NameMismatch, "duplicate parameter name: " + name);
  ParamEntry e;
  e.value = Tensor(shape);
  e.grad = Tensor(shape);
  e.m = Tensor(shape);
  e.v = Tensor(std::move(shape));
  return entries_.emplace(name, std::move(e)).first->second;
}

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorKind::NameMismatch, "no such parameter: " + name);
  return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorKind::NameMismatch, "no such parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;  // std::map iteration is already sorted
}

void ParamStore::zero_grads(const std::string& prefix) {
  for (auto& [name, e] : entries_)
    if (name.rfind(prefix, 0) == 0) e.grad.zero();
}

double ParamStore::grad_norm(const std::string& prefix) const {
  double sq = 0.0;
  for (const auto& [name, e] : entries_)
    if (name.rfind(prefix, 0) == 0)
      for (float g : e.grad.data) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

bool ParamStore::clip_grad_norm(const std::string& prefix, double max_norm) {
  double norm = grad_norm(prefix);
  if (norm <= max_norm || norm == 0.0) return false;
  float scale = static_cast<float>(max_norm / norm);
  for (auto& [name, e] : entries_)
    if (name.rfind(prefix, 0) == 0)
      for (float& g : e.grad.data) g *= scale;
  return true;
}

void ParamStore::adam_step(const std::string& prefix, float lr, float beta1, float beta2,
                           float eps) {
  for (auto& [name, e] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    e.step += 1;
    const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(e.step));
    const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(e.step));
    float* p = e.value.ptr();
    float* g = e.grad.ptr();
    float* m = e.m.ptr();
    float* v = e.v.ptr();
    const long n = e.value.numel();
    for (long i = 0; i < n; ++i) {
      m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
      float mhat = m[i] / bc1;
      float vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void ParamStore::reset_moments(const std::string& prefix) {
  for (auto& [name, e] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    e.m.zero();
    e.v.zero();
    e.step = 0;
  }
}

void ParamStore::copy_values_from(const ParamStore& src, const std::string& dst_prefix,
                                  const std::string& src_prefix) {
  auto dst_names = names(dst_prefix);
  auto src_names = src.names(src_prefix);
  if (dst_names.size() != src_names.size())
    throw Error(ErrorKind::NameMismatch, "copy_values_from: name sets differ in size");
  for (size_t i = 0; i < dst_names.size(); ++i) {
    const std::string dst_suffix = dst_names[i].substr(dst_prefix.size());
    const std::string src_suffix = src_names[i].substr(src_prefix.size());
    if (dst_suffix != src_suffix)
      throw Error(ErrorKind::NameMismatch,
                  "copy_values_from: " + dst_names[i] + " vs " + src_names[i]);
    const Tensor& from = src.entry(src_names[i]).value;
    Tensor& to = entry(dst_names[i]).value;
    if (!to.same_shape(from))
      throw Error(ErrorKind::ShapeMismatch, "copy_values_from: " + dst_names[i]);
    to.data = from.data;
  }
}

long ParamStore::total_params() const {
  long n = 0;
  for (const auto& [name, e] : entries_) n += e.value.numel();
  return n;
}

void ParamStore::save(const std::string& base_path,
                      const std::vector<std::pair<std::string, std::string>>& meta) const {
  std::ostringstream manifest;
  std::string blob;
  for (const auto& [k, v] : meta) manifest << "meta " << k << " " << v << "\n";
  for (const auto& [name, e] : entries_) {
    const size_t offset = blob.size();
    const size_t len = e.value.data.size() * sizeof(float);
    manifest << "tensor " << name << " " << e.value.rank();
    for (int d : e.value.shape) manifest << " " << d;
    manifest << " " << offset << " " << len << "\n";
    blob.append(reinterpret_cast<const char*>(e.value.data.data()), len);
  }
  std::ofstream mf(base_path + ".manifest", std::ios::binary);
  if (!mf) throw Error(ErrorKind::MissingCheckpoint, "cannot write " + base_path + ".manifest");
  mf << manifest.str();
  std::ofstream bf(base_path + ".blob", std::ios::binary);
  if (!bf) throw Error(ErrorKind::MissingCheckpoint, "cannot write " + base_path + ".blob");
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

std::pair<ParamStore, std::vector<std::pair<std::string, std::string>>> ParamStore::load(
    const std::string& base_path) {
  std::ifstream mf(base_path + ".manifest", std::ios::binary);
  if (!mf) throw Error(ErrorKind::MissingCheckpoint, "missing " + base_path + ".manifest");
  std::ifstream bf(base_path + ".blob", std::ios::binary);
  if (!bf) throw Error(ErrorKind::MissingCheckpoint, "missing " + base_path + ".blob");
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  ParamStore store;
  std::vector<std::pair<std::string, std::string>> meta;
  std::string line;
  size_t lineno = 0;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string k;
      ls >> k;
      std::string v;
      std::getline(ls, v);
      if (!v.empty() && v.front() == ' ') v.erase(0, 1);
      meta.emplace_back(k, v);
    } else if (kind == "tensor") {
      std::string name;
      int rank = -1;
      ls >> name >> rank;
      if (!ls || rank < 0 || rank > 8)
        throw Error(ErrorKind::CorruptManifest, "bad tensor line " + std::to_string(lineno));
      std::vector<int> shape(static_cast<size_t>(rank));
      for (int i = 0; i < rank; ++i) ls >> shape[static_cast<size_t>(i)];
      size_t offset = 0, len = 0;
      ls >> offset >> len;
      if (!ls) throw Error(ErrorKind::CorruptManifest, "bad tensor line " + std::to_string(lineno));
      ParamEntry& e = store.create(name, shape);
      if (len != e.value.data.size() * sizeof(float) || offset + len > blob.size())
        throw Error(ErrorKind::CorruptManifest, "tensor extent mismatch for " + name);
      std::memcpy(e.value.data.data(), blob.data() + offset, len);
    } else {
      throw Error(ErrorKind::CorruptManifest,
                  "unknown manifest record at line " + std::to_string(lineno));
    }
  }
  return {std::move(store), std::move(meta)};
}

}  // namespace abm::nn
