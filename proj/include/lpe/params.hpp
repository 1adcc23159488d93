#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpe/rng.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

// A named trainable tensor with its gradient buffer.
struct Param {
  std::string name;
  std::vector<std::int64_t> dims;
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const { return value.size(); }
};

class ParamSet {
 public:
  Param& add(const std::string& name, std::vector<std::int64_t> dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    params_.push_back(Param{name, std::move(dims),
                            std::vector<double>(n, 0.0),
                            std::vector<double>(n, 0.0)});
    return params_.back();
  }

  Param& at(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw std::runtime_error("no such parameter: " + name);
  }
  const Param& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_)
      std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  void scale_grad(double s) {
    for (auto& p : params_)
      for (auto& g : p.grad) g *= s;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  // Bitwise hash of all parameter values, order-sensitive. Used for the
  // frozen-parameter contracts.
  std::uint64_t hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& p : params_) {
      h = fnv1a(p.name, h);
      h = fnv1a(p.value.data(), p.value.size() * sizeof(double), h);
    }
    return h;
  }

  void check_finite_grads() const {
    for (const auto& p : params_)
      for (double g : p.grad)
        if (!std::isfinite(g))
          throw std::runtime_error("non-finite gradient in parameter " + p.name);
  }

 private:
  std::vector<Param> params_;
};

// Fan-in scaled uniform init for weight matrices.
inline void init_uniform_fan_in(Param& p, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : p.value) v = (2.0 * rng.uniform() - 1.0) * bound;
}

// ---------------------------------------------------------------------------
// AdamW-style optimizer (decoupled weight decay, zero by default).
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(std::vector<Param*> params) {
    ++t_;
    if (m_.size() != params.size()) {
      m_.assign(params.size(), {});
      v_.assign(params.size(), {});
    }
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      if (m_[i].size() != p.size()) {
        m_[i].assign(p.size(), 0.0);
        v_[i].assign(p.size(), 0.0);
      }
      for (std::size_t j = 0; j < p.size(); ++j) {
        double g = p.grad[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        p.value[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.value[j]);
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_, wd_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoints: a binary blob of tensors plus a JSON index. The payload reuses
// the tensor container layout; parameter tensors are stored at f64 so that a
// reload reproduces training bit-exactly (dtype recorded in the index).
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::string stage;        // "stage1" | "stage2" | "decoder"
  std::string config_hash;  // hex hash of the model configuration
};

inline void save_checkpoint(const std::string& path_prefix,
                            const CheckpointMeta& meta,
                            const std::vector<const ParamSet*>& sets,
                            const std::vector<std::string>& set_names) {
  nlohmann::json index;
  index["stage"] = meta.stage;
  index["config_hash"] = meta.config_hash;
  index["dtype"] = "f64";
  index["tensors"] = nlohmann::json::array();

  std::ofstream bin(path_prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write checkpoint: " + path_prefix + ".bin");
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (const auto& p : sets[s]->all()) {
      std::int64_t offset = static_cast<std::int64_t>(bin.tellp());
      detail::write_i64(bin, static_cast<std::int64_t>(p.dims.size()));
      for (auto d : p.dims) detail::write_i64(bin, d);
      for (double v : p.value) detail::write_f64(bin, v);
      index["tensors"].push_back({{"set", set_names[s]},
                                  {"name", p.name},
                                  {"dims", p.dims},
                                  {"offset", offset}});
    }
  }
  bin.close();

  std::ofstream js(path_prefix + ".json");
  if (!js) throw std::runtime_error("cannot write checkpoint index: " + path_prefix + ".json");
  js << index.dump(2) << "\n";
}

inline CheckpointMeta load_checkpoint(const std::string& path_prefix,
                                      const std::vector<ParamSet*>& sets,
                                      const std::vector<std::string>& set_names) {
  std::ifstream js(path_prefix + ".json");
  if (!js) throw std::runtime_error("cannot open checkpoint index: " + path_prefix + ".json");
  nlohmann::json index = nlohmann::json::parse(js);

  std::ifstream bin(path_prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open checkpoint: " + path_prefix + ".bin");

  for (const auto& entry : index.at("tensors")) {
    const std::string set_name = entry.at("set");
    const std::string name = entry.at("name");
    ParamSet* target = nullptr;
    for (std::size_t s = 0; s < set_names.size(); ++s)
      if (set_names[s] == set_name) target = sets[s];
    if (!target) continue;  // caller did not ask for this set
    Param& p = target->at(name);
    bin.seekg(entry.at("offset").get<std::int64_t>());
    std::int64_t rank = detail::read_i64(bin);
    std::vector<std::int64_t> dims(static_cast<std::size_t>(rank));
    std::size_t n = 1;
    for (auto& d : dims) {
      d = detail::read_i64(bin);
      n *= static_cast<std::size_t>(d);
    }
    if (dims != p.dims)
      throw std::runtime_error("checkpoint tensor shape mismatch for " + set_name + "/" + name);
    for (std::size_t i = 0; i < n; ++i) p.value[i] = detail::read_f64(bin);
  }

  CheckpointMeta meta;
  meta.stage = index.at("stage");
  meta.config_hash = index.at("config_hash");
  return meta;
}

inline std::string to_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace lpe
