#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/architectures.hpp"
#include "crackseg/data.hpp"
#include "crackseg/model.hpp"
#include "crackseg/ops.hpp"

namespace crackseg {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 15;
  float learning_rate = 1e-3f;
  unsigned seed = 0;
  std::string optimizer = "adam";
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(c.learning_rate > 0.0f)) throw ConfigError("learning_rate must be > 0");
  if (c.optimizer != "adam" && c.optimizer != "sgd")
    throw ConfigError("optimizer must be 'adam' or 'sgd', got '" + c.optimizer + "'");
}

struct History {
  std::vector<float> train_loss;
  std::vector<float> val_loss;
  std::vector<double> seconds;

  size_t epochs() const { return train_loss.size(); }
};

/// Adam (bias-corrected, one global step counter) or plain SGD over a
/// model's parameters. Frozen parameters keep no state and are never
/// touched. All arithmetic is elementwise float, so updates are
/// bit-deterministic.
class Optimizer {
 public:
  Optimizer(const Model& model, const TrainConfig& cfg)
      : lr_(cfg.learning_rate), adam_(cfg.optimizer == "adam") {
    for (const auto& [name, t] : model.params()) params_.push_back(t);
    if (adam_) {
      m_.resize(params_.size());
      v_.resize(params_.size());
      for (size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].requires_grad()) continue;
        m_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0f);
        v_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0f);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_)
      if (p.requires_grad()) p.zero_grad();
  }

  void step() {
    ++t_;
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    const float bias1 = 1.0f - std::pow(b1, static_cast<float>(t_));
    const float bias2 = 1.0f - std::pow(b2, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.requires_grad()) continue;
      float* w = p.data().data();
      const float* g = p.grad().data();
      const size_t n = p.data().size();
      if (!adam_) {
        for (size_t j = 0; j < n; ++j) w[j] -= lr_ * g[j];
        continue;
      }
      float* m = m_[i].data();
      float* v = v_[i].data();
      for (size_t j = 0; j < n; ++j) {
        m[j] = b1 * m[j] + (1.0f - b1) * g[j];
        v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
        const float mh = m[j] / bias1;
        const float vh = v[j] / bias2;
        w[j] -= lr_ * mh / (std::sqrt(vh) + eps);
      }
    }
  }

  int64_t steps() const { return t_; }

 private:
  float lr_;
  bool adam_;
  int64_t t_ = 0;
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
};

namespace detail {

inline float mean_loss_over(const Model& model, const Dataset& ds, int batch_size,
                            int epoch_for_msg) {
  double acc = 0.0;
  int64_t count = 0;
  std::vector<size_t> chunk;
  for (size_t at = 0; at < ds.size(); at += static_cast<size_t>(batch_size)) {
    chunk.clear();
    for (size_t i = at; i < std::min(ds.size(), at + static_cast<size_t>(batch_size)); ++i)
      chunk.push_back(i);
    auto [x, y] = make_batch(ds, chunk);
    const float lv = bce_loss(model.forward(x), y).scalar();
    if (!std::isfinite(lv))
      throw NumericError("non-finite validation loss " + std::to_string(lv) +
                         " at epoch " + std::to_string(epoch_for_msg));
    acc += static_cast<double>(lv) * x.dim(0);
    count += x.dim(0);
  }
  return static_cast<float>(acc / static_cast<double>(count));
}

}  // namespace detail

/// One optimization run: per epoch, seeded shuffled minibatches, BCE loss,
/// backward, step on trainable parameters, then a full validation pass in
/// plain order with no updates. Train loss is the sample-weighted mean over
/// the epoch's batches. Deterministic given config and datasets.
inline History train_model(Model& model, const Dataset& train, const Dataset& val,
                           const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (train.empty()) throw DataError("train_model: empty training dataset");
  if (val.empty()) throw DataError("train_model: empty validation dataset");

  Optimizer opt(model, cfg);
  History h;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    double acc = 0.0;
    int64_t count = 0;
    int batch_no = 0;
    for (auto& [x, y] : batches(train, cfg.batch_size, cfg.seed, e)) {
      ++batch_no;
      Tensor loss = bce_loss(model.forward(x), y);
      const float lv = loss.scalar();
      if (!std::isfinite(lv))
        throw NumericError("non-finite training loss " + std::to_string(lv) +
                           " at epoch " + std::to_string(e + 1) + ", batch " +
                           std::to_string(batch_no));
      opt.zero_grad();
      loss.backward();
      opt.step();
      acc += static_cast<double>(lv) * x.dim(0);
      count += x.dim(0);
    }
    h.train_loss.push_back(static_cast<float>(acc / static_cast<double>(count)));
    h.val_loss.push_back(detail::mean_loss_over(model, val, cfg.batch_size, e + 1));
    h.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return h;
}

/// Stage 1 trains each base independently (seed offset by member index);
/// stage 2 assembles the frozen-base ensemble and trains only its
/// meta-model. Returns the ensemble plus the four stage-1 histories and the
/// stage-2 history, in that order. `out_bases`, when given, receives the
/// trained base models for checkpointing.
inline std::pair<Model, std::vector<History>> train_ensemble_two_stage(
    const EnsembleConfig& ecfg, const Dataset& train, const Dataset& val,
    const TrainConfig& stage1, const TrainConfig& stage2,
    std::vector<Model>* out_bases = nullptr) {
  validate_train_config(stage1);
  validate_train_config(stage2);
  std::vector<Model> bases = build_ensemble_bases(ecfg, stage1.seed);
  std::vector<History> hist;
  for (size_t i = 0; i < bases.size(); ++i) {
    TrainConfig cfg = stage1;
    cfg.seed = stage1.seed + static_cast<unsigned>(i);
    hist.push_back(train_model(bases[i], train, val, cfg));
  }
  Model ensemble = build_ensemble(bases, ecfg.meta_channels, stage2.seed);
  hist.push_back(train_model(ensemble, train, val, stage2));
  if (out_bases) *out_bases = std::move(bases);
  return {std::move(ensemble), std::move(hist)};
}

/// FNV-1a over every parameter blob in registration order; handy for
/// freeze-invariance checks.
inline uint64_t hash_params(const Model& m) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t len) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : m.params()) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.data().size() * sizeof(float));
  }
  return h;
}

// Checkpoint container: "CRKN", u16 version, family, config echo as sorted
// key=value lines, then length-prefixed named float32 blobs, everything
// little-endian.
inline constexpr uint16_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline void put_u16(std::ostream& out, uint16_t v) {
  out.write(reinterpret_cast<const char*>(&v), 2);
}
inline void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint16_t get_u16(std::istream& in, const std::string& path) {
  uint16_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 2))
    throw DataError("truncated checkpoint: " + path);
  return v;
}
inline uint32_t get_u32(std::istream& in, const std::string& path) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4))
    throw DataError("truncated checkpoint: " + path);
  return v;
}
inline std::string get_str(std::istream& in, const std::string& path, uint32_t cap) {
  const uint32_t len = get_u32(in, path);
  if (len > cap) throw DataError("corrupt checkpoint (oversized field): " + path);
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw DataError("truncated checkpoint: " + path);
  return s;
}

inline std::string encode_config(const std::map<std::string, std::string>& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg) out += k + "=" + v + "\n";
  return out;
}

inline std::map<std::string, std::string> decode_config(const std::string& blob,
                                                        const std::string& path) {
  std::map<std::string, std::string> cfg;
  size_t at = 0;
  while (at < blob.size()) {
    const size_t nl = blob.find('\n', at);
    if (nl == std::string::npos)
      throw DataError("corrupt checkpoint config echo: " + path);
    const std::string line = blob.substr(at, nl - at);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("corrupt checkpoint config echo: " + path);
    cfg[line.substr(0, eq)] = line.substr(eq + 1);
    at = nl + 1;
  }
  return cfg;
}

}  // namespace detail

inline void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write("CRKN", 4);
  detail::put_u16(out, kCheckpointVersion);
  detail::put_str(out, m.family());
  detail::put_str(out, detail::encode_config(m.config()));
  detail::put_u32(out, static_cast<uint32_t>(m.params().size()));
  for (const auto& [name, t] : m.params()) {
    detail::put_str(out, name);
    detail::put_u32(out, static_cast<uint32_t>(t.numel()));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.data().size() * sizeof(float)));
  }
  if (!out) throw DataError("short write to checkpoint " + path);
}

/// Rebuilds the architecture from the stored family and config echo, then
/// overwrites every parameter blob. Pass `expect_family` to reject loading
/// a checkpoint from a different family.
inline Model load_checkpoint(const std::string& path,
                             const std::string& expect_family = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[4] = {0, 0, 0, 0};
  if (!in.read(magic, 4) || std::string(magic, 4) != "CRKN")
    throw DataError("not a checkpoint (bad magic): " + path);
  const uint16_t version = detail::get_u16(in, path);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) +
                    " in " + path);
  const std::string family = detail::get_str(in, path, 1 << 10);
  if (!expect_family.empty() && family != expect_family)
    throw DataError("checkpoint family '" + family + "' does not match expected '" +
                    expect_family + "': " + path);
  const auto cfg = detail::decode_config(detail::get_str(in, path, 1 << 20), path);

  Model m = build_from_config(family, cfg, 0);
  const uint32_t count = detail::get_u32(in, path);
  if (count != m.params().size())
    throw DataError("checkpoint has " + std::to_string(count) + " parameters, " +
                    family + " expects " + std::to_string(m.params().size()) + ": " +
                    path);
  for (const auto& [name, t] : m.params()) {
    const std::string stored = detail::get_str(in, path, 1 << 10);
    if (stored != name)
      throw DataError("checkpoint parameter '" + stored + "' does not match '" +
                      name + "': " + path);
    const uint32_t n = detail::get_u32(in, path);
    if (n != static_cast<uint32_t>(t.numel()))
      throw DataError("checkpoint parameter '" + name + "' has " + std::to_string(n) +
                      " values, expected " + std::to_string(t.numel()) + ": " + path);
    if (!in.read(reinterpret_cast<char*>(Tensor(t).data().data()),
                 static_cast<std::streamsize>(n * sizeof(float))))
      throw DataError("truncated checkpoint: " + path);
  }
  return m;
}

/// epoch,train_loss,val_loss,seconds rows. The seconds column defaults to a
/// 0.000 sentinel so reruns with identical seeds emit byte-identical files;
/// pass with_timing=true to record wall-clock instead.
inline void write_history_csv(const History& h, const std::string& path,
                              bool with_timing = false) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,train_loss,val_loss,seconds\n";
  char line[128];
  for (size_t e = 0; e < h.epochs(); ++e) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.3f\n", e + 1,
                  static_cast<double>(h.train_loss[e]),
                  static_cast<double>(h.val_loss[e]),
                  with_timing ? h.seconds[e] : 0.0);
    out << line;
  }
  if (!out) throw DataError("short write to " + path);
}

}  // namespace crackseg
