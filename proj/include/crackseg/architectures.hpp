#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/model.hpp"
#include "crackseg/ops.hpp"

namespace crackseg {

/// Shared knobs for all single-model families. `kernel` must be odd so that
/// "same" padding exists; `depth` is the number of pool stages.
struct UNetConfig {
  int in_channels = 1;
  int base_filters = 16;
  int depth = 3;
  int kernel = 3;
};

struct EnsembleConfig {
  std::vector<int> kernels{3, 5, 7, 9};
  int meta_channels = 16;
  UNetConfig base;  // kernel field is overridden per member
};

namespace detail {

inline void validate_unet_config(const UNetConfig& c) {
  if (c.in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (c.base_filters < 1) throw ConfigError("base_filters must be >= 1");
  if (c.depth < 1 || c.depth > 6)
    throw ConfigError("depth must be in [1, 6], got " + std::to_string(c.depth));
  if (c.kernel < 1 || c.kernel > 15 || c.kernel % 2 == 0)
    throw ConfigError("kernel must be odd and in [1, 15], got " + std::to_string(c.kernel));
}

inline std::map<std::string, std::string> echo_unet_config(const UNetConfig& c) {
  return {{"in_channels", std::to_string(c.in_channels)},
          {"base_filters", std::to_string(c.base_filters)},
          {"depth", std::to_string(c.depth)},
          {"kernel", std::to_string(c.kernel)}};
}

inline int config_int(const std::map<std::string, std::string>& m,
                      const std::string& key, int dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  try {
    size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for '" + key + "': " + it->second);
  }
}

inline UNetConfig parse_unet_config(const std::map<std::string, std::string>& m) {
  UNetConfig c;
  c.in_channels = config_int(m, "in_channels", c.in_channels);
  c.base_filters = config_int(m, "base_filters", c.base_filters);
  c.depth = config_int(m, "depth", c.depth);
  c.kernel = config_int(m, "kernel", c.kernel);
  return c;
}

struct ConvParams {
  Tensor w, b;
};

// Kaiming-normal weights (fan-in variant, gain for ReLU), zero biases.
inline ConvParams he_conv(Model& m, std::mt19937& rng, const std::string& prefix,
                          int cout, int cin, int k) {
  std::normal_distribution<float> d(
      0.0f, std::sqrt(2.0f / (static_cast<float>(cin) * static_cast<float>(k) * k)));
  std::vector<float> w(static_cast<size_t>(cout) * cin * k * k);
  for (auto& v : w) v = d(rng);
  ConvParams p{Tensor::from_data({cout, cin, k, k}, std::move(w)), Tensor::zeros({cout})};
  m.register_param(prefix + ".weight", p.w);
  m.register_param(prefix + ".bias", p.b);
  return p;
}

// Transposed-conv weights, layout Cin x Cout x k x k with k = stride; every
// output pixel draws from exactly cin inputs, hence the fan-in of cin.
inline ConvParams he_tconv(Model& m, std::mt19937& rng, const std::string& prefix,
                           int cin, int cout, int k) {
  std::normal_distribution<float> d(0.0f, std::sqrt(2.0f / static_cast<float>(cin)));
  std::vector<float> w(static_cast<size_t>(cin) * cout * k * k);
  for (auto& v : w) v = d(rng);
  ConvParams p{Tensor::from_data({cin, cout, k, k}, std::move(w)), Tensor::zeros({cout})};
  m.register_param(prefix + ".weight", p.w);
  m.register_param(prefix + ".bias", p.b);
  return p;
}

using Layer = std::function<Tensor(const Tensor&)>;

/// ReLU(conv_k(ReLU(conv_k(x))) + shortcut). The shortcut is the identity
/// when channel counts agree and a 1x1 projection otherwise.
inline Layer residual_block(Model& m, std::mt19937& rng, const std::string& prefix,
                            int cin, int cout, int k) {
  ConvParams c1 = he_conv(m, rng, prefix + ".conv1", cout, cin, k);
  ConvParams c2 = he_conv(m, rng, prefix + ".conv2", cout, cout, k);
  if (cin != cout) {
    ConvParams pr = he_conv(m, rng, prefix + ".proj", cout, cin, 1);
    return [c1, c2, pr](const Tensor& x) {
      Tensor body = conv2d(relu(conv2d(x, c1.w, c1.b)), c2.w, c2.b);
      return relu(add(body, conv2d(x, pr.w, pr.b)));
    };
  }
  return [c1, c2](const Tensor& x) {
    Tensor body = conv2d(relu(conv2d(x, c1.w, c1.b)), c2.w, c2.b);
    return relu(add(body, x));
  };
}

/// conv-ReLU-conv-ReLU, the plain block shared by the U-Net and SegNet
/// baselines.
inline Layer double_conv_block(Model& m, std::mt19937& rng, const std::string& prefix,
                               int cin, int cout, int k) {
  ConvParams c1 = he_conv(m, rng, prefix + ".conv1", cout, cin, k);
  ConvParams c2 = he_conv(m, rng, prefix + ".conv2", cout, cout, k);
  return [c1, c2](const Tensor& x) {
    return relu(conv2d(relu(conv2d(x, c1.w, c1.b)), c2.w, c2.b));
  };
}

inline void check_forward_input(const Tensor& x, int in_channels, int depth) {
  check_image(x, "forward", "input");
  if (x.dim(1) != in_channels)
    throw ShapeError("forward: expected " + std::to_string(in_channels) +
                     "-channel input, got " + shape_str(x.shape()));
  const int div = 1 << depth;
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
    throw ShapeError("forward: spatial dims must be divisible by " +
                     std::to_string(div) + ", got " + shape_str(x.shape()));
}

inline Model build_unet_like(const char* family, bool residual, const UNetConfig& cfg,
                             unsigned seed) {
  validate_unet_config(cfg);
  Model m(family, echo_unet_config(cfg));
  std::mt19937 rng(seed);
  auto block = [&](const std::string& p, int ci, int co) {
    return residual ? residual_block(m, rng, p, ci, co, cfg.kernel)
                    : double_conv_block(m, rng, p, ci, co, cfg.kernel);
  };
  const int depth = cfg.depth;
  auto ch = [&cfg](int level) { return cfg.base_filters << level; };

  std::vector<Layer> enc;
  for (int d = 0; d < depth; ++d)
    enc.push_back(block("enc" + std::to_string(d),
                        d == 0 ? cfg.in_channels : ch(d - 1), ch(d)));
  Layer bottleneck = block("bottleneck", ch(depth - 1), ch(depth));
  std::vector<ConvParams> ups(static_cast<size_t>(depth));
  std::vector<Layer> dec(static_cast<size_t>(depth));
  for (int d = depth - 1; d >= 0; --d) {
    ups[d] = he_tconv(m, rng, "up" + std::to_string(d), ch(d + 1), ch(d), 2);
    dec[d] = block("dec" + std::to_string(d), 2 * ch(d), ch(d));
  }
  ConvParams head = he_conv(m, rng, "head", 1, ch(0), 1);

  const int in_channels = cfg.in_channels;
  m.forward = [enc, bottleneck, ups, dec, head, depth, in_channels](const Tensor& x) {
    check_forward_input(x, in_channels, depth);
    std::vector<Tensor> skips;
    Tensor cur = x;
    for (int d = 0; d < depth; ++d) {
      cur = enc[d](cur);
      skips.push_back(cur);
      cur = maxpool2d(cur).output;
    }
    cur = bottleneck(cur);
    for (int d = depth - 1; d >= 0; --d) {
      cur = conv2d_transpose(cur, ups[d].w, ups[d].b, 2);
      cur = dec[d](concat_channels(cur, skips[d]));
    }
    return sigmoid(conv2d(cur, head.w, head.b));
  };
  return m;
}

}  // namespace detail

inline Model build_resunet(const UNetConfig& cfg, unsigned seed) {
  return detail::build_unet_like("resunet", true, cfg, seed);
}

inline Model build_unet(const UNetConfig& cfg, unsigned seed) {
  return detail::build_unet_like("unet", false, cfg, seed);
}

/// Symmetric encoder-decoder without skip concatenation: pooling argmaxes
/// are carried across to the matching unpool stage instead.
inline Model build_segnet(const UNetConfig& cfg, unsigned seed) {
  detail::validate_unet_config(cfg);
  Model m("segnet", detail::echo_unet_config(cfg));
  std::mt19937 rng(seed);
  const int depth = cfg.depth;
  auto ch = [&cfg](int level) { return cfg.base_filters << level; };

  std::vector<detail::Layer> enc(static_cast<size_t>(depth)), dec(static_cast<size_t>(depth));
  for (int d = 0; d < depth; ++d)
    enc[d] = detail::double_conv_block(m, rng, "enc" + std::to_string(d),
                                       d == 0 ? cfg.in_channels : ch(d - 1), ch(d),
                                       cfg.kernel);
  for (int d = depth - 1; d >= 0; --d)
    dec[d] = detail::double_conv_block(m, rng, "dec" + std::to_string(d), ch(d),
                                       d == 0 ? ch(0) : ch(d - 1), cfg.kernel);
  detail::ConvParams head = detail::he_conv(m, rng, "head", 1, ch(0), 1);

  const int in_channels = cfg.in_channels;
  m.forward = [enc, dec, head, depth, in_channels](const Tensor& x) {
    detail::check_forward_input(x, in_channels, depth);
    Tensor cur = x;
    std::vector<std::shared_ptr<const PoolIndices>> idx(static_cast<size_t>(depth));
    std::vector<std::pair<int, int>> sizes(static_cast<size_t>(depth));
    for (int d = 0; d < depth; ++d) {
      cur = enc[d](cur);
      sizes[d] = {cur.dim(2), cur.dim(3)};
      PoolResult r = maxpool2d(cur);
      idx[d] = r.indices;
      cur = r.output;
    }
    for (int d = depth - 1; d >= 0; --d) {
      cur = max_unpool2d(cur, idx[d], sizes[d].first, sizes[d].second);
      cur = dec[d](cur);
    }
    return sigmoid(conv2d(cur, head.w, head.b));
  };
  return m;
}

inline Model build_from_config(const std::string& family,
                               const std::map<std::string, std::string>& config,
                               unsigned seed);

/// Stacks trained base models under a small convolutional meta-model. The
/// bases are deep-cloned (rebuilt from their config echo, blobs copied) and
/// frozen, so the ensemble owns its parameters outright and training it can
/// never write through to the originals. The meta-model sees the
/// channel-concatenated base probability maps.
inline Model build_ensemble(const std::vector<Model>& bases, int meta_channels,
                            unsigned seed) {
  if (bases.empty()) throw ConfigError("ensemble needs at least one base model");
  if (meta_channels < 1) throw ConfigError("meta_channels must be >= 1");
  std::map<std::string, std::string> cfg;
  cfg["bases"] = std::to_string(bases.size());
  cfg["meta_channels"] = std::to_string(meta_channels);
  for (size_t i = 0; i < bases.size(); ++i) {
    const std::string p = "base" + std::to_string(i) + ".";
    cfg[p + "family"] = bases[i].family();
    for (const auto& [k, v] : bases[i].config()) cfg[p + k] = v;
  }
  Model m("ensemble", cfg);

  std::vector<std::function<Tensor(const Tensor&)>> base_fwd;
  for (size_t i = 0; i < bases.size(); ++i) {
    Model clone = build_from_config(bases[i].family(), bases[i].config(), 0);
    for (const auto& [name, src] : bases[i].params())
      Tensor(clone.param(name)).data() = src.data();
    const std::string prefix = "base" + std::to_string(i) + ".";
    for (const auto& [name, t] : clone.params())
      m.register_param(prefix + name, t, false);
    base_fwd.push_back(clone.forward);
  }

  std::mt19937 rng(seed);
  const int n = static_cast<int>(bases.size());
  detail::ConvParams m1 = detail::he_conv(m, rng, "meta.conv1", meta_channels, n, 3);
  detail::ConvParams m2 = detail::he_conv(m, rng, "meta.conv2", meta_channels,
                                          meta_channels, 3);
  detail::ConvParams mh = detail::he_conv(m, rng, "meta.head", 1, meta_channels, 1);

  m.forward = [base_fwd, m1, m2, mh](const Tensor& x) {
    Tensor stack = base_fwd[0](x);
    for (size_t i = 1; i < base_fwd.size(); ++i)
      stack = concat_channels(stack, base_fwd[i](x));
    Tensor h = relu(conv2d(stack, m1.w, m1.b));
    h = relu(conv2d(h, m2.w, m2.b));
    return sigmoid(conv2d(h, mh.w, mh.b));
  };
  return m;
}

/// Rebuilds any family from its config echo; the single entry point shared
/// by checkpoint loading and ensemble cloning.
inline Model build_from_config(const std::string& family,
                               const std::map<std::string, std::string>& config,
                               unsigned seed) {
  if (family == "resunet") return build_resunet(detail::parse_unet_config(config), seed);
  if (family == "unet") return build_unet(detail::parse_unet_config(config), seed);
  if (family == "segnet") return build_segnet(detail::parse_unet_config(config), seed);
  if (family == "ensemble") {
    const int n = detail::config_int(config, "bases", -1);
    const int meta = detail::config_int(config, "meta_channels", 16);
    if (n < 1) throw ConfigError("ensemble config missing base count");
    std::vector<Model> bases;
    for (int i = 0; i < n; ++i) {
      const std::string p = "base" + std::to_string(i) + ".";
      std::map<std::string, std::string> sub;
      std::string fam;
      for (const auto& [k, v] : config) {
        if (k.rfind(p, 0) != 0) continue;
        const std::string tail = k.substr(p.size());
        if (tail == "family")
          fam = v;
        else
          sub[tail] = v;
      }
      if (fam.empty()) throw ConfigError("ensemble config missing " + p + "family");
      bases.push_back(build_from_config(fam, sub, seed + static_cast<unsigned>(i) + 1));
    }
    return build_ensemble(bases, meta, seed);
  }
  throw ConfigError("unknown model family: " + family);
}

/// Builds the four base models of the default ensemble recipe with their
/// per-member kernel sizes; member i is seeded with seed + i.
inline std::vector<Model> build_ensemble_bases(const EnsembleConfig& cfg, unsigned seed) {
  std::vector<Model> bases;
  for (size_t i = 0; i < cfg.kernels.size(); ++i) {
    UNetConfig bc = cfg.base;
    bc.kernel = cfg.kernels[i];
    bases.push_back(build_resunet(bc, seed + static_cast<unsigned>(i)));
  }
  return bases;
}

}  // namespace crackseg
