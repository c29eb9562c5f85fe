#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crackseg/architectures.hpp"
#include "support/oracles.hpp"

using namespace crackseg;

namespace {

// Parameter-count formulas written out independently of the builders.
int64_t conv_params(int cout, int cin, int k) {
  return static_cast<int64_t>(cout) * cin * k * k + cout;
}

int64_t block_params(bool residual, int cin, int cout, int k) {
  int64_t total = conv_params(cout, cin, k) + conv_params(cout, cout, k);
  if (residual && cin != cout) total += conv_params(cout, cin, 1);
  return total;
}

int64_t unet_like_params(bool residual, const UNetConfig& c) {
  auto ch = [&c](int level) { return c.base_filters << level; };
  int64_t total = 0;
  for (int d = 0; d < c.depth; ++d)
    total += block_params(residual, d == 0 ? c.in_channels : ch(d - 1), ch(d), c.kernel);
  total += block_params(residual, ch(c.depth - 1), ch(c.depth), c.kernel);
  for (int d = 0; d < c.depth; ++d) {
    total += static_cast<int64_t>(ch(d + 1)) * ch(d) * 4 + ch(d);  // 2x2 tconv
    total += block_params(residual, 2 * ch(d), ch(d), c.kernel);
  }
  return total + conv_params(1, ch(0), 1);
}

int64_t segnet_params(const UNetConfig& c) {
  auto ch = [&c](int level) { return c.base_filters << level; };
  int64_t total = 0;
  for (int d = 0; d < c.depth; ++d)
    total += block_params(false, d == 0 ? c.in_channels : ch(d - 1), ch(d), c.kernel);
  for (int d = 0; d < c.depth; ++d)
    total += block_params(false, ch(d), d == 0 ? ch(0) : ch(d - 1), c.kernel);
  return total + conv_params(1, ch(0), 1);
}

std::set<std::string> name_set(const Model& m) {
  std::set<std::string> s;
  for (const auto& [n, t] : m.params()) s.insert(n);
  return s;
}

}  // namespace

TEST_CASE("parameter counts match the closed-form oracle") {
  for (int depth : {1, 2, 3, 4}) {
    for (int kernel : {1, 3, 5}) {
      UNetConfig c;
      c.base_filters = 8;
      c.depth = depth;
      c.kernel = kernel;
      CAPTURE(depth, kernel);
      REQUIRE(build_resunet(c, 0).param_count() == unet_like_params(true, c));
      REQUIRE(build_unet(c, 0).param_count() == unet_like_params(false, c));
      REQUIRE(build_segnet(c, 0).param_count() == segnet_params(c));
    }
  }
}

TEST_CASE("resunet is unet plus projection shortcuts and nothing else") {
  UNetConfig c;
  c.base_filters = 8;
  c.depth = 2;
  const auto res = name_set(build_resunet(c, 0));
  const auto plain = name_set(build_unet(c, 0));
  for (const auto& n : plain) {
    CAPTURE(n);
    REQUIRE(res.count(n) == 1);
  }
  for (const auto& n : res) {
    if (plain.count(n)) continue;
    CAPTURE(n);
    REQUIRE(n.find(".proj.") != std::string::npos);
  }
  REQUIRE(res.size() > plain.size());
}

TEST_CASE("a residual block with matching channels needs no projection") {
  UNetConfig c;
  c.in_channels = 8;
  c.base_filters = 8;
  c.depth = 1;
  const Model m = build_resunet(c, 0);
  REQUIRE_FALSE(m.has_param("enc0.proj.weight"));
  REQUIRE(m.has_param("bottleneck.proj.weight"));  // 8 -> 16 still projects
}

TEST_CASE("builders are deterministic in the seed") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 2;
  const Model a = build_resunet(c, 5);
  const Model b = build_resunet(c, 5);
  const Model other = build_resunet(c, 6);
  REQUIRE(a.params().size() == b.params().size());
  bool any_diff = false;
  for (size_t i = 0; i < a.params().size(); ++i) {
    REQUIRE(a.params()[i].first == b.params()[i].first);
    REQUIRE(a.params()[i].second.data() == b.params()[i].second.data());
    if (a.params()[i].second.data() != other.params()[i].second.data()) any_diff = true;
  }
  REQUIRE(any_diff);
}

TEST_CASE("conv weights use He fan-in scaling and biases start at zero") {
  UNetConfig c;
  c.in_channels = 4;
  c.base_filters = 64;
  c.depth = 1;
  c.kernel = 3;
  const Model m = build_resunet(c, 3);
  const Tensor w = m.param("enc0.conv1.weight");
  double acc = 0.0;
  for (float v : w.data()) acc += static_cast<double>(v) * v;
  const double want_var = 2.0 / (4 * 3 * 3);
  const double got_var = acc / static_cast<double>(w.data().size());
  REQUIRE(got_var > 0.7 * want_var);
  REQUIRE(got_var < 1.3 * want_var);
  for (float v : m.param("enc0.conv1.bias").data()) REQUIRE(v == 0.0f);
}

TEST_CASE("all four families preserve 128x128 shape with outputs inside (0,1)") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 3;
  std::mt19937 rng(17);
  const Tensor x = oracle::random_tensor(rng, {1, 1, 128, 128}, 0.0f, 1.0f);

  std::vector<Model> models;
  models.push_back(build_resunet(c, 0));
  models.push_back(build_unet(c, 1));
  models.push_back(build_segnet(c, 2));
  EnsembleConfig ec;
  ec.base = c;
  ec.base.depth = 2;
  ec.kernels = {3, 5};
  ec.meta_channels = 4;
  models.push_back(build_ensemble(build_ensemble_bases(ec, 0), ec.meta_channels, 9));

  for (const Model& m : models) {
    CAPTURE(m.family());
    const Tensor y = m.forward(x);
    REQUIRE(y.shape() == Shape{1, 1, 128, 128});
    for (float v : y.data()) {
      REQUIRE(v > 0.0f);
      REQUIRE(v < 1.0f);
    }
  }
}

TEST_CASE("segnet recovers detail through unpool, not concat; u-nets the reverse") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 2;
  std::mt19937 rng(19);
  const Tensor x = oracle::random_tensor(rng, {1, 1, 32, 32}, 0.0f, 1.0f);

  const auto res_ops = count_ops(build_resunet(c, 0).forward(x));
  const auto unet_ops = count_ops(build_unet(c, 0).forward(x));
  const auto seg_ops = count_ops(build_segnet(c, 0).forward(x));

  REQUIRE(res_ops.count("concat_channels") == 1);
  REQUIRE(res_ops.count("max_unpool2d") == 0);
  REQUIRE(unet_ops.count("concat_channels") == 1);
  REQUIRE(unet_ops.count("max_unpool2d") == 0);
  REQUIRE(seg_ops.count("concat_channels") == 0);
  REQUIRE(seg_ops.count("max_unpool2d") == 1);
  REQUIRE(seg_ops.at("max_unpool2d") == 2);
  REQUIRE(seg_ops.count("conv2d_transpose") == 0);

  // residual shortcuts exist only in the residual variant
  REQUIRE(res_ops.count("add") == 1);
  REQUIRE(unet_ops.count("add") == 0);
}

TEST_CASE("resunet forward equals a hand-assembled replay of its blocks") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 1;
  const Model m = build_resunet(c, 11);
  std::mt19937 rng(23);
  const Tensor x = oracle::random_tensor(rng, {2, 1, 8, 8}, 0.0f, 1.0f);

  auto resblock = [&m](const std::string& p, const Tensor& in) {
    Tensor body = conv2d(relu(conv2d(in, m.param(p + ".conv1.weight"),
                                     m.param(p + ".conv1.bias"))),
                         m.param(p + ".conv2.weight"), m.param(p + ".conv2.bias"));
    Tensor shortcut = m.has_param(p + ".proj.weight")
                          ? conv2d(in, m.param(p + ".proj.weight"),
                                   m.param(p + ".proj.bias"))
                          : in;
    return relu(add(body, shortcut));
  };
  Tensor s0 = resblock("enc0", x);
  Tensor bn = resblock("bottleneck", maxpool2d(s0).output);
  Tensor up = conv2d_transpose(bn, m.param("up0.weight"), m.param("up0.bias"), 2);
  Tensor d0 = resblock("dec0", concat_channels(up, s0));
  Tensor want = sigmoid(conv2d(d0, m.param("head.weight"), m.param("head.bias")));

  REQUIRE(m.forward(x).data() == want.data());
}

TEST_CASE("segnet forward equals a hand-assembled replay of its blocks") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 1;
  const Model m = build_segnet(c, 13);
  std::mt19937 rng(29);
  const Tensor x = oracle::random_tensor(rng, {1, 1, 8, 8}, 0.0f, 1.0f);

  auto dblock = [&m](const std::string& p, const Tensor& in) {
    return relu(conv2d(relu(conv2d(in, m.param(p + ".conv1.weight"),
                                   m.param(p + ".conv1.bias"))),
                       m.param(p + ".conv2.weight"), m.param(p + ".conv2.bias")));
  };
  Tensor e0 = dblock("enc0", x);
  PoolResult pr = maxpool2d(e0);
  Tensor d0 = dblock("dec0", max_unpool2d(pr.output, pr.indices, 8, 8));
  Tensor want = sigmoid(conv2d(d0, m.param("head.weight"), m.param("head.bias")));

  REQUIRE(m.forward(x).data() == want.data());
}

TEST_CASE("forward rejects wrong channel counts and indivisible sizes") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 3;
  const Model m = build_resunet(c, 0);
  REQUIRE_THROWS_AS(m.forward(Tensor::zeros({1, 2, 32, 32})), ShapeError);
  REQUIRE_THROWS_AS(m.forward(Tensor::zeros({1, 1, 30, 32})), ShapeError);
  REQUIRE_THROWS_AS(m.forward(Tensor::zeros({1, 1, 32, 20})), ShapeError);
  REQUIRE(m.forward(Tensor::zeros({1, 1, 32, 40})).shape() == Shape{1, 1, 32, 40});
}

TEST_CASE("config validation rejects out-of-range settings") {
  UNetConfig c;
  c.depth = 0;
  REQUIRE_THROWS_AS(build_resunet(c, 0), ConfigError);
  c.depth = 7;
  REQUIRE_THROWS_AS(build_resunet(c, 0), ConfigError);
  c.depth = 3;
  c.kernel = 4;
  REQUIRE_THROWS_AS(build_resunet(c, 0), ConfigError);
  c.kernel = 17;
  REQUIRE_THROWS_AS(build_resunet(c, 0), ConfigError);
  c.kernel = 3;
  c.base_filters = 0;
  REQUIRE_THROWS_AS(build_resunet(c, 0), ConfigError);
}

TEST_CASE("build_from_config round-trips every family") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 2;
  c.kernel = 5;
  for (const Model& orig :
       {build_resunet(c, 3), build_unet(c, 3), build_segnet(c, 3)}) {
    const Model rebuilt = build_from_config(orig.family(), orig.config(), 3);
    REQUIRE(rebuilt.family() == orig.family());
    REQUIRE(rebuilt.params().size() == orig.params().size());
    for (size_t i = 0; i < orig.params().size(); ++i) {
      REQUIRE(rebuilt.params()[i].first == orig.params()[i].first);
      REQUIRE(rebuilt.params()[i].second.data() == orig.params()[i].second.data());
    }
  }
  REQUIRE_THROWS_AS(build_from_config("mlp", {}, 0), ConfigError);
  REQUIRE_THROWS_AS(build_from_config("resunet", {{"depth", "nope"}}, 0), ConfigError);
}

TEST_CASE("ensemble clones bases deeply and freezes them") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 1;
  EnsembleConfig ec;
  ec.base = c;
  ec.kernels = {3, 5};
  ec.meta_channels = 4;
  std::vector<Model> bases = build_ensemble_bases(ec, 20);
  Model ens = build_ensemble(bases, ec.meta_channels, 21);

  // cloned values match the originals...
  for (size_t i = 0; i < bases.size(); ++i)
    for (const auto& [name, t] : bases[i].params()) {
      const std::string ens_name = "base" + std::to_string(i) + "." + name;
      REQUIRE(ens.param(ens_name).data() == t.data());
      REQUIRE_FALSE(ens.param(ens_name).requires_grad());
    }
  for (const char* meta : {"meta.conv1.weight", "meta.conv2.weight", "meta.head.weight"})
    REQUIRE(ens.param(meta).requires_grad());

  // ...but live in distinct storage
  Tensor stolen = ens.param("base0.enc0.conv1.weight");
  const float before = bases[0].param("enc0.conv1.weight").data()[0];
  stolen.data()[0] = before + 42.0f;
  REQUIRE(bases[0].param("enc0.conv1.weight").data()[0] == before);

  // kernel sizes per member carried over
  REQUIRE(ens.param("base0.enc0.conv1.weight").dim(2) == 3);
  REQUIRE(ens.param("base1.enc0.conv1.weight").dim(2) == 5);
}

TEST_CASE("ensemble forward equals meta-conv over stacked base outputs") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 1;
  EnsembleConfig ec;
  ec.base = c;
  ec.kernels = {3, 5};
  ec.meta_channels = 4;
  std::vector<Model> bases = build_ensemble_bases(ec, 31);
  Model ens = build_ensemble(bases, ec.meta_channels, 32);
  std::mt19937 rng(33);
  const Tensor x = oracle::random_tensor(rng, {1, 1, 8, 8}, 0.0f, 1.0f);

  Tensor stack = concat_channels(bases[0].forward(x), bases[1].forward(x));
  Tensor h = relu(conv2d(stack, ens.param("meta.conv1.weight"),
                         ens.param("meta.conv1.bias")));
  h = relu(conv2d(h, ens.param("meta.conv2.weight"), ens.param("meta.conv2.bias")));
  Tensor want = sigmoid(conv2d(h, ens.param("meta.head.weight"),
                               ens.param("meta.head.bias")));
  REQUIRE(ens.forward(x).data() == want.data());
}

TEST_CASE("ensemble config echo rebuilds an identically shaped ensemble") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 1;
  EnsembleConfig ec;
  ec.base = c;
  ec.kernels = {3, 5, 7};
  ec.meta_channels = 4;
  Model ens = build_ensemble(build_ensemble_bases(ec, 0), ec.meta_channels, 1);
  const Model rebuilt = build_from_config("ensemble", ens.config(), 1);
  REQUIRE(rebuilt.params().size() == ens.params().size());
  for (size_t i = 0; i < ens.params().size(); ++i) {
    REQUIRE(rebuilt.params()[i].first == ens.params()[i].first);
    REQUIRE(rebuilt.params()[i].second.shape() == ens.params()[i].second.shape());
  }
}

TEST_CASE("set_trainable freezes by anchored pattern and rejects misses") {
  UNetConfig c;
  c.base_filters = 4;
  c.depth = 1;
  Model m = build_resunet(c, 0);
  const size_t all = m.trainable_names().size();
  REQUIRE(all == m.params().size());

  REQUIRE(m.set_trainable("enc0\\..*", false) == 6);  // conv1, conv2, proj
  REQUIRE(m.trainable_names().size() == all - 6);
  REQUIRE_FALSE(m.param("enc0.conv1.weight").requires_grad());
  REQUIRE(m.param("head.weight").requires_grad());

  // "enc0" alone must not match "enc0.conv1.weight" (anchored match)
  REQUIRE_THROWS_AS(m.set_trainable("enc0", true), ConfigError);
  REQUIRE_THROWS_AS(m.set_trainable("nonexistent.*", true), ConfigError);
  REQUIRE_THROWS_AS(m.set_trainable("enc0\\..*[", true), ConfigError);

  REQUIRE(m.set_trainable(".*", true) == static_cast<int>(all));
  REQUIRE(m.trainable_names().size() == all);
}

TEST_CASE("duplicate parameter registration is rejected") {
  Model m("toy", {});
  m.register_param("w", Tensor::zeros({2}));
  REQUIRE_THROWS_AS(m.register_param("w", Tensor::zeros({2})), ConfigError);
  REQUIRE_THROWS_AS(m.param("missing"), ConfigError);
}
