#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "crackseg/ops.hpp"

namespace crackseg {

/// One finite-difference comparison. The error is norm-scaled per input
/// tensor: worst absolute analytic-vs-numeric discrepancy divided by the
/// gradient's infinity norm, maximised over inputs. Per-coordinate ratios
/// are useless in 32-bit arithmetic because forward rounding noise divided
/// by 2*eps swamps coordinates whose true gradient happens to be tiny.
/// `skipped` counts coordinates whose +/-eps evaluations crossed a ReLU
/// kink or flipped a pool argmax; those have no well-defined derivative.
struct GradCheckResult {
  std::string name;
  float max_rel_err = 0.0f;
  int coords = 0;
  int skipped = 0;
};

/// A differentiable fixture. `f` rebuilds the graph from `inputs` on every
/// call. If the function is only piecewise smooth, `guard` must be refilled
/// by `f` with a trace of the active region (ReLU signs, pool argmaxes);
/// the checker skips coordinates where the trace differs between the two
/// perturbed evaluations. Leave `guard` null for smooth functions.
/// Piecewise-linear fixtures keep the default step: central differences
/// have no truncation term for them, so a larger step only reduces noise.
struct GradCheckCase {
  std::string name;
  std::function<Tensor(const std::vector<Tensor>&)> f;
  std::vector<Tensor> inputs;
  std::shared_ptr<std::vector<int64_t>> guard;
  float eps = 1e-2f;
};

/// Central differences against reverse-mode gradients. The (possibly
/// non-scalar) output is projected onto a fixed random direction so every
/// output coordinate contributes to the scalar being differentiated.
inline GradCheckResult grad_check(const GradCheckCase& c, unsigned seed) {
  Tensor out0 = c.f(c.inputs);

  std::mt19937 rng(seed ^ 0x9e3779b9u);
  std::uniform_real_distribution<float> pd(-1.0f, 1.0f);
  std::vector<float> proj(static_cast<size_t>(out0.numel()));
  for (auto& v : proj) v = pd(rng);

  for (const Tensor& t : c.inputs) Tensor(t).zero_grad();
  out0.backward(proj);

  std::vector<std::vector<float>> analytic(c.inputs.size());
  for (size_t k = 0; k < c.inputs.size(); ++k)
    if (c.inputs[k].requires_grad()) analytic[k] = Tensor(c.inputs[k]).grad();

  auto project = [&proj](const Tensor& t) {
    double acc = 0.0;
    const auto& d = t.data();
    for (size_t i = 0; i < d.size(); ++i)
      acc += static_cast<double>(d[i]) * static_cast<double>(proj[i]);
    return acc;
  };

  GradCheckResult res;
  res.name = c.name;
  const double eps = static_cast<double>(c.eps);
  for (size_t k = 0; k < c.inputs.size(); ++k) {
    if (!c.inputs[k].requires_grad()) continue;
    auto& data = Tensor(c.inputs[k]).data();
    float max_diff = 0.0f;
    float scale = 1e-6f;
    for (size_t j = 0; j < data.size(); ++j) {
      const float saved = data[j];
      data[j] = saved + c.eps;
      const double up = project(c.f(c.inputs));
      std::vector<int64_t> region_up;
      if (c.guard) region_up = *c.guard;
      data[j] = saved - c.eps;
      const double dn = project(c.f(c.inputs));
      data[j] = saved;
      if (c.guard && region_up != *c.guard) {
        res.skipped++;
        continue;
      }
      const float numeric = static_cast<float>((up - dn) / (2.0 * eps));
      const float a = analytic[k][j];
      max_diff = std::max(max_diff, std::fabs(a - numeric));
      scale = std::max(scale, std::max(std::fabs(a), std::fabs(numeric)));
      res.coords++;
    }
    res.max_rel_err = std::max(res.max_rel_err, max_diff / scale);
  }
  return res;
}

namespace detail {

inline Tensor uniform_tensor(Shape shape, std::mt19937& rng, float lo, float hi,
                             bool requires_grad = true) {
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = d(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Distinct shuffled multiples of 1/8: every 2x2 window has a unique max with
// a gap far larger than any finite-difference perturbation.
inline Tensor lattice_tensor(Shape shape, std::mt19937& rng, bool requires_grad = true) {
  std::vector<float> v(static_cast<size_t>(numel_of(shape)));
  for (size_t i = 0; i < v.size(); ++i) v[i] = 0.125f * static_cast<float>(i);
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng() % i]);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

inline void record_signs(const Tensor& t, std::vector<int64_t>& guard) {
  for (float v : t.data()) guard.push_back(v > 0.0f ? 1 : 0);
}

}  // namespace detail

/// Fixtures for every differentiable op plus the composite residual block.
/// Deterministic in `seed`; sized to keep a full sweep well under a second.
inline std::vector<GradCheckCase> standard_gradcheck_cases(unsigned seed) {
  std::mt19937 rng(seed);
  using detail::uniform_tensor;
  std::vector<GradCheckCase> cases;

  {
    GradCheckCase c;
    c.name = "conv2d_same";
    c.inputs = {uniform_tensor({2, 3, 6, 6}, rng, -1.0f, 1.0f),
                uniform_tensor({4, 3, 3, 3}, rng, -0.5f, 0.5f),
                uniform_tensor({4}, rng, -0.2f, 0.2f)};
    c.f = [](const std::vector<Tensor>& in) {
      return conv2d(in[0], in[1], in[2], 1, Padding::same());
    };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "conv2d_stride2";
    c.inputs = {uniform_tensor({1, 2, 8, 8}, rng, -1.0f, 1.0f),
                uniform_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f),
                uniform_tensor({3}, rng, -0.2f, 0.2f)};
    c.f = [](const std::vector<Tensor>& in) {
      return conv2d(in[0], in[1], in[2], 2, Padding(1));
    };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "conv2d_transpose";
    c.inputs = {uniform_tensor({1, 3, 5, 5}, rng, -1.0f, 1.0f),
                uniform_tensor({3, 2, 2, 2}, rng, -0.5f, 0.5f),
                uniform_tensor({2}, rng, -0.2f, 0.2f)};
    c.f = [](const std::vector<Tensor>& in) {
      return conv2d_transpose(in[0], in[1], in[2], 2);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "maxpool2d";
    c.inputs = {detail::lattice_tensor({1, 2, 6, 6}, rng)};
    c.guard = std::make_shared<std::vector<int64_t>>();
    auto guard = c.guard;
    c.f = [guard](const std::vector<Tensor>& in) {
      PoolResult r = maxpool2d(in[0]);
      *guard = r.indices->flat;
      return r.output;
    };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "max_unpool2d";
    c.inputs = {detail::lattice_tensor({1, 2, 6, 6}, rng)};
    c.guard = std::make_shared<std::vector<int64_t>>();
    auto guard = c.guard;
    c.f = [guard](const std::vector<Tensor>& in) {
      PoolResult r = maxpool2d(in[0]);
      *guard = r.indices->flat;
      return max_unpool2d(r.output, r.indices, in[0].dim(2), in[0].dim(3));
    };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "relu";
    c.inputs = {uniform_tensor({2, 3, 5, 5}, rng, -1.0f, 1.0f)};
    c.guard = std::make_shared<std::vector<int64_t>>();
    auto guard = c.guard;
    c.f = [guard](const std::vector<Tensor>& in) {
      guard->clear();
      detail::record_signs(in[0], *guard);
      return relu(in[0]);
    };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "sigmoid";
    c.inputs = {uniform_tensor({2, 2, 4, 4}, rng, -3.0f, 3.0f)};
    c.f = [](const std::vector<Tensor>& in) { return sigmoid(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "concat_channels";
    c.inputs = {uniform_tensor({2, 2, 4, 4}, rng, -1.0f, 1.0f),
                uniform_tensor({2, 3, 4, 4}, rng, -1.0f, 1.0f)};
    c.f = [](const std::vector<Tensor>& in) { return concat_channels(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "add";
    c.inputs = {uniform_tensor({2, 3, 4, 4}, rng, -1.0f, 1.0f),
                uniform_tensor({2, 3, 4, 4}, rng, -1.0f, 1.0f)};
    c.f = [](const std::vector<Tensor>& in) { return add(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "bce_loss";
    c.inputs = {uniform_tensor({1, 1, 6, 6}, rng, 0.05f, 0.95f),
                uniform_tensor({1, 1, 6, 6}, rng, 0.0f, 1.0f, false)};
    c.eps = 1e-3f;  // the log terms curve hard near the clamp boundary
    c.f = [](const std::vector<Tensor>& in) { return bce_loss(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "sum";
    c.inputs = {uniform_tensor({2, 3, 4, 4}, rng, -1.0f, 1.0f)};
    c.f = [](const std::vector<Tensor>& in) { return sum(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    GradCheckCase c;
    c.name = "residual_block";
    c.inputs = {uniform_tensor({1, 3, 8, 8}, rng, -1.0f, 1.0f),
                uniform_tensor({5, 3, 3, 3}, rng, -0.3f, 0.3f),
                uniform_tensor({5}, rng, -0.1f, 0.1f),
                uniform_tensor({5, 5, 3, 3}, rng, -0.3f, 0.3f),
                uniform_tensor({5}, rng, -0.1f, 0.1f),
                uniform_tensor({5, 3, 1, 1}, rng, -0.5f, 0.5f),
                uniform_tensor({5}, rng, -0.1f, 0.1f)};
    c.guard = std::make_shared<std::vector<int64_t>>();
    c.eps = 3e-3f;  // smaller step keeps most coordinates inside one linear region
    auto guard = c.guard;
    c.f = [guard](const std::vector<Tensor>& in) {
      guard->clear();
      Tensor pre1 = conv2d(in[0], in[1], in[2]);
      detail::record_signs(pre1, *guard);
      Tensor body = conv2d(relu(pre1), in[3], in[4]);
      Tensor shortcut = conv2d(in[0], in[5], in[6]);
      Tensor pre2 = add(body, shortcut);
      detail::record_signs(pre2, *guard);
      return relu(pre2);
    };
    cases.push_back(std::move(c));
  }
  return cases;
}

/// Runs the standard sweep for one seed.
inline std::vector<GradCheckResult> run_standard_gradchecks(unsigned seed) {
  std::vector<GradCheckResult> out;
  for (const GradCheckCase& c : standard_gradcheck_cases(seed))
    out.push_back(grad_check(c, seed));
  return out;
}

}  // namespace crackseg
