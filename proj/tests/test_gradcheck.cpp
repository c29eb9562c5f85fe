#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "crackseg/gradcheck.hpp"
#include "crackseg/ops.hpp"

using namespace crackseg;

TEST_CASE("standard gradient checks pass over 10 seeds") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    for (const GradCheckResult& r : run_standard_gradchecks(seed)) {
      INFO(r.name << " seed " << seed << " rel err " << r.max_rel_err << " ("
                  << r.coords << " coords, " << r.skipped << " skipped)");
      CHECK(r.max_rel_err < 1e-2f);
      REQUIRE(r.coords > 0);  // the kink guard must leave something to check
    }
  }
}

TEST_CASE("every op appears in the standard case list") {
  const auto cases = standard_gradcheck_cases(0);
  std::vector<std::string> names;
  for (const auto& c : cases) names.push_back(c.name);
  for (const char* want :
       {"conv2d_same", "conv2d_stride2", "conv2d_transpose", "maxpool2d",
        "max_unpool2d", "relu", "sigmoid", "concat_channels", "add", "bce_loss",
        "sum", "residual_block"}) {
    CAPTURE(want);
    REQUIRE(std::find(names.begin(), names.end(), want) != names.end());
  }
}

namespace {

// A deliberately wrong backward: forward is y = 2x but the recorded
// gradient claims dy/dx = 3. The checker has to flag it.
Tensor broken_double(const Tensor& x) {
  std::vector<float> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = 2.0f * x.data()[i];
  auto backward = [x](TensorNode& self) {
    if (!x.requires_grad()) return;
    float* gin = Tensor(x).grad().data();
    for (size_t i = 0; i < self.grad.size(); ++i) gin[i] += 3.0f * self.grad[i];
  };
  return make_op("broken_double", x.shape(), std::move(out), {x}, std::move(backward));
}

}  // namespace

TEST_CASE("a corrupted backward pass is detected") {
  std::mt19937 rng(5);
  Tensor x = detail::uniform_tensor({1, 2, 4, 4}, rng, -1.0f, 1.0f);
  GradCheckCase c;
  c.name = "broken_double";
  c.inputs = {x};
  c.f = [](const std::vector<Tensor>& in) { return sum(broken_double(in[0])); };
  const GradCheckResult r = grad_check(c, 99);
  REQUIRE(r.max_rel_err > 0.1f);  // claimed 3 vs true 2
}

TEST_CASE("an exact linear op passes with near-zero error") {
  std::mt19937 rng(6);
  Tensor x = detail::uniform_tensor({1, 2, 4, 4}, rng, -1.0f, 1.0f);
  GradCheckCase c;
  c.name = "add_self";
  c.inputs = {x};
  c.f = [](const std::vector<Tensor>& in) { return sum(add(in[0], in[0])); };
  const GradCheckResult r = grad_check(c, 100);
  REQUIRE(r.max_rel_err < 1e-3f);
}
