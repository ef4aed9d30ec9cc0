// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "fewvlm/core/checkpoint.hpp"
#include "fewvlm/core/optim.hpp"
#include "fewvlm/core/parameters.hpp"
#include "fewvlm/core/rng.hpp"
#include "fewvlm/core/tensor.hpp"
#include "support/fd_oracle.hpp"

using namespace fewvlm;
using namespace fewvlm::testing;

TEST_CASE("softmax of equal logits is uniform") {
  Tensor s = softmax(Tensor::from({3}, {0, 0, 0}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax survives huge logits") {
  Tensor s = softmax(Tensor::from({3}, {1000.0, 1000.0, -1000.0}));
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(2) == 0.0);
  Tensor l = log_softmax(Tensor::from({2}, {800.0, 0.0}));
  CHECK(std::isfinite(l.at(1)));
  CHECK(l.at(1) == doctest::Approx(-800.0));
}

TEST_CASE("identity matmul") {
  Rng rng(3);
  Tensor a = random_tensor(rng, {3, 5}, false);
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor out = matmul(eye, a);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(out.at(i) == a.at(i));
}

TEST_CASE("layer norm of 1 2 3") {
  Tensor y = layer_norm(Tensor::from({3}, {1, 2, 3}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
  CHECK(y.at(0) == doctest::Approx(-1.2247).epsilon(1e-3));
  CHECK(y.at(1) == doctest::Approx(0.0));
  CHECK(y.at(2) == doctest::Approx(1.2247).epsilon(1e-3));
}

TEST_CASE("shape errors name the op and shapes") {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)add(a, Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS((void)reshape(a, {4}), ShapeError);
  CHECK_THROWS_AS((void)slice(a, 1, 2, 2), ShapeError);
}

TEST_CASE("gradient of sum is all ones") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Graph g;
  g.backward(sum(x));
  for (double v : x.grad()) CHECK(v == 1.0);
}

TEST_CASE("gradient of x times x at 3 is 6") {
  Tensor x = Tensor::scalar(3.0, true);
  Graph g;
  g.backward(mul(x, x));
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("grads accumulate across uses") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Graph g;
  g.backward(sum(add(scale(x, 2.0), x)));
  CHECK(x.grad()[0] == 3.0);
  CHECK(x.grad()[1] == 3.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Graph g;
  Tensor y = scale(x, 2.0);
  CHECK_THROWS(g.backward(y));
}

TEST_CASE("backward visits nodes in reverse insertion order") {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  Graph g;
  Tensor y = tanh(matmul(x, x));
  Tensor loss = sum(exp(y));
  g.backward(loss);
  const auto& log = g.visit_log();
  REQUIRE(log.size() == g.size());
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i] == g.size() - 1 - i);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (const auto& in : g.node(i).inputs)
      if (in->graph) CHECK(in->node < static_cast<std::int64_t>(i));
}

TEST_CASE("no graph nodes without grad-requiring inputs") {
  Graph g;
  Tensor a = Tensor::from({2}, {1, 2});
  (void)exp(a);
  CHECK(g.size() == 0);
  Tensor b = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard ng;
    (void)exp(b);
  }
  CHECK(g.size() == 0);
  (void)exp(b);
  CHECK(g.size() == 1);
}

TEST_CASE("finite-difference gradients for every op kind") {
  for (OpKind kind : kAllOps) {
    Rng rng(derive_seed(11, static_cast<std::uint64_t>(kind)));
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      FdCase c = make_fd_case(kind, rng);
      worst = std::max(worst, fd_max_error(c));
    }
    INFO(op_name(kind));
    CHECK(worst < kFdTolerance);
  }
}

TEST_CASE("backward is linear") {
  Rng rng(5);
  Tensor x = random_tensor(rng, {3, 4});
  auto grads = [&](double a, double b) {
    x.zero_grad();
    Graph g;
    Tensor f = sum(tanh(x));
    Tensor h = sum(mul(x, x));
    g.backward(add(scale(f, a), scale(h, b)));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto gf = grads(1.0, 0.0), gh = grads(0.0, 1.0), gc = grads(2.5, -0.75);
  for (std::size_t i = 0; i < gc.size(); ++i) CHECK(gc[i] == doctest::Approx(2.5 * gf[i] - 0.75 * gh[i]).epsilon(1e-12));
}

TEST_CASE("outputs stay finite") {
  Tensor big = Tensor::from({1, 3}, {1e3, -1e3, 0.0});
  for (double v : exp(scale(big, 1.0)).data()) CHECK(!std::isnan(v));
  for (double v : softmax(big).data()) CHECK(std::isfinite(v));
  for (double v : cosine_similarity(Tensor::zeros({1, 3}), big).data()) CHECK(std::isfinite(v));
}

namespace {

ParameterStore scalar_store(double w, bool trainable = true) {
  ParameterStore s;
  s.add("w", Tensor::scalar(w), ParamGroup::kLmBlock, trainable);
  return s;
}

}  // namespace

TEST_CASE("first AdamW step moves by lr times sign") {
  ParameterStore s = scalar_store(1.0);
  s.at("w").value.impl()->ensure_grad()[0] = 2.0;
  OptimizerState st(s, {0.1, 0.9, 0.999, 1e-8, 0.0});
  adamw_step(s, st);
  CHECK(s.at("w").value.item() == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(st.step == 1);
  CHECK_FALSE(s.at("w").value.has_grad());
}

TEST_CASE("global norm clipping") {
  ParameterStore s;
  s.add("a", Tensor::scalar(0.0), ParamGroup::kLmBlock, true);
  s.add("b", Tensor::scalar(0.0), ParamGroup::kLmBlock, true);
  s.at("a").value.impl()->ensure_grad()[0] = 3.0;
  s.at("b").value.impl()->ensure_grad()[0] = 4.0;
  CHECK(clip_grad_norm(s, 1.0) == doctest::Approx(5.0));
  CHECK(s.at("a").value.grad()[0] == doctest::Approx(0.6));
  CHECK(s.at("b").value.grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("clipping within the bound leaves grads bit-identical") {
  ParameterStore s;
  s.add("a", Tensor::from({2}, {0.0, 0.0}), ParamGroup::kLmBlock, true);
  auto& g = s.at("a").value.impl()->ensure_grad();
  g = {0.1234567, -0.3};
  const auto before = g;
  clip_grad_norm(s, 1.0);
  CHECK(std::memcmp(before.data(), s.at("a").value.grad().data(), 2 * sizeof(double)) == 0);
}

TEST_CASE("frozen parameters are untouched by the optimizer") {
  ParameterStore s;
  s.add("t", Tensor::scalar(1.0), ParamGroup::kLmBlock, true);
  s.add("f", Tensor::scalar(1.0), ParamGroup::kVisionEncoder, false);
  s.at("t").value.impl()->ensure_grad()[0] = 1.0;
  s.at("f").value.impl()->ensure_grad()[0] = 5.0;
  OptimizerState st(s);
  adamw_step(s, st, 1.0);
  CHECK(s.at("f").value.item() == 1.0);
  CHECK(s.at("t").value.item() != 1.0);
}

TEST_CASE("optimizer errors on missing or non-finite grads") {
  ParameterStore s = scalar_store(1.0);
  OptimizerState st(s);
  CHECK_THROWS_AS(adamw_step(s, st), OptimizerError);
  s.at("w").value.impl()->ensure_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adamw_step(s, st), OptimizerError);
}

TEST_CASE("weight decay applies to matrices only") {
  ParameterStore s;
  s.add("m", Tensor::from({1, 1}, {1.0}), ParamGroup::kLmBlock, true);
  s.add("v", Tensor::from({1}, {1.0}), ParamGroup::kLmBlock, true);
  s.at("m").value.impl()->ensure_grad()[0] = 0.0;
  s.at("v").value.impl()->ensure_grad()[0] = 0.0;
  OptimizerState st(s, {0.1, 0.9, 0.999, 1e-8, 0.5});
  adamw_step(s, st);
  CHECK(s.at("m").value.item() == doctest::Approx(1.0 - 0.1 * 0.5));
  CHECK(s.at("v").value.item() == 1.0);
}

TEST_CASE("step decay schedule") {
  CHECK(lr_schedule(7e-6, 0) == doctest::Approx(7e-6));
  CHECK(lr_schedule(7e-6, 4) == doctest::Approx(7e-7));
  CHECK(lr_schedule(1e-4, 11) == doctest::Approx(1e-6));
  CHECK(lr_schedule(1e-4, 3) == doctest::Approx(1e-4));
}

TEST_CASE("same seed gives identical trajectories") {
  auto run = [] {
    Rng rng(42);
    ParameterStore s;
    Tensor w = s.add("w", random_tensor(rng, {3, 3}, false), ParamGroup::kLmBlock, true);
    OptimizerState st(s, {0.01, 0.9, 0.999, 1e-8, 0.01});
    Tensor x = random_tensor(rng, {2, 3}, false);
    for (int i = 0; i < 5; ++i) {
      Graph g;
      g.backward(sum(tanh(matmul(x, w))));
      adamw_step(s, st, 1.0);
    }
    return s.snapshot();
  };
  CHECK(run() == run());
}

TEST_CASE("rng helpers") {
  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) CHECK(a() == b());
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(tag_of("stage1") != tag_of("stage3"));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(2);
  ParameterStore s;
  s.add("a.weight", random_tensor(rng, {3, 4}, false), ParamGroup::kLmBlock, true);
  s.add("b", random_tensor(rng, {5}, false), ParamGroup::kVisionEncoder, false);
  s.add("c", Tensor::from({1}, {-0.0}), ParamGroup::kLayerNorm, true);
  const auto path = std::filesystem::temp_directory_path() / "fewvlm_tensor_ckpt.bin";
  save_checkpoint(path, s);
  ParameterStore t;
  t.add("a.weight", Tensor::zeros({3, 4}), ParamGroup::kLmBlock, false);
  t.add("b", Tensor::zeros({5}), ParamGroup::kVisionEncoder, true);
  t.add("c", Tensor::zeros({1}), ParamGroup::kLayerNorm, false);
  load_checkpoint_into(path, t);
  CHECK(t.fingerprint() == s.fingerprint());
  CHECK(t.at("a.weight").trainable);
  CHECK_FALSE(t.at("b").trainable);
  CHECK(std::signbit(t.at("c").value.item()));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint layout") {
  CheckpointRecord r{"ab", {2}, true, {1.0, -2.0}};
  const auto bytes = encode_checkpoint({r});
  REQUIRE(bytes.size() == 8 + 4 + 2 + 2 + 1 + 4 + 1 + 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "VLMCKPT1");
  CHECK(bytes[8] == 1);
  CHECK(bytes[12] == 2);
  CHECK(bytes[14] == 'a');
  CHECK(bytes[16] == 1);   // rank
  CHECK(bytes[17] == 2);   // extent
  CHECK(bytes[21] == 1);   // trainable
  double v;
  std::memcpy(&v, bytes.data() + 30, 8);
  CHECK(v == -2.0);
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 1);
  CHECK(back[0].name == "ab");
  CHECK(back[0].values == r.values);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
}
