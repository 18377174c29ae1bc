#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sketch/error.hpp"
#include "sketch/gradcheck.hpp"
#include "sketch/nn.hpp"

using namespace sketch;

namespace {

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0f;
  return t;
}

void set_identity(LinearLayer& l) {
  l.weight.value = identity(l.out_dim());
  if (l.bias) l.bias->value.fill(0.0f);
}

// Nonzero adapter so the LoRA branch contributes to the loss.
LoraAdapter make_adapter(const LinearLayer& l, std::size_t rank, std::uint64_t seed) {
  LoraAdapter a;
  a.target_name = l.name();
  a.rank = rank;
  a.alpha = 2.0f * rank;
  a.a = Parameter(l.name() + ".lora_A", test::random_tensor({rank, l.in_dim()}, seed, 0.3f));
  a.b = Parameter(l.name() + ".lora_B", test::random_tensor({l.out_dim(), rank}, seed + 1, 0.3f));
  return a;
}

void freeze_base(LinearLayer& l) {
  l.weight.set_trainable(false);
  if (l.bias) l.bias->set_trainable(false);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("linear with zero weight returns the bias") {
    LinearLayer l("lin", Tensor({1, 3}), Tensor::vector({7}));
    const Tensor y = l.forward(test::random_tensor({4, 3}, 2));
    REQUIRE(y.shape() == std::vector<std::size_t>{4, 1});
    for (std::size_t i = 0; i < 4; ++i) CHECK(y(i, 0) == 7.0f);
    CHECK_THROWS_AS(l.forward(Tensor({2, 4})), DimensionError);
  }

  TEST_CASE("dL/dW of sum(W x) is x broadcast over rows") {
    Rng rng(3);
    LinearLayer l("lin", 4, 3, false, rng);
    const auto x = Tensor::matrix(1, 4, {0.5f, -1.0f, 2.0f, 3.0f});
    LinearCache cache;
    l.forward(x, cache);
    l.weight.zero_grad();
    l.backward(Tensor({1, 3}, 1.0f), cache);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) CHECK(l.weight.grad(r, c) == x(0, c));
  }

  TEST_CASE("backward before forward is a state error") {
    Rng rng(1);
    LinearLayer l("lin", 3, 2, true, rng);
    CHECK_THROWS_AS(l.backward(Tensor({1, 2}), LinearCache{}), StateError);
    LayerNorm ln("ln", 3);
    CHECK_THROWS_AS(ln.backward(Tensor({1, 3}), LayerNormCache{}), StateError);
    AttentionBlock att("att", 4, 2, AttentionMode::self, rng);
    CHECK_THROWS_AS(att.backward(Tensor({1, 4}), AttentionCache{}), StateError);
  }

  TEST_CASE("frozen parameters receive no gradient") {
    Rng rng(1);
    LinearLayer l("lin", 3, 2, true, rng);
    freeze_base(l);
    LinearCache cache;
    l.forward(test::random_tensor({2, 3}, 4), cache);
    l.backward(Tensor({2, 2}, 1.0f), cache);
    CHECK(l.weight.grad.empty());
    CHECK(l.bias->grad.empty());
  }

  TEST_CASE("single-key attention returns V through identity projections") {
    Rng rng(1);
    AttentionBlock att("att", 2, 1, AttentionMode::self, rng);
    for (auto* p : att.projections()) set_identity(*p);
    const auto q = Tensor::matrix(1, 2, {1, 0});
    const Tensor y = att.forward(q, q);
    CHECK(y(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(y(0, 1) == doctest::Approx(0.0).epsilon(1e-7));
  }

  TEST_CASE("equal values give the value for any query") {
    Rng rng(2);
    AttentionBlock att("att", 2, 1, AttentionMode::cross, rng);
    set_identity(att.v_proj);
    set_identity(att.o_proj);
    const auto kv = Tensor::matrix(2, 2, {2, 2, 2, 2});
    const Tensor y = att.forward(test::random_tensor({3, 2}, 5), kv);
    for (float v : y.values()) CHECK(v == doctest::Approx(2.0f).epsilon(1e-6));
    CHECK_THROWS_AS(att.forward(Tensor({1, 2}), Tensor()), Error);
  }

  TEST_CASE("two-token attention matches the scalar softmax formula") {
    Rng rng(7);
    const std::size_t d = 4, heads = 2, dh = d / heads;
    AttentionBlock att("att", d, heads, AttentionMode::self, rng);
    const auto x = test::random_tensor({2, d}, 11);
    AttentionCache cache;
    const Tensor y = att.forward(x, x, cache);

    auto project = [&](const LinearLayer& l) {
      std::vector<std::vector<double>> out(2, std::vector<double>(d));
      for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t o = 0; o < d; ++o) {
          double s = l.bias ? l.bias->value[o] : 0.0;
          for (std::size_t i = 0; i < d; ++i) s += double(l.weight.value(o, i)) * x(t, i);
          out[t][o] = s;
        }
      return out;
    };
    const auto q = project(att.q_proj), k = project(att.k_proj), v = project(att.v_proj);
    std::vector<std::vector<double>> concat(2, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < 2; ++t) {
        double logits[2];
        for (std::size_t u = 0; u < 2; ++u) {
          double s = 0;
          for (std::size_t j = 0; j < dh; ++j) s += q[t][h * dh + j] * k[u][h * dh + j];
          logits[u] = s / std::sqrt(double(dh));
        }
        const double z = std::exp(logits[0]) + std::exp(logits[1]);
        for (std::size_t j = 0; j < dh; ++j)
          concat[t][h * dh + j] =
              (std::exp(logits[0]) * v[0][h * dh + j] + std::exp(logits[1]) * v[1][h * dh + j]) / z;
      }
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t o = 0; o < d; ++o) {
        double s = att.o_proj.bias ? att.o_proj.bias->value[o] : 0.0;
        for (std::size_t i = 0; i < d; ++i) s += double(att.o_proj.weight.value(o, i)) * concat[t][i];
        CHECK(y(t, o) == doctest::Approx(s).epsilon(1e-5));
      }
  }

  TEST_CASE("attention probability rows sum to one") {
    Rng rng(4);
    AttentionBlock att("att", 8, 2, AttentionMode::cross, rng);
    AttentionCache cache;
    att.forward(test::random_tensor({5, 8}, 1, 3.0f), test::random_tensor({7, 8}, 2, 3.0f), cache);
    for (std::size_t r = 0; r < cache.probs.rows(); ++r) {
      double s = 0;
      for (float p : cache.probs.row(r)) s += p;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  TEST_CASE("softmax and gelu reference values") {
    auto t = Tensor::matrix(1, 3, {1000, 1000, 1000});
    softmax_rows(t);
    for (float v : t.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-6));
    CHECK(gelu(0.0f) == 0.0f);
    const double x = 1.3;
    const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    CHECK(gelu(float(x)) == doctest::Approx(ref).epsilon(1e-6));
  }

  TEST_CASE("forward passes are deterministic") {
    Rng r1(5), r2(5);
    EncoderBlock a("b", 8, 2, 16, AttentionMode::self, r1);
    EncoderBlock b("b", 8, 2, 16, AttentionMode::self, r2);
    const auto x = test::random_tensor({3, 8}, 6);
    CHECK(a.forward(x) == b.forward(x));
    CHECK(a.forward(x) == a.forward(x));
  }

  TEST_CASE("gradient check: linear 4x3") {
    Rng rng(1);
    LinearLayer l("lin", 4, 3, true, rng);
    const auto r = check_linear(l, test::random_tensor({2, 4}, 2));
    INFO(r.to_string());
    CHECK(r.passed());
    CHECK(r.max_error() < 1e-3);
  }

  TEST_CASE("gradient check: layer norm and gelu") {
    LayerNorm ln("ln", 6);
    ln.gamma.value = test::random_tensor({6}, 3);
    ln.beta.value = test::random_tensor({6}, 4);
    const auto r1 = check_layer_norm(ln, test::random_tensor({3, 6}, 5));
    INFO(r1.to_string());
    CHECK(r1.passed());
    const auto r2 = check_gelu(test::random_tensor({4, 5}, 6, 2.0f));
    INFO(r2.to_string());
    CHECK(r2.passed());
  }

  TEST_CASE("gradient check: attention d=8, 2 heads, 3 tokens") {
    for (auto mode : {AttentionMode::self, AttentionMode::cross}) {
      Rng rng(8);
      AttentionBlock att("att", 8, 2, mode, rng);
      const auto q = test::random_tensor({3, 8}, 9);
      const auto kv = mode == AttentionMode::self ? q : test::random_tensor({4, 8}, 10);
      const auto r = check_attention(att, q, kv);
      INFO(r.to_string());
      CHECK(r.passed());
    }
  }

  TEST_CASE("gradient check: encoder blocks") {
    Rng rng(12);
    EncoderBlock self_block("self", 8, 2, 16, AttentionMode::self, rng);
    const auto x = test::random_tensor({3, 8}, 13);
    const auto r1 = check_encoder_block(self_block, x, nullptr);
    INFO(r1.to_string());
    CHECK(r1.passed());
    EncoderBlock cross_block("cross", 8, 2, 16, AttentionMode::cross, rng);
    const auto ctx = test::random_tensor({4, 8}, 14);
    const auto r2 = check_encoder_block(cross_block, x, &ctx);
    INFO(r2.to_string());
    CHECK(r2.passed());
  }

  TEST_CASE("gradient check: LoRA adapters with a frozen base") {
    Rng rng(15);
    LinearLayer l("proj", 6, 5, true, rng);
    l.adapter = make_adapter(l, 2, 16);
    freeze_base(l);
    const auto r = check_linear(l, test::random_tensor({3, 6}, 17));
    INFO(r.to_string());
    CHECK(r.passed());
    std::size_t skipped = 0;
    for (const auto& e : r.entries) skipped += e.skipped_frozen;
    CHECK(skipped == 2);
    CHECK(r.to_string().find("skipped (frozen)") != std::string::npos);

    AttentionBlock att("att", 8, 2, AttentionMode::cross, rng);
    std::uint64_t seed = 20;
    for (auto* p : att.projections()) {
      p->adapter = make_adapter(*p, 2, seed += 2);
      freeze_base(*p);
    }
    const auto r2 = check_attention(att, test::random_tensor({3, 8}, 21), test::random_tensor({2, 8}, 22));
    INFO(r2.to_string());
    CHECK(r2.passed());
  }

  TEST_CASE("a parameter the loss ignores gets a zero gradient") {
    Rng rng(1);
    LinearLayer l("lin", 3, 2, true, rng);
    Parameter unused("unused", test::random_tensor({4}, 2));
    std::vector<Parameter*> params;
    l.collect_parameters(params);
    params.push_back(&unused);
    const auto x = test::random_tensor({2, 3}, 3);
    const ProbeLoss probe({2, 2}, 4);
    const auto r = gradient_check(params, [&](bool bw) {
      LinearCache cache;
      const Tensor y = l.forward(x, cache);
      if (bw) l.backward(probe.gradient(), cache);
      return probe.value(y);
    });
    for (float g : unused.grad.values()) CHECK(g == 0.0f);
    CHECK(r.entries.back().max_rel_error == 0.0);
    CHECK(r.passed());
  }

  TEST_CASE("gradient check rejects non-finite losses and large fragments") {
    Parameter p("p", Tensor({2}, 1.0f));
    std::vector<Parameter*> params{&p};
    CHECK_THROWS_AS(gradient_check(params, [](bool) { return std::nan(""); }), NumericError);
    Parameter big("big", Tensor({10001}));
    std::vector<Parameter*> bigs{&big};
    CHECK_THROWS_AS(gradient_check(bigs, [](bool) { return 0.0; }), ValidationError);
  }
}
