#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "recipe.hpp"
#include "sketch/lora.hpp"

using namespace sketch;

namespace {

const TrainResult& trained() {
  static const TrainResult r = [] {
    auto run = test::fixture_run();
    return train(run.base, run.train, run.validation, run.tokenizer, run.config);
  }();
  return r;
}

const test::FixtureRun& data() {
  static const auto run = test::fixture_run();
  return run;
}

}  // namespace

TEST_SUITE("trained") {
  TEST_CASE("fixture training fits the training set and generalizes") {
    const auto& r = trained();
    const auto train_acc = evaluate_retrieval(r.model, data().tokenizer, data().train);
    CHECK(train_acc[0] == 1.0);
    REQUIRE(r.log.epochs.size() == 30);
    CHECK(r.log.epochs.back().accuracy[3] >= 0.90);
    CHECK(r.log.epochs[19].loss < r.log.epochs[0].loss);
    CHECK(test::decreasing_steps(r.log) >= 24);  // 80% of 29 steps, rounded up
    CHECK(base_weight_hash(r.model) == base_weight_hash(data().base));
  }

  TEST_CASE("same-cluster descriptions embed closer than other clusters") {
    const auto& r = trained();
    const auto& pairs = data().validation;
    const auto e = embed_pairs(r.model, data().tokenizer, pairs);
    double intra = 0, inter = 0;
    std::size_t ni = 0, ne = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      for (std::size_t j = i + 1; j < pairs.size(); ++j) {
        double c = 0;
        for (std::size_t k = 0; k < e.text.cols(); ++k) c += double(e.text(i, k)) * e.text(j, k);
        if (pairs[i].cluster == pairs[j].cluster) intra += c, ++ni;
        else inter += c, ++ne;
      }
    CHECK(intra / ni > inter / ne);
  }

  TEST_CASE("paired image ranks first among eight candidates") {
    const auto& r = trained();
    const auto& pairs = data().train;
    const auto e = embed_pairs(r.model, data().tokenizer, pairs);
    // One candidate from each cluster twice over: the pair plus seven distractors.
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      std::vector<std::size_t> cands{q};
      for (std::size_t j = 1; cands.size() < 8; ++j) cands.push_back((q + 3 * j) % pairs.size());
      std::size_t best = cands[0];
      double best_score = -2;
      for (auto c : cands) {
        double s = 0;
        for (std::size_t k = 0; k < e.text.cols(); ++k) s += double(e.text(q, k)) * e.image(c, k);
        if (s > best_score) best_score = s, best = c;
      }
      CHECK(best == q);
    }
  }

  TEST_CASE("adapting both targets fits at least as well as either alone") {
    auto run = test::fixture_run();
    const auto ab = run_ablation(run.base, run.train, run.validation, run.tokenizer, run.config);
    REQUIRE(ab.rows.size() == 3);
    CHECK(ab.rows[2].parameters == ab.rows[0].parameters + ab.rows[1].parameters);
    CHECK(ab.rows[2].final_loss <= ab.rows[0].final_loss + 0.05);
    CHECK(ab.rows[2].final_loss <= ab.rows[1].final_loss + 0.05);
  }

  TEST_CASE("end-to-end contrastive gradients match finite differences") {
    const auto pairs = synth_fixture(2, 2, 7, 16);
    std::vector<std::string> corpus;
    for (const auto& p : pairs) corpus.push_back(p.description);
    const auto tok = Tokenizer::build(corpus);
    auto cfg = test::tiny_config(3);
    cfg.vocab_size = tok.size();
    EncoderModel m = inject(EncoderModel(cfg), LoraConfig{});
    std::uint64_t seed = 5;
    for (auto* p : m.attention_projections())
      if (p->adapter) p->adapter->b.value = test::random_tensor(p->adapter->b.value.shape(), seed++, 0.05f);

    std::vector<std::vector<TokenId>> toks;
    for (const auto& p : pairs) toks.push_back(tok.encode(p.description));
    auto loss = [&](bool backward) {
      ImageFeaturesCache cc;
      const Tensor ctx = m.canvas_context(&cc);
      std::vector<TextCache> tcs(pairs.size());
      std::vector<ImageCache> ics(pairs.size());
      std::vector<Embedding> te, ie;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        te.push_back({m.embed_text(toks[i], ctx, &tcs[i]), Modality::text});
        ie.push_back({m.embed_image(pairs[i].image, &ics[i]), Modality::image});
      }
      const auto r = contrastive_loss(stack(te), stack(ie), 10.0f);
      if (backward) {
        Tensor dctx(ctx.shape());
        for (std::size_t b = 0; b < pairs.size(); ++b) {
          const auto tr = r.d_text.row(b), ir = r.d_image.row(b);
          add_inplace(dctx, m.backward_text(Tensor({r.d_text.cols()}, {tr.begin(), tr.end()}), tcs[b]));
          m.backward_image(Tensor({r.d_image.cols()}, {ir.begin(), ir.end()}), ics[b]);
        }
        m.backward_image_features(dctx, cc);
      }
      return r.loss;
    };

    const auto params = m.parameters();
    for (auto* p : params) p->zero_grad();
    loss(true);
    std::size_t checked = 0;
    for (auto* p : params) {
      if (!p->trainable) continue;
      double max_num = 0, max_diff = 0;
      for (std::size_t j = 0; j < std::min<std::size_t>(p->value.size(), 4); ++j) {
        const std::size_t k = (j * 7919) % p->value.size();
        const float old = p->value[k];
        p->value[k] = old + 1e-2f;
        const double lp = loss(false);
        p->value[k] = old - 1e-2f;
        const double lm = loss(false);
        p->value[k] = old;
        const double num = (lp - lm) / 2e-2;
        max_num = std::max(max_num, std::fabs(num));
        max_diff = std::max(max_diff, std::fabs(num - p->grad[k]));
      }
      INFO(p->name);
      CHECK(max_diff <= 0.05 * max_num + 2e-5);
      ++checked;
    }
    CHECK(checked == adapter_count(m) * 2 + 1);
  }
}
