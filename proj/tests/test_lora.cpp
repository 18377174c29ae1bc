#include <doctest.h>

#include "helpers.hpp"
#include "sketch/dataset.hpp"
#include "sketch/error.hpp"
#include "sketch/lora.hpp"
#include "sketch/trainer.hpp"

using namespace sketch;

namespace {

void randomize_adapters(EncoderModel& m, std::uint64_t seed) {
  for (auto* p : m.attention_projections())
    if (p->adapter) p->adapter->b.value = test::random_tensor(p->adapter->b.value.shape(), seed++, 0.05f);
}

std::vector<TokenId> some_tokens(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> t{Tokenizer::kBos};
  for (int i = 0; i < 6; ++i) t.push_back(Tokenizer::kFirstByte + rng() % 256);
  t.push_back(Tokenizer::kEos);
  return t;
}

Tensor text_out(const EncoderModel& m, std::uint64_t seed) {
  return m.embed_text(some_tokens(seed), m.canvas_context());
}

Tensor image_out(const EncoderModel& m, std::uint64_t seed) {
  const auto n = m.config().image_size;
  return m.embed_image(test::random_image(n, n, seed));
}

std::vector<Tensor> base_weights(const EncoderModel& m) {
  std::vector<Tensor> out;
  for (auto* p : m.parameters())
    if (p->name.find("lora") == std::string::npos) out.push_back(p->value);
  return out;
}

LoraConfig with_targets(LoraTargets t) {
  LoraConfig c;
  c.targets = t;
  return c;
}

}  // namespace

TEST_SUITE("lora") {
  TEST_CASE("adapter counts over the default architecture") {
    const EncoderModel base{EncoderConfig{}};
    const auto self = inject(base, with_targets(LoraTargets::self_attention));
    const auto cross = inject(base, with_targets(LoraTargets::cross_attention));
    const auto both = inject(base, with_targets(LoraTargets::both));
    CHECK(adapter_count(self) == 16);
    CHECK(adapter_count(cross) == 4);
    CHECK(adapter_count(both) == 20);
    CHECK(adapter_parameter_count(both) ==
          adapter_parameter_count(self) + adapter_parameter_count(cross));

    std::size_t expected = 0;
    for (const auto* p : both.attention_projections())
      if (p->adapter) expected += p->adapter->rank * (p->in_dim() + p->out_dim());
    CHECK(adapter_parameter_count(both) == expected);
    CHECK(expected == 20 * 4 * (64 + 64));

    const auto names_self = lora_target_names(base, with_targets(LoraTargets::self_attention));
    const auto names_cross = lora_target_names(base, with_targets(LoraTargets::cross_attention));
    auto names_both = lora_target_names(base, with_targets(LoraTargets::both));
    std::vector<std::string> united = names_self;
    united.insert(united.end(), names_cross.begin(), names_cross.end());
    std::sort(united.begin(), united.end());
    std::sort(names_both.begin(), names_both.end());
    CHECK(united == names_both);
  }

  TEST_CASE("only adapters and the logit scale stay trainable") {
    auto m = inject(EncoderModel(test::tiny_config()), LoraConfig{});
    for (const auto* p : m.parameters()) {
      const bool adapter = p->name.find("lora_") != std::string::npos;
      if (adapter) CHECK(p->trainable);
      else if (p->name != m.log_logit_scale.name) CHECK_FALSE(p->trainable);
    }
    CHECK(trainable_parameter_count(m) == adapter_parameter_count(m) + 1);
    LoraConfig q_only;
    q_only.projections = kProjQ;
    const auto mq = inject(EncoderModel(test::tiny_config()), q_only);
    CHECK(adapter_count(mq) == 3);
  }

  TEST_CASE("fresh adapters leave every output unchanged") {
    for (auto t : {LoraTargets::self_attention, LoraTargets::cross_attention, LoraTargets::both}) {
      const EncoderModel base(test::tiny_config(3));
      const auto adapted = inject(base, with_targets(t));
      for (std::uint64_t s = 0; s < 5; ++s) {
        CHECK(max_abs_diff(text_out(base, s), text_out(adapted, s)) <= 1e-6f);
        CHECK(max_abs_diff(image_out(base, s), image_out(adapted, s)) <= 1e-6f);
      }
    }
  }

  TEST_CASE("injection errors") {
    const EncoderModel base(test::tiny_config());
    const auto adapted = inject(base, LoraConfig{});
    CHECK_THROWS_AS(inject(adapted, LoraConfig{}), ConflictError);
    CHECK_NOTHROW(inject(inject(base, with_targets(LoraTargets::self_attention)),
                         with_targets(LoraTargets::cross_attention)));
    LoraConfig too_big;
    too_big.rank = 17;
    CHECK_THROWS_AS(inject(base, too_big), ConfigError);
    LoraConfig zero;
    zero.rank = 0;
    CHECK_THROWS_AS(zero.validate(), ConfigError);
    CHECK_THROWS_AS(parse_lora_targets("all"), ConfigError);
    CHECK(parse_projections("qv") == (kProjQ | kProjV));
    CHECK(projections_to_string(kProjAll) == "qkvo");
    CHECK_THROWS_AS(merge(base), StateError);
  }

  TEST_CASE("merging zero adapters leaves weights bitwise unchanged") {
    EncoderModel base(test::tiny_config(4));
    auto merged = merge(inject(base, LoraConfig{})).first;
    CHECK(adapter_count(merged) == 0);
    CHECK(base_weights(base) == base_weights(merged));
  }

  TEST_CASE("merge equivalence and round trip") {
    auto adapted = inject(EncoderModel(test::tiny_config(5)), LoraConfig{});
    randomize_adapters(adapted, 100);
    auto [merged, record] = merge(adapted);
    CHECK(record.adapters.size() == adapter_count(adapted));
    for (std::uint64_t s = 0; s < 10; ++s) {
      CHECK(max_abs_diff(text_out(adapted, s), text_out(merged, s)) <= 1e-5f);
      CHECK(max_abs_diff(image_out(adapted, s), image_out(merged, s)) <= 1e-5f);
    }
    auto restored = unmerge(merged, record);
    CHECK(adapter_count(restored) == adapter_count(adapted));
    const auto w0 = base_weights(adapted), w1 = base_weights(restored);
    REQUIRE(w0.size() == w1.size());
    for (std::size_t i = 0; i < w0.size(); ++i) CHECK(max_abs_diff(w0[i], w1[i]) <= 1e-5f);
    for (std::uint64_t s = 0; s < 10; ++s) CHECK(max_abs_diff(text_out(adapted, s), text_out(restored, s)) <= 1e-5f);

    CHECK_THROWS_AS(unmerge(restored, record), StateError);
  }

  TEST_CASE("unmerge with zero adapters changes nothing; shape mismatch is rejected") {
    EncoderModel base(test::tiny_config(6));
    auto [merged, record] = merge(inject(base, LoraConfig{}));
    const auto restored = unmerge(merged, record);
    CHECK(base_weights(strip_adapters(restored)) == base_weights(base));

    auto bad = record;
    bad.adapters.front().a.value = Tensor({4, 3});
    CHECK_THROWS_AS(unmerge(merged, bad), DimensionError);
  }

  TEST_CASE("strip_adapters and set_base_trainable") {
    auto m = inject(EncoderModel(test::tiny_config(7)), LoraConfig{});
    const auto h = base_weight_hash(m);
    auto stripped = strip_adapters(m);
    CHECK(adapter_count(stripped) == 0);
    CHECK(base_weight_hash(stripped) == h);
    set_base_trainable(m, true);
    CHECK(m.token_embedding.trainable);
    set_base_trainable(m, false);
    CHECK_FALSE(m.token_embedding.trainable);
  }

  TEST_CASE("training leaves base weights bit-identical") {
    const auto data = synth_fixture(2, 4, 3, 16);
    std::vector<std::string> corpus;
    for (const auto& p : data) corpus.push_back(p.description);
    const auto tok = Tokenizer::build(corpus);
    auto cfg_enc = test::tiny_config(8);
    cfg_enc.vocab_size = tok.size();
    const auto adapted = inject(EncoderModel(cfg_enc), LoraConfig{});
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.adam.learning_rate = 1e-2f;
    const auto r = train(adapted, data, data, tok, cfg);
    CHECK(base_weight_hash(r.model) == base_weight_hash(adapted));
    bool changed = false;
    auto before = adapted;
    const auto pa = before.parameters();
    auto after = r.model;
    const auto pb = after.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
      if (pa[i]->name.find("lora_B") != std::string::npos) changed |= !(pa[i]->value == pb[i]->value);
    CHECK(changed);
  }
}
