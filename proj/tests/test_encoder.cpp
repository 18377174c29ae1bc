#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "sketch/dataset.hpp"
#include "sketch/encoder.hpp"
#include "sketch/error.hpp"
#include "sketch/tokenizer.hpp"

using namespace sketch;

namespace {

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

double norm(const Tensor& t) {
  double s = 0;
  for (float v : t.values()) s += double(v) * v;
  return std::sqrt(s);
}

Embedding unit(std::vector<float> v, Modality m = Modality::text) {
  const std::size_t n = v.size();
  return {Tensor({n}, std::move(v)), m};
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("tokenizer: short sentence keeps every token") {
    const std::string s = words(10);
    const std::vector<std::string> corpus{s};
    const auto tok = Tokenizer::build(corpus);
    const auto ids = tok.encode(s);
    CHECK(ids.size() == 12);
    CHECK(ids.front() == Tokenizer::kBos);
    CHECK(ids.back() == Tokenizer::kEos);
    CHECK(tok.decode(ids) == s);
    CHECK(tok.encode(s) == ids);
  }

  TEST_CASE("tokenizer: long input truncates to 77 ids with the prefix preserved") {
    const std::string s = words(200);
    const std::vector<std::string> corpus{s};
    const auto tok = Tokenizer::build(corpus);
    const auto ids = tok.encode(s);
    CHECK(ids.size() == 77);
    CHECK(ids.back() == Tokenizer::kEos);
    CHECK(tok.decode(ids) == words(75));
    CHECK(tok.truncate(s) == words(75));
    CHECK(tok.untruncated_length(s) == 202);
  }

  TEST_CASE("tokenizer: byte fallback, empty text and vocabulary cap") {
    const Tokenizer bytes;
    const auto ids = bytes.encode("Hi there");
    CHECK(bytes.decode(ids) == "hi there");
    CHECK_THROWS_AS(bytes.encode("   "), ValidationError);
    CHECK_THROWS_AS(bytes.decode(std::vector<TokenId>{9999}), ValidationError);

    std::vector<std::string> corpus;
    for (int i = 0; i < 3000; ++i) corpus.push_back("tok" + std::to_string(i));
    const auto capped = Tokenizer::build(corpus);
    CHECK(capped.size() == Tokenizer::kMaxVocab);
    CHECK(Tokenizer::from_words(capped.words()) == capped);
    CHECK(capped.decode(capped.encode("tok2999 tok1")) == "tok2999 tok1");
  }

  TEST_CASE("tokenizer property: random text never exceeds 77 ids") {
    std::mt19937_64 rng(42);
    const std::vector<std::string> corpus{"the suspect has a scar", "short hair and a beard"};
    const auto tok = Tokenizer::build(corpus);
    for (int trial = 0; trial < 300; ++trial) {
      std::string s;
      const auto len = 1 + rng() % 600;
      for (std::size_t i = 0; i < len; ++i) s += static_cast<char>(32 + rng() % 95);
      if (s.find_first_not_of(' ') == std::string::npos) s += 'x';
      const auto ids = tok.encode(s);
      CHECK(ids.size() <= Tokenizer::kMaxLength);
      CHECK(ids.back() == Tokenizer::kEos);
      const auto again = tok.encode(tok.truncate(s));
      CHECK(again == ids);
    }
  }

  TEST_CASE("embeddings are unit norm and deterministic") {
    const EncoderModel m{EncoderConfig{}};
    const Tokenizer tok;
    for (std::uint64_t s = 0; s < 4; ++s) {
      const auto img = test::random_image(64, 64, s);
      const auto ie = encode_image(m, img);
      CHECK(norm(ie.values) == doctest::Approx(1.0).epsilon(1e-5));
      CHECK(ie.modality == Modality::image);
      CHECK(encode_image(m, img).values == ie.values);
      const auto te = encode_text(m, tok.encode("prompt number " + std::to_string(s)));
      CHECK(norm(te.values) == doctest::Approx(1.0).epsilon(1e-5));
      CHECK(te.values.size() == m.config().embed_dim);
    }
  }

  TEST_CASE("encoder input errors") {
    const EncoderModel m(test::tiny_config());
    CHECK_THROWS_AS(encode_image(m, GrayImage(20, 16)), DimensionError);
    CHECK_THROWS_AS(encode_text(m, std::vector<TokenId>{1, 99999, 2}), ValidationError);
    CHECK_THROWS_AS(encode_text(m, std::vector<TokenId>{}), ValidationError);
    EncoderConfig bad;
    bad.patch_size = 7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("batch encoding matches single calls") {
    const EncoderModel m(test::tiny_config(2));
    std::vector<GrayImage> imgs;
    std::vector<std::vector<TokenId>> toks;
    const Tokenizer tok;
    for (std::uint64_t s = 0; s < 5; ++s) {
      imgs.push_back(test::random_image(16, 16, s));
      toks.push_back(tok.encode("item " + std::to_string(s * 7)));
    }
    const auto bi = encode_images(m, imgs);
    const auto bt = encode_texts(m, toks);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(max_abs_diff(bi[i].values, encode_image(m, imgs[i]).values) <= 1e-6f);
      CHECK(max_abs_diff(bt[i].values, encode_text(m, toks[i]).values) <= 1e-6f);
    }
  }

  TEST_CASE("combine") {
    const auto v = unit({0.6f, 0.8f, 0.0f});
    const auto c = combine(v, unit({0.6f, 0.8f, 0.0f}, Modality::image));
    CHECK(max_abs_diff(c.values, v.values) <= 1e-7f);
    CHECK(c.modality == Modality::combined);

    const auto o = combine(unit({1, 0, 0}), unit({0, 1, 0}, Modality::image));
    CHECK(o.values[0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-6));
    CHECK(o.values[1] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-6));
    CHECK(o.values[2] == 0.0f);

    CHECK_THROWS_AS(combine(unit({0, 1, 0}), unit({0, -1, 0}, Modality::image)),
                    DegenerateCombinationError);
    CHECK_THROWS_AS(combine(unit({1, 0}), unit({1, 0, 0})), DimensionError);

    const auto w = combine(unit({1, 0}), unit({0, 1}), 0.75f);
    CHECK(w.values[0] / w.values[1] == doctest::Approx(3.0));
  }

  TEST_CASE("project_conditioning: zero, identity and size checks") {
    EncoderModel m{EncoderConfig{}};
    REQUIRE(m.config().embed_dim == m.config().conditioning_dim);
    const Tokenizer tok;
    const auto emb = combine(encode_text(m, tok.encode("a face")),
                             encode_image(m, test::random_image(64, 64, 1)));
    m.conditioning_projection.weight.value.fill(0.0f);
    if (m.conditioning_projection.bias) m.conditioning_projection.bias->value.fill(0.0f);
    const auto zero = project_conditioning(m, emb, 32);
    for (float v : zero.values()) CHECK(v == 0.0f);

    for (std::size_t i = 0; i < 32; ++i) m.conditioning_projection.weight.value(i, i) = 1.0f;
    CHECK(project_conditioning(m, emb, 32) == emb.values);
    CHECK_THROWS_AS(project_conditioning(m, emb, 16), ConfigError);

    for (std::size_t dim : {4u, 8u, 48u}) {
      auto cfg = test::tiny_config();
      cfg.conditioning_dim = dim;
      const EncoderModel t(cfg);
      const auto e = combine(encode_text(t, tok.encode("x")), encode_image(t, test::random_image(16, 16, dim)));
      CHECK(project_conditioning(t, e, dim).size() == dim);
    }
  }

  TEST_CASE("clip_score") {
    const auto a = unit({0.6f, 0.8f});
    CHECK(clip_score(a, a) == doctest::Approx(1.0));
    CHECK(clip_score(unit({1, 0}), unit({0, 1})) == 0.0f);
    CHECK(clip_score(a, unit({-0.6f, -0.8f})) == doctest::Approx(-1.0));
    const auto b = unit({0.8f, 0.6f});
    CHECK(clip_score(a, b) == clip_score(b, a));
  }

  TEST_CASE("rendered prompts always tokenize") {
    const PromptTemplate tmpl;
    const Tokenizer tok;
    for (const auto& p : synth_fixture(4, 8, 3))
      CHECK(tok.encode(p.description).size() <= Tokenizer::kMaxLength);
    CHECK_NOTHROW(tok.encode(tmpl.render({{"demographic", "a man"}, {"physical attributes", "a hat"}})));
  }
}
