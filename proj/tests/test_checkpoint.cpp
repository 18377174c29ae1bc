#include <doctest.h>

#include <cstring>

#include "helpers.hpp"
#include "sketch/checkpoint.hpp"
#include "sketch/error.hpp"
#include "sketch/lora.hpp"

using namespace sketch;

namespace {

Checkpoint sample(bool with_adapters) {
  const std::vector<std::string> corpus{"a man with a beard", "a woman with short hair"};
  Checkpoint c;
  c.tokenizer = Tokenizer::build(corpus);
  auto cfg = test::tiny_config(11);
  cfg.vocab_size = c.tokenizer.size();
  c.model = EncoderModel(cfg);
  if (with_adapters) {
    LoraConfig lc;
    lc.targets = LoraTargets::cross_attention;
    lc.rank = 2;
    lc.alpha = 3.5f;
    lc.projections = kProjQ | kProjV;
    c.model = inject(std::move(c.model), lc);
    std::uint64_t seed = 5;
    for (auto* p : c.model.attention_projections())
      if (p->adapter) p->adapter->b.value = test::random_tensor(p->adapter->b.value.shape(), seed++);
    c.lora = lc;
  }
  return c;
}

void check_same(const Checkpoint& a, const Checkpoint& b) {
  CHECK(a.model.config() == b.model.config());
  CHECK(a.tokenizer == b.tokenizer);
  CHECK(a.lora == b.lora);
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->trainable == pb[i]->trainable);
    CHECK(pa[i]->value.shape() == pb[i]->value.shape());
    CHECK(std::memcmp(pa[i]->value.data(), pb[i]->value.data(), pa[i]->value.size() * sizeof(float)) == 0);
  }
  const auto aa = a.model.attention_projections(), ab = b.model.attention_projections();
  for (std::size_t i = 0; i < aa.size(); ++i) {
    CHECK(aa[i]->adapter.has_value() == ab[i]->adapter.has_value());
    if (aa[i]->adapter && ab[i]->adapter) {
      CHECK(aa[i]->adapter->rank == ab[i]->adapter->rank);
      CHECK(aa[i]->adapter->alpha == ab[i]->adapter->alpha);
    }
  }
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bitwise, with and without adapters") {
    for (bool adapters : {false, true}) {
      const auto c = sample(adapters);
      const auto bytes = serialize_checkpoint(c);
      CHECK(bytes.substr(0, 4) == "SKCH");
      const auto back = parse_checkpoint(bytes);
      check_same(c, back);
      CHECK(serialize_checkpoint(back) == bytes);
    }
  }

  TEST_CASE("file round trip") {
    test::TempDir dir("ckpt");
    const auto c = sample(true);
    save_checkpoint(dir / "m.skch", c);
    check_same(c, load_checkpoint(dir / "m.skch"));
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.skch"), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir.path()), IoError);
  }

  TEST_CASE("corrupt inputs are rejected") {
    const auto bytes = serialize_checkpoint(sample(false));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 2;
    CHECK_THROWS_AS(parse_checkpoint(bad_version), FormatError);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), FormatError);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, 10)), FormatError);
    auto bad_header = bytes;
    bad_header[17] = '#';
    CHECK_THROWS_AS(parse_checkpoint(bad_header), FormatError);
  }

  TEST_CASE("encoder pairs") {
    const auto fresh = make_encoder_pair(std::nullopt, 3);
    CHECK(adapter_count(fresh.frozen) == 0);
    CHECK(adapter_count(fresh.adapted) == 20);
    CHECK(fresh.frozen.config().seed == 3);

    const auto trained = make_encoder_pair(sample(true), 0);
    CHECK(adapter_count(trained.frozen) == 0);
    CHECK(adapter_count(trained.adapted) == 2);  // one cross block, q and v
    CHECK(base_weight_hash(trained.frozen) == base_weight_hash(trained.adapted));

    const auto plain = make_encoder_pair(sample(false), 0);
    CHECK(adapter_count(plain.adapted) == 12);  // tiny config: 2 self blocks + 1 cross block
    CHECK(plain.tokenizer == sample(false).tokenizer);
  }
}
