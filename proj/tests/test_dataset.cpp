#include <doctest.h>

#include <fstream>
#include <set>

#include "helpers.hpp"
#include "sketch/dataset.hpp"
#include "sketch/error.hpp"
#include "sketch/image.hpp"

using namespace sketch;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

std::string issues_of(const IngestionError& e) {
  std::string all;
  for (const auto& i : e.issues()) all += i + "\n";
  return all;
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("prompt template rendering") {
    const PromptTemplate tmpl;
    CHECK(tmpl.slots() == std::vector<std::string>{"demographic", "physical attributes"});
    CHECK(render_prompt(tmpl, {{"demographic", "a male in his 40s"},
                               {"physical attributes", "a square jaw and thick eyebrows"}}) ==
          "The suspect is described as a male in his 40s with a square jaw and thick eyebrows.");
    CHECK(render_prompt(PromptTemplate("x"), {}) == "x");
    try {
      tmpl.render({});
      FAIL("missing slots must throw");
    } catch (const TemplateError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("demographic") != std::string::npos);
      CHECK(msg.find("physical attributes") != std::string::npos);
    }
    CHECK_THROWS_AS(PromptTemplate("broken {slot"), TemplateError);
  }

  TEST_CASE("manifest with three valid records keeps order") {
    test::TempDir dir("manifest");
    for (int i = 0; i < 3; ++i) write_pgm(dir / ("img" + std::to_string(i) + ".pgm"), test::random_image(64, 64, i));
    write_text(dir / "m.tsv",
               "# id\timage\tdescription\n"
               "b\timg0.pgm\tfirst one\n\n"
               "a\timg1.pgm\tsecond one\n"
               "c\t" + (dir / "img2.pgm").string() + "\tthird one\n");
    const auto pairs = load_manifest(dir / "m.tsv");
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].id == "b");
    CHECK(pairs[1].id == "a");
    CHECK(pairs[2].description == "third one");
    CHECK(pairs[1].image == test::random_image(64, 64, 1));
  }

  TEST_CASE("manifest errors are itemized") {
    test::TempDir dir("manifest_bad");
    write_pgm(dir / "ok.pgm", test::random_image(8, 8, 1));
    write_text(dir / "junk.pgm", "not an image");
    write_text(dir / "m.tsv",
               "e1\tok.pgm\t  \n"
               "e2\tmissing.pgm\tsomething\n"
               "e3\tjunk.pgm\tsomething\n"
               "e4\tok.pgm\tfine\n"
               "e4\tok.pgm\tduplicate\n"
               "e5\tonly-two-fields\n");
    try {
      load_manifest(dir / "m.tsv");
      FAIL("bad manifest must throw");
    } catch (const IngestionError& e) {
      const auto all = issues_of(e);
      CHECK(e.issues().size() >= 5);
      for (const char* id : {"e1", "e2", "e3", "e4", "e5"}) CHECK(all.find(id) != std::string::npos);
    }
    CHECK_THROWS_AS(load_manifest(dir / "absent.tsv"), IngestionError);
  }

  TEST_CASE("resize on load is nearest neighbour") {
    test::TempDir dir("resize");
    GrayImage small(2, 2, std::vector<std::uint8_t>{10, 20, 30, 40});
    write_pgm(dir / "s.pgm", small);
    write_text(dir / "m.tsv", "x\ts.pgm\tdesc\n");
    const auto pairs = load_manifest(dir / "m.tsv", 4);
    const GrayImage expected(4, 4, std::vector<std::uint8_t>{10, 10, 20, 20, 10, 10, 20, 20,
                                                             30, 30, 40, 40, 30, 30, 40, 40});
    CHECK(pairs[0].image == expected);
    CHECK(resize_nearest(small, 4, 4) == expected);
  }

  TEST_CASE("295 records load and split 236 / 59") {
    test::TempDir dir("big");
    const auto pairs = synth_fixture_sized(5, 295, 11, 16);
    const auto manifest = write_manifest(dir.path(), pairs);
    const auto loaded = load_manifest(manifest, 16);
    REQUIRE(loaded.size() == 295);
    for (std::size_t i = 0; i < loaded.size(); ++i) {
      CHECK(loaded[i].id == pairs[i].id);
      CHECK(loaded[i].image == pairs[i].image);
      CHECK(loaded[i].description == pairs[i].description);
    }
    const auto s = split(loaded, 0.8, 3);
    CHECK(s.train.size() == 236);
    CHECK(s.validation.size() == 59);
    std::set<std::string> ids;
    for (const auto* part : {&s.train, &s.validation})
      for (const auto& p : *part) ids.insert(p.id);
    CHECK(ids.size() == 295);
  }

  TEST_CASE("split rules") {
    const auto [tr, va] = split_indices(10, 0.8, 1);
    CHECK(tr.size() == 8);
    CHECK(va.size() == 2);
    CHECK(split_indices(10, 0.8, 1) == std::make_pair(tr, va));
    CHECK(split_indices(10, 0.8, 2) != std::make_pair(tr, va));
    std::set<std::size_t> all(tr.begin(), tr.end());
    all.insert(va.begin(), va.end());
    CHECK(all.size() == 10);
    CHECK_THROWS_AS(split(std::vector<SketchPair>(1), 0.8, 1), ValidationError);
    CHECK_THROWS_AS(split(synth_fixture(2, 2, 1, 8), 1.5, 1), ValidationError);
  }

  TEST_CASE("synthetic fixture shape, determinism and structure") {
    const auto f = synth_fixture(4, 8, 7);
    REQUIRE(f.size() == 32);
    std::set<int> clusters;
    std::set<std::string> descriptions;
    for (const auto& p : f) {
      clusters.insert(p.cluster);
      descriptions.insert(p.description);
      CHECK(p.image.width == 64);
      CHECK_FALSE(p.description.empty());
    }
    CHECK(clusters.size() == 4);
    CHECK(descriptions.size() == 32);
    CHECK(f == synth_fixture(4, 8, 7));
    CHECK_FALSE(f == synth_fixture(4, 8, 8));
    CHECK_THROWS_AS(synth_fixture(1, 8, 7), ValidationError);

    double intra = 0, inter = 0;
    std::size_t ni = 0, ne = 0;
    for (std::size_t i = 0; i < f.size(); ++i)
      for (std::size_t j = i + 1; j < f.size(); ++j) {
        const double c = pixel_correlation(f[i].image, f[j].image);
        if (f[i].cluster == f[j].cluster) intra += c, ++ni;
        else inter += c, ++ne;
      }
    CHECK(intra / ni > inter / ne);

    const auto sized = synth_fixture_sized(4, 59, 1007);
    CHECK(sized.size() == 59);
    std::vector<int> counts(4);
    for (const auto& p : sized) ++counts[p.cluster];
    CHECK(counts == std::vector<int>{15, 15, 15, 14});
  }

  TEST_CASE("PGM and base64 codecs") {
    const auto img = test::random_image(13, 7, 5);
    CHECK(decode_pgm(encode_pgm(img)) == img);
    const char with_comment[] = "P5\n# comment\n2 1\n255\n\x01\x02";
    CHECK(decode_pgm(std::string(with_comment, sizeof with_comment - 1)) ==
          GrayImage(2, 1, std::vector<std::uint8_t>{1, 2}));
    CHECK_THROWS_AS(decode_pgm(std::string("P6\n1 1\n255\n\x00\x00\x00", 14)), FormatError);
    CHECK_THROWS_AS(decode_pgm(std::string("P5\n4 4\n255\nabc")), FormatError);
    CHECK(base64_encode("hello") == "aGVsbG8=");
    CHECK(base64_decode("aGVsbG8=") == "hello");
    const std::string bytes = encode_pgm(img);
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
    CHECK_THROWS_AS(base64_decode("a$b="), FormatError);
    test::TempDir dir("pgm");
    write_pgm(dir / "x.pgm", img);
    CHECK(read_pgm(dir / "x.pgm") == img);
    CHECK_THROWS_AS(read_pgm(dir / "none.pgm"), IoError);
    CHECK_THROWS_AS(read_pgm(dir.path()), IoError);
  }
}
