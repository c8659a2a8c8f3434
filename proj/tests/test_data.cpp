#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "medk2n/data/augment.hpp"
#include "medk2n/data/manifest.hpp"
#include "medk2n/data/phantom.hpp"
#include "medk2n/data/types.hpp"
#include "medk2n/io/image_io.hpp"

namespace fs = std::filesystem;
using namespace medk2n;
using namespace medk2n::data;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("medk2n_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("parse_mask known codes") {
  auto schema = default_schema();
  auto m = parse_mask("1011", schema);
  REQUIRE(m.bits == std::vector<bool>{true, false, true, true});
  REQUIRE(m.count() == 3);
  REQUIRE(m.render() == "1011");

  Schema one = {schema[0]};
  REQUIRE(parse_mask("1", one).count() == 1);

  REQUIRE_THROWS_AS(parse_mask("0000", schema), ContractError);
  REQUIRE_THROWS_AS(parse_mask("101", schema), SchemaError);
  REQUIRE_THROWS_AS(parse_mask("10x1", schema), ContractError);
}

TEST_CASE("parse_mask round trip over every nonzero code") {
  auto schema = default_schema();
  for (int code = 1; code < 16; ++code) {
    std::string s;
    for (int b = 3; b >= 0; --b) s += (code >> b) & 1 ? '1' : '0';
    REQUIRE(parse_mask(s, schema).render() == s);
  }
}

TEST_CASE("make_task picks lowest-index available key frame") {
  auto schema = default_schema();
  auto t = make_task(parse_mask("0110", schema), {0, 3});
  REQUIRE(t.inputs == std::set<int>{1, 2});
  REQUIRE(t.targets == std::set<int>{0, 3});
  REQUIRE(t.key_frame == 1);
  REQUIRE(t.k() == 2);
  REQUIRE(t.n() == 2);
  REQUIRE(make_task(parse_mask("0001", schema), {0}).key_frame == 3);
  REQUIRE_THROWS_AS(make_task(parse_mask("1111", schema), {}), ContractError);
}

TEST_CASE("phantom generation is deterministic and well-formed") {
  PhantomSpec spec;
  spec.seed = 11;
  spec.n_cases = 3;
  spec.image_size = 32;
  auto a = generate_phantom(spec);
  auto b = generate_phantom(spec);
  REQUIRE(a.size() == 3);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(a[static_cast<std::size_t>(i)].case_id == "case_" + std::to_string(i));
    for (int m = 0; m < 4; ++m)
      REQUIRE(a[static_cast<std::size_t>(i)].slices.at(m).px ==
              b[static_cast<std::size_t>(i)].slices.at(m).px);
    a[static_cast<std::size_t>(i)].validate(spec.schema);
  }
  spec.seed = 12;
  auto c = generate_phantom(spec);
  REQUIRE(a[0].slices.at(1).px != c[0].slices.at(1).px);
}

TEST_CASE("phantom at full resolution has distinct modalities") {
  PhantomSpec spec;
  spec.seed = 5;
  spec.n_cases = 1;
  spec.image_size = 256;
  auto sample = generate_phantom_case(spec, 0);
  for (int m = 0; m < 4; ++m) {
    const auto& img = sample.slices.at(m);
    REQUIRE(img.h == 256);
    REQUIRE(img.w == 256);
    for (float v : img.px) {
      REQUIRE(v >= 0.f);
      REQUIRE(v <= 1.f);
    }
  }
  // pairwise total-variation distance between 16-bin histograms must be
  // positive: the modalities are genuinely different contrasts
  auto hist = [](const Image2D& img) {
    std::vector<double> h(16, 0.0);
    for (float v : img.px) h[std::min(15, static_cast<int>(v * 16))] += 1.0;
    for (auto& x : h) x /= static_cast<double>(img.px.size());
    return h;
  };
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      auto hi = hist(sample.slices.at(i)), hj = hist(sample.slices.at(j));
      double tv = 0;
      for (int b = 0; b < 16; ++b) tv += 0.5 * std::abs(hi[static_cast<std::size_t>(b)] - hj[static_cast<std::size_t>(b)]);
      REQUIRE(tv > 0.0);
    }
}

TEST_CASE("manifest save, load, and partial masks") {
  auto dir = temp_dir("manifest");
  PhantomSpec spec;
  spec.seed = 3;
  spec.n_cases = 2;
  spec.image_size = 24;
  auto cases = generate_phantom(spec);

  DatasetManifest m;
  m.name = "unit";
  m.modalities = {"T1n", "T1c", "T2w", "T2f"};
  auto schema = m.schema();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    DatasetManifest::Case c;
    c.id = cases[ci].case_id;
    // second case drops the middle modalities: availability code 1001
    c.mask_code = ci == 0 ? "1111" : "1001";
    auto mask = parse_mask(c.mask_code, schema);
    for (std::size_t mi = 0; mi < schema.size(); ++mi) {
      if (!mask.bits[mi]) continue;
      auto rel = c.id + "_" + schema[mi].name + ".png";
      io::save_png16(dir / rel, cases[ci].slices.at(static_cast<int>(mi)));
      c.slice_paths[schema[mi].name] = rel;
    }
    m.cases.push_back(c);
  }
  save_manifest(dir / "manifest.json", m);

  auto loaded = load_manifest(dir / "manifest.json");
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded[0].slices.size() == 4);
  REQUIRE(loaded[1].slices.size() == 2);
  REQUIRE(loaded[1].slices.count(0) == 1);
  REQUIRE(loaded[1].slices.count(1) == 0);
  REQUIRE(loaded[1].slices.count(2) == 0);
  REQUIRE(loaded[1].slices.count(3) == 1);
  REQUIRE(loaded[1].mask.render() == "1001");
  // 16-bit PNG round trip is accurate to half a quantization step
  for (std::size_t i = 0; i < cases[0].slices.at(2).px.size(); ++i)
    REQUIRE(loaded[0].slices.at(2).px[i] ==
            Catch::Approx(cases[0].slices.at(2).px[i]).margin(1.0 / 65535.0));

  // a listed-but-absent file names the offending case
  fs::remove(dir / "case_1_T2f.png");
  try {
    load_manifest(dir / "manifest.json");
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    REQUIRE(std::string(e.what()).find("case_1") != std::string::npos);
  }
}

TEST_CASE("8-bit images map 255 to exactly 1.0") {
  std::string pgm = "P5\n2 1\n255\n";
  pgm += static_cast<char>(255);
  pgm += static_cast<char>(0);
  auto img = io::decode_pgm(pgm);
  REQUIRE(img.at(0, 0) == 1.0f);
  REQUIRE(img.at(0, 1) == 0.0f);
}

TEST_CASE("augmentation keeps modalities co-registered") {
  PhantomSpec spec;
  spec.seed = 9;
  spec.n_cases = 1;
  spec.image_size = 32;
  auto sample = generate_phantom_case(spec, 0);

  AugmentDecision d;
  d.flip = true;
  PairedSample flipped;
  flipped.case_id = sample.case_id;
  flipped.mask = sample.mask;
  for (const auto& [mod, img] : sample.slices) flipped.slices[mod] = apply_augment(img, d);
  // a pure flip is its own inverse and hits every modality identically
  for (const auto& [mod, img] : sample.slices)
    for (int r = 0; r < img.h; ++r)
      for (int c = 0; c < img.w; ++c)
        REQUIRE(flipped.slices.at(mod).at(r, img.w - 1 - c) ==
                Catch::Approx(img.at(r, c)).margin(1e-6));

  auto r1 = make_engine(4, 1);
  auto r2 = make_engine(4, 1);
  auto a1 = augment(sample, r1);
  auto a2 = augment(sample, r2);
  REQUIRE(a1.slices.at(0).px == a2.slices.at(0).px);
}

TEST_CASE("augmentation decision distributions") {
  auto rng = make_engine(123);
  int flips = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto d = sample_augment_decision(rng);
    flips += d.flip ? 1 : 0;
    REQUIRE(d.zoom >= 0.8);
    REQUIRE(d.zoom <= 1.2);
    REQUIRE(std::abs(d.brightness) <= 0.05);
    REQUIRE(d.contrast >= 0.95);
    REQUIRE(d.contrast <= 1.05);
  }
  double rate = static_cast<double>(flips) / n;
  REQUIRE(rate > 0.48);
  REQUIRE(rate < 0.52);
}
