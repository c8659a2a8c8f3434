#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "medk2n/data/phantom.hpp"
#include "medk2n/eval/matrix.hpp"
#include "medk2n/eval/metrics.hpp"

using namespace medk2n;
using namespace medk2n::eval;

namespace {

data::Image2D constant_image(int s, float v) {
  data::Image2D img(s, s);
  img.px.assign(img.px.size(), v);
  return img;
}

// Exact two-sided signed-rank p-value by enumerating all 2^n sign vectors
// (valid for tie-free, zero-free differences).
double exact_wilcoxon_p(const std::vector<double>& diffs) {
  std::size_t n = diffs.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(diffs[a]) < std::abs(diffs[b]);
  });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[idx[i]] = static_cast<double>(i + 1);
  double w_obs = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (diffs[i] > 0) w_obs += rank[i];
  double mu = static_cast<double>(n) * (n + 1) / 4.0;
  double dev = std::abs(w_obs - mu);
  long hits = 0, total = 1L << n;
  for (long mask = 0; mask < total; ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1L << i)) w += rank[i];
    if (std::abs(w - mu) >= dev - 1e-12) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("psnr known values") {
  auto gt = constant_image(16, 0.4f);
  REQUIRE(psnr(gt, gt) == 99.0);

  // uniform +0.1 error: mse 0.01, psnr exactly 20 dB
  auto pred = gt;
  for (auto& p : pred.px) p += 0.1f;
  REQUIRE(psnr(pred, gt) == Catch::Approx(20.0).margin(1e-3));

  // pixel-loop oracle on random images
  auto rng = make_engine(3);
  std::uniform_real_distribution<float> uni(0.f, 1.f);
  data::Image2D a(8, 8), b(8, 8);
  for (auto& p : a.px) p = uni(rng);
  for (auto& p : b.px) p = uni(rng);
  double s = 0;
  for (std::size_t i = 0; i < a.px.size(); ++i) {
    double d = static_cast<double>(a.px[i]) - b.px[i];
    s += d * d;
  }
  s /= static_cast<double>(a.px.size());
  REQUIRE(psnr(a, b) == Catch::Approx(10.0 * std::log10(1.0 / s)).margin(1e-9));
  data::Image2D wrong(4, 4);
  REQUIRE_THROWS_AS(psnr(a, wrong), data::ContractError);
}

TEST_CASE("ssim known values") {
  auto rng = make_engine(9);
  std::uniform_real_distribution<float> uni(0.f, 1.f);
  data::Image2D img(16, 16);
  for (auto& p : img.px) p = uni(rng);
  REQUIRE(ssim(img, img) == Catch::Approx(1.0).margin(1e-9));

  // constant images have zero variance: closed form from the two means
  auto a = constant_image(16, 0.5f), b = constant_image(16, 0.25f);
  const double c1 = 1e-4, c2 = 9e-4;
  double want = ((2 * 0.5 * 0.25 + c1) * c2) / ((0.25 + 0.0625 + c1) * c2);
  REQUIRE(ssim(a, b) == Catch::Approx(want).margin(1e-6));

  // bounded on arbitrary inputs
  data::Image2D inv = img;
  for (auto& p : inv.px) p = 1.f - p;
  double v = ssim(inv, img);
  REQUIRE(v >= -1.0);
  REQUIRE(v <= 1.0);

  data::Image2D tiny(8, 8);
  REQUIRE_THROWS_AS(ssim(tiny, tiny), data::ContractError);
}

TEST_CASE("gaussian window normalizes") {
  auto k = gaussian_window(11, 1.5);
  double s = 0;
  for (double v : k) s += v;
  REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(k[5 * 11 + 5] == *std::max_element(k.begin(), k.end()));
}

TEST_CASE("wilcoxon degenerate and symmetry properties") {
  std::vector<double> a{1, 2, 3, 4, 5, 6};
  REQUIRE(wilcoxon_signed_rank(a, a) == 1.0);
  std::vector<double> b{1.5, 1.8, 3.3, 3.6, 5.4, 6.3};
  // two-sided: swapping the samples negates every difference but leaves p
  REQUIRE(wilcoxon_signed_rank(a, b) == Catch::Approx(wilcoxon_signed_rank(b, a)).margin(1e-15));
  REQUIRE_THROWS_AS(wilcoxon_signed_rank(a, std::vector<double>{1, 2}), data::ContractError);
  REQUIRE_THROWS_AS(wilcoxon_signed_rank({1, 2}, {3, 4}), data::ContractError);
}

TEST_CASE("wilcoxon approximation tracks the exact permutation test") {
  std::vector<double> diffs{0.5, -1.2, 2.3, 0.8, -0.4, 1.9, -2.7, 0.3, 1.1, -0.6, 2.0, 0.7};
  std::vector<double> a(diffs.size(), 0.0), b(diffs.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) b[i] = -diffs[i];
  double approx = wilcoxon_signed_rank(a, b);
  double exact = exact_wilcoxon_p(diffs);
  REQUIRE(approx == Catch::Approx(exact).margin(0.05));
  REQUIRE(approx > 0.0);
  REQUIRE(approx < 1.0);
}

TEST_CASE("run_matrix combinatorics and summaries") {
  ModelConfig mc;
  mc.image_size = 32;
  mc.embed_dim = 8;
  mc.decode_dim = 4;
  mc.k_mem = 2;
  mc.k_head = 2;
  mc.cmim_dim = 8;
  mc.text_dim = 8;
  Model<float> model(mc);

  data::PhantomSpec spec;
  spec.seed = 17;
  spec.n_cases = 2;
  spec.image_size = 32;
  auto dataset = data::generate_phantom(spec);

  auto res = run_matrix(model, dataset, {"1100", "1000"}, {0, 1, 2, 3});
  // "1000": targets 1,2,3; "1100": targets 2,3 -> 5 combos x 2 cases
  REQUIRE(res.rows.size() == 10);
  REQUIRE(res.summaries.size() == 5);
  // ascending source count: the K=1 mask rows come first
  REQUIRE(res.rows.front().mask == "1000");
  REQUIRE(res.rows.back().mask == "1100");
  for (const auto& s : res.summaries) REQUIRE(s.n == 2);

  // summary means equal a brute-force recomputation from the rows
  for (const auto& s : res.summaries) {
    double ps = 0, ss = 0;
    int n = 0;
    for (const auto& r : res.rows)
      if (r.mask == s.mask && r.target == s.target) {
        ps += r.psnr;
        ss += r.ssim;
        ++n;
      }
    REQUIRE(n == s.n);
    REQUIRE(s.mean_psnr == Catch::Approx(ps / n).margin(1e-9));
    REQUIRE(s.mean_ssim == Catch::Approx(ss / n).margin(1e-9));
  }

  // CSV has a header plus one line per row
  auto csv = matrix_csv(res);
  REQUIRE(csv.rfind("case_id,mask,target,psnr,ssim\n", 0) == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 11);

  // self-comparison: paired Wilcoxon on identical runs is p = 1 everywhere
  auto p = wilcoxon_between(res, res);
  REQUIRE(p.count("all") == 1);
  REQUIRE(p.at("all") == 1.0);

  REQUIRE_THROWS_AS(run_matrix(model, {}, {"1000"}, {1}), ConfigurationError);
  REQUIRE_THROWS_AS(run_matrix(model, dataset, {"1000"}, {7}), ConfigurationError);

  // a mask naming a modality no case carries is a configuration error
  auto sparse = dataset;
  for (auto& s : sparse) {
    s.slices.erase(3);
    s.mask.bits[3] = false;
  }
  REQUIRE_THROWS_AS(run_matrix(model, sparse, {"0001"}, {0}), ConfigurationError);
}
