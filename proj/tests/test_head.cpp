#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "medk2n/core/param_ctx.hpp"
#include "medk2n/encoder/multiscale.hpp"
#include "medk2n/head/taskhead.hpp"

using namespace medk2n;
using namespace medk2n::head;
using Var = Tape<double>::Var;

namespace {

Tensor<double> rand_tensor(std::mt19937_64& rng, std::vector<int> shape, double lo = -1,
                           double hi = 1) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.x) v = d(rng);
  return t;
}

// A small synthetic pyramid: finest 8x8, mid 4x4, coarsest 2x2.
enc::FeatureMapVars<double> pyramid(Tape<double>& tape, std::mt19937_64& rng, int d) {
  enc::FeatureMapVars<double> fm;
  fm.scales = {tape.constant(rand_tensor(rng, {d, 2, 2})),
               tape.constant(rand_tensor(rng, {d, 4, 4})),
               tape.constant(rand_tensor(rng, {d, 8, 8}))};
  return fm;
}

}  // namespace

TEST_CASE("shared_encode ignores zero-weighted auxiliaries") {
  TaskHeadConfig cfg;
  cfg.embed_dim = 6;
  cfg.decode_dim = 4;
  auto rng = make_engine(21);
  Tensor<double> aux_feats = rand_tensor(rng, {cfg.embed_dim, 8, 8});
  Tensor<double> c_task = rand_tensor(rng, {cfg.embed_dim});
  Tensor<double> zero_map({1, 8, 8});

  ParamStore<double> store;
  auto run = [&](bool with_aux, const Tensor<double>& w_eff) {
    Tape<double> tape;
    ParamCtx<double> ctx(tape, store, 17);
    auto rng2 = make_engine(21);
    auto fm = pyramid(tape, rng2, cfg.embed_dim);
    std::vector<std::pair<Var, Var>> aux;
    if (with_aux) aux.push_back({tape.constant(w_eff), tape.constant(aux_feats)});
    auto f = shared_encode(ctx, fm, aux, tape.constant(c_task), cfg);
    return tape.val(f);
  };
  auto empty = run(false, zero_map);
  auto zeroed = run(true, zero_map);
  REQUIRE(empty.shape == std::vector<int>{6, 8, 8});
  for (std::size_t i = 0; i < empty.x.size(); ++i)
    REQUIRE(empty.x[i] == Catch::Approx(zeroed.x[i]).margin(1e-12));

  Tensor<double> ones({1, 8, 8});
  ones.fill(1.0);
  auto with_aux = run(true, ones);
  REQUIRE(with_aux.x != empty.x);
}

TEST_CASE("broadcast weighting matches a pixel loop") {
  auto rng = make_engine(33);
  const int d = 3, h = 4, w = 5;
  auto map = rand_tensor(rng, {1, h, w}, 0, 1);
  auto feats = rand_tensor(rng, {d, h, w});
  Tape<double> tape;
  auto got = tape.val(tape.broadcast_mul_map(tape.constant(map), tape.constant(feats)));
  for (int k = 0; k < d; ++k)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        REQUIRE(got.at(k, r, c) == Catch::Approx(map.at(0, r, c) * feats.at(k, r, c)).margin(1e-12));
}

TEST_CASE("candidate generation count, range, diversity, determinism") {
  TaskHeadConfig cfg;
  cfg.embed_dim = 6;
  cfg.decode_dim = 4;
  cfg.k_head = 3;
  ParamStore<double> store;
  auto rng = make_engine(5);
  auto f_val = rand_tensor(rng, {cfg.embed_dim, 8, 8});

  auto run = [&](int k_head) {
    TaskHeadConfig c2 = cfg;
    c2.k_head = k_head;
    Tape<double> tape;
    ParamCtx<double> ctx(tape, store, 23);
    auto cands = generate_candidates(ctx, tape.constant(f_val), 1, c2);
    std::vector<Tensor<double>> out;
    for (auto v : cands) out.push_back(tape.val(v));
    return out;
  };
  auto cands = run(3);
  REQUIRE(cands.size() == 3);
  for (auto& c : cands) {
    REQUIRE(c.shape == std::vector<int>{1, 32, 32});
    for (double v : c.x) {
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }
  }
  // structural diversity: different kernel sizes and weights give different
  // candidates pairwise
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) REQUIRE(cands[static_cast<std::size_t>(i)].x != cands[static_cast<std::size_t>(j)].x);
  auto again = run(3);
  for (int i = 0; i < 3; ++i) REQUIRE(cands[static_cast<std::size_t>(i)].x == again[static_cast<std::size_t>(i)].x);
  REQUIRE(run(1).size() == 1);
  TaskHeadConfig bad = cfg;
  bad.k_head = 0;
  Tape<double> t;
  ParamCtx<double> cx(t, store, 23);
  REQUIRE_THROWS_AS(generate_candidates(cx, t.constant(f_val), 1, bad), data::ContractError);
}

TEST_CASE("train-mode quality scoring") {
  data::Image2D gt(16, 16);
  auto rng = make_engine(2);
  std::uniform_real_distribution<float> uni(0.f, 1.f);
  for (auto& p : gt.px) p = uni(rng);
  REQUIRE(score_quality_train(gt, gt) == Catch::Approx(1.0).margin(1e-9));

  // inverted image: strongly negative structural agreement, Q below 0.5
  data::Image2D inv = gt;
  for (auto& p : inv.px) p = 1.f - p;
  REQUIRE(score_quality_train(inv, gt) < 0.5);
}

TEST_CASE("modality prior penalty") {
  data::Image2D img(4, 4);
  img.px.assign(16, 0.8f);
  ModalitySpec band{0.1, 0.5};
  // mean 0.8 sits 0.3 above the band: penalty 0.6
  REQUIRE(apply_modality_prior(0.9, img, band) == Catch::Approx(0.3).margin(1e-6));
  ModalitySpec wide{0.0, 1.0};
  REQUIRE(apply_modality_prior(0.9, img, wide) == Catch::Approx(0.9));
  REQUIRE(apply_modality_prior(0.1, img, band) == 0.0);  // clamped at zero
}

TEST_CASE("winner selection and feedback") {
  CandidateSet set;
  set.candidates.assign(3, data::Image2D(2, 2));
  set.scores = {0.4, 0.9, 0.7};
  auto [best, dq] = select_and_feedback(set, 0.5);
  REQUIRE(best == 1);
  REQUIRE(set.winner_index == 1);
  REQUIRE(dq == Catch::Approx(0.4));

  // exact tie resolves to the lowest index
  set.scores = {0.8, 0.8, 0.8};
  REQUIRE(select_and_feedback(set, 0.2).first == 0);

  // selection depends on score order, not scale
  set.scores = {0.04, 0.09, 0.07};
  REQUIRE(select_and_feedback(set, 0.0).first == 1);

  CandidateSet empty;
  REQUIRE_THROWS_AS(select_and_feedback(empty, 0.5), data::ContractError);
  CandidateSet misaligned;
  misaligned.candidates.assign(2, data::Image2D(2, 2));
  misaligned.scores = {0.5};
  REQUIRE_THROWS_AS(select_and_feedback(misaligned, 0.5), data::ContractError);
}

TEST_CASE("learned quality head stays in the open unit interval") {
  ParamStore<double> store;
  auto rng = make_engine(44);
  for (int trial = 0; trial < 4; ++trial) {
    Tape<double> tape;
    ParamCtx<double> ctx(tape, store, 3);
    auto img = tape.constant(rand_tensor(rng, {1, 16, 16}, 0, 1));
    double q = tape.val(quality_head(ctx, img)).x[0];
    REQUIRE(q > 0.0);
    REQUIRE(q < 1.0);
  }
}
