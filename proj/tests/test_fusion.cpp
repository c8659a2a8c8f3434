#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "medk2n/core/param_ctx.hpp"
#include "medk2n/fusion/gating.hpp"

using namespace medk2n;
using namespace medk2n::fusion;
using Var = Tape<double>::Var;

namespace {

Tensor<double> rand_tensor(std::mt19937_64& rng, std::vector<int> shape, double lo = -1,
                           double hi = 1) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.x) v = d(rng);
  return t;
}

}  // namespace

TEST_CASE("retrieve_memory matches a direct double loop") {
  auto rng = make_engine(31);
  const int d = 8, k = 4;
  auto q = rand_tensor(rng, {d});
  auto mem = rand_tensor(rng, {d, k});

  Tape<double> tape;
  auto got = tape.val(retrieve_memory(tape, tape.constant(q), tape.constant(mem)));

  // oracle: softmax over q.M[:,k]/sqrt(d), then the weighted column sum
  std::vector<double> logits(k, 0.0);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < d; ++i)
      logits[static_cast<std::size_t>(j)] +=
          q.x[static_cast<std::size_t>(i)] * mem.x[static_cast<std::size_t>(i) * k + j];
    logits[static_cast<std::size_t>(j)] /= std::sqrt(static_cast<double>(d));
  }
  double mx = *std::max_element(logits.begin(), logits.end()), z = 0;
  std::vector<double> w(k);
  for (int j = 0; j < k; ++j) z += (w[static_cast<std::size_t>(j)] = std::exp(logits[static_cast<std::size_t>(j)] - mx));
  for (auto& v : w) v /= z;
  for (int i = 0; i < d; ++i) {
    double want = 0;
    for (int j = 0; j < k; ++j)
      want += w[static_cast<std::size_t>(j)] * mem.x[static_cast<std::size_t>(i) * k + j];
    REQUIRE(got.x[static_cast<std::size_t>(i)] == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("retrieve_memory degenerate cases") {
  Tape<double> tape;
  // one slot: retrieval returns that slot exactly
  Tensor<double> mem1({3, 1}, {0.2, -0.4, 0.9});
  Tensor<double> q({3}, {1.0, 2.0, -1.0});
  auto got = tape.val(retrieve_memory(tape, tape.constant(q), tape.constant(mem1)));
  REQUIRE(got.x[0] == Catch::Approx(0.2));
  REQUIRE(got.x[2] == Catch::Approx(0.9));
  // identical columns: any attention distribution gives the shared column
  Tensor<double> mem({2, 3}, {0.5, 0.5, 0.5, -0.3, -0.3, -0.3});
  Tensor<double> q2({2}, {2.0, 1.0});
  auto got2 = tape.val(retrieve_memory(tape, tape.constant(q2), tape.constant(mem)));
  REQUIRE(got2.x[0] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(got2.x[1] == Catch::Approx(-0.3).margin(1e-12));
}

TEST_CASE("attention weights sum to one") {
  auto rng = make_engine(8);
  Tape<double> tape;
  auto logits = tape.constant(rand_tensor(rng, {6}, -5, 5));
  auto sm = tape.val(tape.softmax_vec(logits));
  double s = 0;
  for (double v : sm.x) s += v;
  REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("task_query with zeroed parameters returns zero") {
  Tape<double> tape;
  ParamStore<double> store;
  ParamCtx<double> ctx(tape, store, 3);
  FusionConfig cfg;
  cfg.embed_dim = 8;
  auto rng = make_engine(1);
  auto q = task_query(ctx, tape.constant(rand_tensor(rng, {8})),
                      tape.constant(rand_tensor(rng, {8})),
                      tape.constant(rand_tensor(rng, {8})), cfg);
  for (auto& e : store.entries()) std::fill(e.value.x.begin(), e.value.x.end(), 0.0);
  Tape<double> tape2;
  ParamCtx<double> ctx2(tape2, store, 3);
  auto q2 = task_query(ctx2, tape2.constant(rand_tensor(rng, {8})),
                       tape2.constant(rand_tensor(rng, {8})),
                       tape2.constant(rand_tensor(rng, {8})), cfg);
  for (double v : tape2.val(q2).x) REQUIRE(v == 0.0);
  REQUIRE(tape.val(q).numel() == 8);
}

TEST_CASE("pre_weight output range and bias monotonicity") {
  Tape<double> tape;
  ParamStore<double> store;
  ParamCtx<double> ctx(tape, store, 7);
  FusionConfig cfg;
  cfg.embed_dim = 8;
  auto rng = make_engine(2);
  auto x = tape.constant(rand_tensor(rng, {8}));
  auto m = tape.constant(rand_tensor(rng, {8}));
  auto w = pre_weight(ctx, x, m, cfg);
  double v0 = tape.val(w).x[0];
  REQUIRE(v0 > 0.0);
  REQUIRE(v0 < 1.0);

  // final-layer bias shifts the logit directly: sigmoid monotone in bias
  auto run_with_bias = [&](double bias) {
    ParamStore<double> s2 = store;
    s2.at("fus.prew.b2").value.x[0] = bias;
    Tape<double> t2;
    ParamCtx<double> c2(t2, s2, 7);
    auto x2 = t2.constant(tape.val(x));
    auto m2 = t2.constant(tape.val(m));
    return t2.val(pre_weight(c2, x2, m2, cfg)).x[0];
  };
  // zeroed weights leave only the bias: sigmoid(0) = 0.5 exactly
  ParamStore<double> zeroed = store;
  for (auto& e : zeroed.entries()) std::fill(e.value.x.begin(), e.value.x.end(), 0.0);
  Tape<double> tz;
  ParamCtx<double> cz(tz, zeroed, 7);
  REQUIRE(tz.val(pre_weight(cz, tz.constant(tape.val(x)), tz.constant(tape.val(m)), cfg)).x[0] ==
          0.5);
  double hi = run_with_bias(20.0);
  REQUIRE(hi > 0.999);
  REQUIRE(hi < 1.0);
  REQUIRE(run_with_bias(-3.0) < run_with_bias(0.0));
  REQUIRE(run_with_bias(0.0) < run_with_bias(3.0));
}

TEST_CASE("adaptive_threshold bounds and neutral value") {
  FusionConfig cfg;
  cfg.embed_dim = 8;
  auto rng = make_engine(4);
  auto mk_inputs = [&](Tape<double>& t) {
    return std::tuple{t.constant(Tensor<double>({1}, {0.7})),
                      t.constant(rand_tensor(rng, {cfg.embed_dim})),
                      t.constant(rand_tensor(rng, {cfg.compat_dim})),
                      t.constant(Tensor<double>({1}, {0.5}))};
  };

  // zeroed MLP gives sigmoid(0) = 0.5: tau = 0.05 + 0.85 * 0.5 = 0.475
  ParamStore<double> store;
  {
    Tape<double> t;
    ParamCtx<double> c(t, store, 9);
    auto [w, m, cc, p] = mk_inputs(t);
    adaptive_threshold(c, w, m, cc, p, cfg);
  }
  for (auto& e : store.entries()) std::fill(e.value.x.begin(), e.value.x.end(), 0.0);
  Tape<double> t0;
  ParamCtx<double> c0(t0, store, 9);
  auto [w0, m0, cc0, p0] = mk_inputs(t0);
  auto thr0 = adaptive_threshold(c0, w0, m0, cc0, p0, cfg);
  REQUIRE(t0.val(thr0.tau).x[0] == Catch::Approx(0.475).margin(1e-12));

  // saturated final bias pins tau at (but never past) the bounds
  auto with_bias = [&](double bias) {
    ParamStore<double> s = store;
    s.at("fus.thr.b2").value.x[0] = bias;
    Tape<double> t;
    ParamCtx<double> c(t, s, 9);
    auto [w, m, cc, p] = mk_inputs(t);
    return t.val(adaptive_threshold(c, w, m, cc, p, cfg).tau).x[0];
  };
  double lo = with_bias(-50.0), hi = with_bias(50.0);
  REQUIRE(lo == Catch::Approx(0.05).margin(1e-9));
  REQUIRE(hi == Catch::Approx(0.9).margin(1e-9));
  REQUIRE(lo > 0.05 - 1e-15);
  REQUIRE(hi < 0.9 + 1e-15);
  REQUIRE(with_bias(-1.0) < with_bias(0.0));
  REQUIRE(with_bias(0.0) < with_bias(1.0));
}

TEST_CASE("effective_weight map range and mean oracle") {
  FusionConfig cfg;
  cfg.embed_dim = 8;
  auto rng = make_engine(6);
  const int h = 5, w = 6;
  auto aux = rand_tensor(rng, {cfg.embed_dim, h, w});

  auto run = [&](ParamStore<double>& store, double* mean_out) {
    Tape<double> t;
    ParamCtx<double> c(t, store, 13);
    auto rng2 = make_engine(6, 1);
    auto wg = t.constant(Tensor<double>({1}, {0.6}));
    auto tau = t.constant(Tensor<double>({1}, {0.3}));
    auto m = t.constant(rand_tensor(rng2, {cfg.embed_dim}));
    auto xg = t.constant(rand_tensor(rng2, {cfg.gate_dim}));
    auto ct = t.constant(rand_tensor(rng2, {cfg.embed_dim}));
    auto cm = t.constant(rand_tensor(rng2, {cfg.embed_dim}));
    auto eff = effective_weight(c, wg, tau, m, xg, ct, cm, t.constant(aux), cfg);
    auto v = t.val(eff);
    if (mean_out) {
      double s = 0;
      for (double x : v.x) s += x;
      *mean_out = s / static_cast<double>(v.x.size());
    }
    return v;
  };

  ParamStore<double> store;
  double mean = 0;
  auto map = run(store, &mean);
  REQUIRE(map.shape == std::vector<int>{1, h, w});
  for (double v : map.x) {
    REQUIRE(v >= 0.001);
    REQUIRE(v <= 0.999);
  }

  // zeroed parameters: logits are zero everywhere, so w_eff is 0.5 at
  // every pixel
  ParamStore<double> zeroed = store;
  for (auto& e : zeroed.entries()) std::fill(e.value.x.begin(), e.value.x.end(), 0.0);
  auto flat = run(zeroed, nullptr);
  for (double v : flat.x) REQUIRE(v == 0.5);

  // saturated spatial bias clamps to exactly 1 - eps
  ParamStore<double> sat = zeroed;
  sat.at("fus.eff.spatial.b").value.x[0] = 100.0;
  auto high = run(sat, nullptr);
  for (double v : high.x) REQUIRE(v == 0.999);

  // manual recomputation of the full path for the mean, pixel by pixel
  {
    Tape<double> t;
    ParamCtx<double> c(t, store, 13);
    auto rng2 = make_engine(6, 1);
    Tensor<double> m = rand_tensor(rng2, {cfg.embed_dim});
    Tensor<double> xg = rand_tensor(rng2, {cfg.gate_dim});
    Tensor<double> ct = rand_tensor(rng2, {cfg.embed_dim});
    Tensor<double> cm = rand_tensor(rng2, {cfg.embed_dim});
    // dense vector pass replicated with scalar loops
    std::vector<double> in;
    in.push_back(0.6);
    in.push_back(0.3);
    auto append = [&](const Tensor<double>& v) { in.insert(in.end(), v.x.begin(), v.x.end()); };
    append(m);
    append(xg);
    append(ct);
    append(cm);
    auto lin = [&](const std::string& wn, const std::string& bn,
                   const std::vector<double>& x) {
      const auto& W = store.at(wn).value;
      const auto& B = store.at(bn).value;
      int rows = W.dim(0), cols = W.dim(1);
      std::vector<double> y(static_cast<std::size_t>(rows));
      for (int r = 0; r < rows; ++r) {
        double s = B.x[static_cast<std::size_t>(r)];
        for (int cc2 = 0; cc2 < cols; ++cc2)
          s += W.x[static_cast<std::size_t>(r) * cols + cc2] * x[static_cast<std::size_t>(cc2)];
        y[static_cast<std::size_t>(r)] = s;
      }
      return y;
    };
    auto f = lin("fus.proj.w", "fus.proj.b", in);
    for (auto& v : f) v = std::tanh(v);
    auto hvec = lin("fus.eff.w1", "fus.eff.b1", f);
    for (auto& v : hvec) v = std::tanh(v);
    double base = lin("fus.eff.w2", "fus.eff.b2", hvec)[0];
    const auto& sw = store.at("fus.eff.spatial.w").value;
    double sb = store.at("fus.eff.spatial.b").value.x[0];
    double sum = 0;
    for (int r = 0; r < h; ++r)
      for (int cc2 = 0; cc2 < w; ++cc2) {
        double logit = base + sb;
        for (int k = 0; k < cfg.embed_dim; ++k)
          logit += sw.x[static_cast<std::size_t>(k)] * aux.at(k, r, cc2);
        double v = 1.0 / (1.0 + std::exp(-logit));
        sum += std::min(0.999, std::max(0.001, v));
      }
    REQUIRE(mean == Catch::Approx(sum / (h * w)).margin(1e-9));
  }
}

TEST_CASE("soft gate is continuous across the threshold") {
  // tau enters only as an input feature, so nudging it past any value
  // moves the weight map by O(epsilon), never by a jump
  FusionConfig cfg;
  cfg.embed_dim = 8;
  auto rng = make_engine(14);
  auto aux = rand_tensor(rng, {cfg.embed_dim, 3, 3});
  ParamStore<double> store;
  auto eval_tau = [&](double tau) {
    Tape<double> t;
    ParamCtx<double> c(t, store, 21);
    auto rng2 = make_engine(14, 1);
    auto eff = effective_weight(
        c, t.constant(Tensor<double>({1}, {0.5})), t.constant(Tensor<double>({1}, {tau})),
        t.constant(rand_tensor(rng2, {cfg.embed_dim})),
        t.constant(rand_tensor(rng2, {cfg.gate_dim})),
        t.constant(rand_tensor(rng2, {cfg.embed_dim})),
        t.constant(rand_tensor(rng2, {cfg.embed_dim})), t.constant(aux), cfg);
    return t.val(eff);
  };
  auto a = eval_tau(0.475);
  auto b = eval_tau(0.475 + 1e-6);
  for (std::size_t i = 0; i < a.x.size(); ++i)
    REQUIRE(std::abs(a.x[i] - b.x[i]) < 1e-4);
}

TEST_CASE("performance history update rule") {
  REQUIRE(PerformanceHistory::update_history(0.5, 0.5) == 0.5);
  REQUIRE(PerformanceHistory::update_history(0.0, 1.0) == Catch::Approx(0.1));
  PerformanceHistory h;
  REQUIRE(h.get(0, 1) == 0.5);
  // repeated feedback converges geometrically to the fed value
  double p = 0.5;
  for (int i = 0; i < 200; ++i) p = PerformanceHistory::update_history(p, 0.9);
  REQUIRE(p == Catch::Approx(0.9).margin(1e-6));
  h.update(0, 1, 1.0);
  REQUIRE(h.get(0, 1) == Catch::Approx(0.55));
  REQUIRE(h.get(2, 3) == 0.5);

  // bounded inputs keep the history in [0, 1] forever
  auto rng = make_engine(99);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double v = 0.5;
  for (int i = 0; i < 1000; ++i) {
    v = PerformanceHistory::update_history(v, uni(rng));
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}
