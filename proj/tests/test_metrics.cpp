#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <iterator>

#include "ramo/error.hpp"
#include "ramo/metrics.hpp"
#include "ramo/rng.hpp"
#include "sign_flip_oracle.hpp"
#include "support.hpp"

using namespace ramo;
using namespace ramo::testing;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::ConfigError;
}

// Repeated argmax; the first maximal index wins.
std::vector<std::string> top_k_oracle(const EmotionSet& set, const EmotionVector& v, std::size_t k) {
  std::vector<bool> used(set.size(), false);
  std::vector<std::string> out;
  for (std::size_t r = 0; r < k; ++r) {
    std::size_t best = set.size();
    for (std::size_t e = 0; e < set.size(); ++e) {
      if (used[e]) continue;
      if (best == set.size() || v.scores[e] > v.scores[best]) best = e;
    }
    used[best] = true;
    out.push_back(set[best]);
  }
  return out;
}

double jaccard_oracle(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::vector<std::string> i, u;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(i));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(u));
  return static_cast<double>(i.size()) / static_cast<double>(u.size());
}

std::set<std::string> random_triple(Rng& rng, const EmotionSet& set) {
  std::set<std::string> out;
  while (out.size() < 3) out.insert(set[rng.below(set.size())]);
  return out;
}

// Runs with control means at 0.2 and red-tape means raised by `shift` on the
// listed emotions.
ExperimentResult hand_result(const std::string& model, Region region, AgentType type,
                             const EmotionSet& set,
                             const std::vector<std::vector<std::string>>& shifted_per_run,
                             double shift) {
  ExperimentResult r;
  r.config.model.model_name = model;
  r.config.region = region;
  r.config.agent_type = type;
  r.config.emotions = set;
  for (std::size_t i = 0; i < shifted_per_run.size(); ++i) {
    RunRecord run;
    run.index = i;
    run.mean_control.scores.assign(set.size(), 0.2);
    run.mean_redtape.scores.assign(set.size(), 0.2);
    for (const auto& label : shifted_per_run[i]) {
      run.mean_redtape.scores[*set.index_of(label)] += shift;
    }
    r.runs.push_back(run);
  }
  return r;
}

std::vector<std::vector<std::string>> same_each_run(std::vector<std::string> labels,
                                                    std::size_t runs = 10) {
  return std::vector<std::vector<std::string>>(runs, labels);
}

}  // namespace

TEST_CASE("top_k examples and errors") {
  const EmotionSet set = EmotionSet::default_set();
  EmotionVector flat{std::vector<double>(set.size(), 0.5)};
  CHECK(top_k(set, flat, 3) == std::vector<std::string>{"anger", "contempt", "disgust"});

  EmotionVector v{std::vector<double>(set.size(), 0.1)};
  v.scores[*set.index_of("anger")] = 0.9;
  v.scores[*set.index_of("frustration")] = 0.8;
  v.scores[*set.index_of("confusion")] = 0.7;
  CHECK(top_k(set, v, 3) == std::vector<std::string>{"anger", "frustration", "confusion"});
  CHECK(top_k(set, v, 0).empty());
  CHECK(top_k(set, v, set.size()).size() == set.size());
  CHECK(code_of([&] { top_k(set, v, set.size() + 1); }) == ErrorCode::KTooLarge);
}

TEST_CASE("top_k matches a brute-force oracle") {
  const EmotionSet set = EmotionSet::default_set();
  Rng rng(31337);
  for (int t = 0; t < 1000; ++t) {
    EmotionVector v;
    for (std::size_t e = 0; e < set.size(); ++e) {
      // Coarse values force plenty of ties.
      v.scores.push_back(static_cast<double>(rng.below(5)) / 4.0);
    }
    const std::size_t k = rng.below(set.size() + 1);
    REQUIRE(top_k(set, v, k) == top_k_oracle(set, v, k));
  }
}

TEST_CASE("overlap@3 values") {
  using S = std::set<std::string>;
  CHECK(overlap_at_3(S{"a", "b", "c"}, S{"a", "b", "c"}) == 1.0);
  CHECK(overlap_at_3(S{"a", "b", "c"}, S{"a", "x", "y"}) == 0.2);
  CHECK(overlap_at_3(S{"a", "b", "c"}, S{"a", "b", "y"}) == 0.5);
  CHECK(overlap_at_3(S{"a", "b", "c"}, S{"x", "y", "z"}) == 0.0);
  CHECK(code_of([] { overlap_at_3(S{"a", "b"}, S{"a", "b", "c"}); }) == ErrorCode::BadCardinality);
  CHECK(code_of([] { overlap_at_3(S{"a", "b", "c"}, S{"a", "b", "c", "d"}); }) ==
        ErrorCode::BadCardinality);
}

TEST_CASE("overlap@3 properties over random sets") {
  const EmotionSet set = EmotionSet::default_set();
  Rng rng(4242);
  for (int t = 0; t < 10000; ++t) {
    const auto a = random_triple(rng, set);
    const auto b = random_triple(rng, set);
    const double x = overlap_at_3(a, b);
    REQUIRE((x == 0.0 || x == 0.2 || x == 0.5 || x == 1.0));
    REQUIRE(x == overlap_at_3(b, a));
    REQUIRE(x == doctest::Approx(jaccard_oracle(a, b)));
    REQUIRE((x == 1.0) == (a == b));
  }
}

TEST_CASE("mean overlap averages per run") {
  const EmotionSet set = EmotionSet::default_set();
  auto runs = same_each_run({"anger", "frustration", "confusion"}, 9);
  runs.push_back({"anger", "frustration", "fear"});
  const auto r = hand_result("m", Region::Germany, AgentType::CultureAware, set, runs, 0.5);
  HumanGroundTruth gt{Region::Germany, std::set<std::string>{"anger", "frustration", "confusion"},
                      SasMapping::Identity, ""};
  CHECK(*mean_overlap(r, gt) == doctest::Approx(0.95));

  HumanGroundTruth hk{Region::HongKongSAR, std::nullopt, SasMapping::Negate, ""};
  CHECK_FALSE(mean_overlap(r, hk).has_value());
}

TEST_CASE("observed effects") {
  DiffMatrix zero(3, 2);
  CHECK(observed_effects(zero) == std::vector<double>{0.0, 0.0});

  DiffMatrix d(2, 1);
  d.at(0, 0) = 0.1;
  d.at(1, 0) = 0.3;
  CHECK(observed_effects(d)[0] == doctest::Approx(0.2));

  for (std::uint64_t f = 0; f < 20; ++f) {
    const auto m = random_diffs(f, 1 + f % 7, 1 + f % 5, 0);
    const auto got = observed_effects(m);
    for (std::size_t e = 0; e < m.emotions; ++e) {
      double sum = 0.0;
      for (std::size_t i = 0; i < m.runs; ++i) sum += m.values[i * m.emotions + e];
      CHECK(got[e] == doctest::Approx(sum / static_cast<double>(m.runs)).epsilon(1e-12));
    }
  }
}

TEST_CASE("nearest-rank percentile") {
  std::vector<double> v;
  for (int i = 1; i <= 20; ++i) v.push_back(i);
  CHECK(nearest_rank_percentile(v, 95) == 19);
  CHECK(nearest_rank_percentile(v, 50) == 10);
  CHECK(nearest_rank_percentile(v, 99.9) == 20);
  v.clear();
  for (int i = 100; i >= 1; --i) v.push_back(i);
  CHECK(nearest_rank_percentile(v, 95) == 95);
  CHECK(nearest_rank_percentile({7.0}, 95) == 7.0);
  // 0.95 * 16000 must resolve to rank 15200 exactly.
  std::vector<double> big(16000);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<double>(i + 1);
  CHECK(nearest_rank_percentile(big, 95) == 15200);
  CHECK(code_of([] { nearest_rank_percentile({}, 95); }) == ErrorCode::EmptyInput);
}

TEST_CASE("sig rate on null data is zero") {
  DiffMatrix zero(10, 8);
  const auto t = sig_rate_test(zero, SigTestConfig{});
  CHECK(t.threshold == 0.0);
  CHECK(t.rate == 0.0);
}

TEST_CASE("sig rate with three clean effects") {
  DiffMatrix d(10, 8);
  Rng rng(5);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t e = 0; e < 8; ++e) d.at(i, e) = (e < 3 ? 0.4 : 0.0) + rng.normal(0, 1e-4);
  }
  CHECK(sig_rate_95(d, SigTestConfig{}) == 0.375);
}

TEST_CASE("sig rate agrees with exact enumeration") {
  for (std::uint64_t f = 0; f < 30; ++f) {
    Rng shape(derive_seed(17, f));
    const std::size_t n = 2 + shape.below(9);
    const std::size_t emotions = 1 + shape.below(6);
    const auto d = random_diffs(derive_seed(18, f), n, emotions, 16);
    const auto exact = exact_sign_flip(d, 95.0);
    SigTestConfig cfg;
    cfg.seed = derive_seed(19, f);
    const auto mc = sig_rate_test(d, cfg);
    CAPTURE(f);
    CHECK(mc.threshold >= exact.below());
    CHECK(mc.threshold <= exact.above());
    if (exact.min_gap() > exact.spacing()) CHECK(mc.rate == exact.rate);
  }
}

TEST_CASE("sig rate invariants") {
  for (std::uint64_t f = 0; f < 25; ++f) {
    const auto d = random_diffs(derive_seed(21, f), 2 + f % 9, 1 + f % 6, 0);
    SigTestConfig cfg;
    cfg.seed = f;
    cfg.permutations = 500;
    const auto base = sig_rate_test(d, cfg);
    const double scaled_rate = base.rate * static_cast<double>(d.emotions);
    CHECK(scaled_rate == std::round(scaled_rate));
    CHECK(base.rate >= 0.0);
    CHECK(base.rate <= 1.0);

    // Same seed, same answer.
    const auto again = sig_rate_test(d, cfg);
    CHECK(again.threshold == base.threshold);
    CHECK(again.rate == base.rate);

    // Positive scaling by powers of two is exact, so R cannot move.
    for (double c : {0.25, 2.0, 8.0}) {
      DiffMatrix s = d;
      for (double& x : s.values) x *= c;
      const auto t = sig_rate_test(s, cfg);
      CHECK(t.rate == base.rate);
      CHECK(t.threshold == base.threshold * c);
    }
  }
}

TEST_CASE("permutation streams are per index") {
  const auto d = random_diffs(3, 6, 4, 0);
  SigTestConfig cfg;
  cfg.seed = 99;
  cfg.permutations = 50;
  std::vector<double> pool;
  std::vector<double> row(d.emotions);
  for (std::size_t p = 0; p < cfg.permutations; ++p) {
    permuted_effects(d, derive_seed(cfg.seed, p), row);
    pool.insert(pool.end(), row.begin(), row.end());
  }
  CHECK(sig_rate_test(d, cfg).threshold == nearest_rank_percentile(pool, 95.0));
}

TEST_CASE("sig test config validation") {
  SigTestConfig cfg;
  cfg.permutations = 0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::ConfigError);
  cfg = SigTestConfig{};
  cfg.confidence_percentile = 100.0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::ConfigError);
  cfg.confidence_percentile = 0.0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("target T") {
  const std::vector<double> hk{0.12, 0.50, 0.11, 0.13};
  const std::vector<double> de{0.22, 0.56, 0.00, 0.33};
  CHECK(derive_target_T(hk, de) == 0.24625);
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(derive_target_T(zeros, zeros) == 0.0);
  const std::vector<double> a{0.3}, b{0.7};
  CHECK(derive_target_T(a, b) == doctest::Approx(0.5));
  CHECK(code_of([&] { derive_target_T({}, de); }) == ErrorCode::EmptyInput);
  CHECK(code_of([&] { derive_target_T(hk, {}); }) == ErrorCode::EmptyInput);
}

TEST_CASE("sas mappings") {
  CHECK(sas(0.56, Region::Germany, std::nullopt) == 0.56);
  const double hk = sas(0.0, Region::HongKongSAR, std::nullopt);
  CHECK(hk == 0.0);
  CHECK_FALSE(std::signbit(hk));
  CHECK(sas(0.25, Region::MainlandChina, 0.24625) == doctest::Approx(-0.00375).epsilon(1e-9));
  CHECK(code_of([] { sas(0.25, Region::MainlandChina, std::nullopt); }) == ErrorCode::MissingTarget);

  // Monotonicity and the CN optimum.
  for (int k = 0; k < 100; ++k) {
    const double r = k / 100.0, r2 = (k + 1) / 100.0;
    CHECK(sas(r2, Region::Germany, std::nullopt) > sas(r, Region::Germany, std::nullopt));
    CHECK(sas(r2, Region::HongKongSAR, std::nullopt) < sas(r, Region::HongKongSAR, std::nullopt));
    if (r != 0.3) CHECK(sas(r, Region::MainlandChina, 0.3) < 0.0);
  }
  CHECK(sas(0.3, Region::MainlandChina, 0.3) == 0.0);
}

TEST_CASE("ground truth file") {
  const auto gt = load_ground_truth(config_dir() / "ground_truth.json");
  REQUIRE(gt.size() == 3);
  for (const auto& g : gt) {
    CHECK(g.sas_mapping == default_sas_mapping(g.region));
    CHECK(g.top3.has_value() == (g.region != Region::HongKongSAR));
  }
  const auto dir = temp_dir("ground-truth");
  json_util::write_text(dir / "bad.json",
                        R"({"ground_truth":[{"region":"HK","top3":["a","b","c"],"sas_mapping":"negate"}]})");
  CHECK(code_of([&] { load_ground_truth(dir / "bad.json"); }) == ErrorCode::ParseError);
  json_util::write_text(dir / "bad2.json",
                        R"({"ground_truth":[{"region":"DE","top3":["a","b"],"sas_mapping":"identity"}]})");
  CHECK(code_of([&] { load_ground_truth(dir / "bad2.json"); }) == ErrorCode::ParseError);
}

TEST_CASE("alignment report reproduces hand-computed cells") {
  const EmotionSet set({"anger", "fear", "surprise", "frustration", "confusion", "joy"});
  const auto gt = load_ground_truth(config_dir() / "ground_truth.json");

  auto de_ca_runs = same_each_run({"anger", "frustration", "confusion"}, 9);
  de_ca_runs.push_back({"anger", "frustration", "fear"});
  const std::vector<ExperimentResult> results = {
      hand_result("m1", Region::Germany, AgentType::CultureAware, set, de_ca_runs, 0.5),
      hand_result("m1", Region::HongKongSAR, AgentType::Default, set, same_each_run({"anger"}), 0.5),
      hand_result("m1", Region::MainlandChina, AgentType::CultureAware, set,
                  same_each_run({"fear", "surprise", "anger"}), 0.5),
      hand_result("m1", Region::Germany, AgentType::Default, set,
                  same_each_run({"anger", "frustration"}), 0.5),
      hand_result("m1", Region::HongKongSAR, AgentType::CultureAware, set, same_each_run({}), 0.5),
  };
  SigTestConfig cfg;
  cfg.seed = 2024;
  const auto report = alignment_report(results, gt, cfg);
  REQUIRE(report.cells.size() == 5);

  // Hand computation:
  //   HK default: 1 of 6 shifted -> R = 1/6, SAS = -1/6, no overlap
  //   HK culture-aware: nothing shifted -> R = 0, SAS = 0
  //   DE default: anger, frustration -> R = 2/6; top-3 adds fear by set order -> overlap 0.5
  //   T = (1/6 + 2/6) / 2 = 0.25
  //   CN culture-aware: 3 of 6 -> R = 0.5, SAS = -0.25, overlap 1
  //   DE culture-aware: anger, frustration, confusion (9 of 10 runs) -> R = 0.5, overlap 0.95
  REQUIRE(report.target.has_value());
  CHECK(*report.target == doctest::Approx(0.25));

  const auto& c = report.cells;
  CHECK(c[0].region == Region::HongKongSAR);
  CHECK(c[0].agent_type == AgentType::Default);
  CHECK(c[0].sig_rate == doctest::Approx(1.0 / 6));
  CHECK(c[0].sas == doctest::Approx(-1.0 / 6));
  CHECK_FALSE(c[0].overlap_at_3.has_value());

  CHECK(c[1].region == Region::HongKongSAR);
  CHECK(c[1].agent_type == AgentType::CultureAware);
  CHECK(c[1].sig_rate == 0.0);
  CHECK(c[1].sas == 0.0);
  CHECK_FALSE(c[1].overlap_at_3.has_value());

  CHECK(c[2].region == Region::MainlandChina);
  CHECK(c[2].sig_rate == doctest::Approx(0.5));
  CHECK(c[2].sas == doctest::Approx(-0.25));
  CHECK(*c[2].overlap_at_3 == 1.0);

  CHECK(c[3].region == Region::Germany);
  CHECK(c[3].agent_type == AgentType::Default);
  CHECK(c[3].sig_rate == doctest::Approx(2.0 / 6));
  CHECK(*c[3].overlap_at_3 == doctest::Approx(0.5));

  CHECK(c[4].region == Region::Germany);
  CHECK(c[4].agent_type == AgentType::CultureAware);
  CHECK(c[4].sig_rate == doctest::Approx(0.5));
  CHECK(c[4].sas == doctest::Approx(0.5));
  CHECK(*c[4].overlap_at_3 == doctest::Approx(0.95));

  // Every cell also matches the exact permutation oracle.
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto exact = exact_sign_flip(paired_differences(results[k]), 95.0);
    const auto it = std::find_if(c.begin(), c.end(), [&](const AlignmentCell& cell) {
      return cell.region == results[k].config.region &&
             cell.agent_type == results[k].config.agent_type;
    });
    REQUIRE(it != c.end());
    CHECK(it->sig_rate == exact.rate);
  }

  // Deterministic rendering.
  const auto again = alignment_report(results, gt, cfg);
  CHECK(report_to_json(report).dump() == report_to_json(again).dump());
  CHECK(report_to_table(report) == report_to_table(again));
}

TEST_CASE("report table layout") {
  AlignmentReport report;
  report.target = 0.24625;
  report.cells = {
      {"gpt-4o", Region::HongKongSAR, AgentType::Default, std::nullopt, 0.12, -0.12, 0, 10},
      {"gpt-4o", Region::HongKongSAR, AgentType::CultureAware, std::nullopt, 0.0, 0.0, 0, 10},
      {"gpt-4o", Region::MainlandChina, AgentType::CultureAware, 0.93, 0.25,
       sas(0.25, Region::MainlandChina, 0.24625), 0, 10},
      {"gpt-4o", Region::Germany, AgentType::Default, 1.0, 0.22, 0.22, 0, 10},
  };
  const auto table = report_to_table(report);
  CHECK(table.find("Hong Kong SAR") != std::string::npos);
  CHECK(table.find("Default") != std::string::npos);
  CHECK(table.find("Cultural-aware") != std::string::npos);
  CHECK(table.find("-0.12") != std::string::npos);
  CHECK(table.find("-0.0038") != std::string::npos);
  CHECK(table.find("-0.00 ") == std::string::npos);
  CHECK(table.find("0.93") != std::string::npos);
  CHECK(table.find("1.00") != std::string::npos);

  // HK rows show "-" for overlap.
  const auto hk_row = table.substr(table.find("gpt-4o"));
  CHECK(hk_row.substr(0, hk_row.find('\n')).find(" - ") != std::string::npos);

  const auto doc = report_to_json(report);
  CHECK(doc["cells"][0]["overlap_at_3"].is_null());
  CHECK(doc["target_T"].get<double>() == 0.24625);
}

TEST_CASE("alignment report errors") {
  const EmotionSet set({"anger", "fear", "surprise"});
  const auto gt = load_ground_truth(config_dir() / "ground_truth.json");
  SigTestConfig cfg;
  cfg.permutations = 100;

  CHECK(alignment_report({}, gt, cfg).cells.empty());

  const auto cn = hand_result("m", Region::MainlandChina, AgentType::CultureAware, set,
                              same_each_run({"fear"}, 3), 0.5);
  CHECK(code_of([&] { alignment_report({cn}, gt, cfg); }) == ErrorCode::MissingDefaultCells);

  std::vector<HumanGroundTruth> only_de;
  for (const auto& g : gt) {
    if (g.region == Region::Germany) only_de.push_back(g);
  }
  CHECK(code_of([&] { alignment_report({cn}, only_de, cfg); }) == ErrorCode::MissingGroundTruth);

  const auto de = hand_result("m", Region::Germany, AgentType::Default, set,
                              same_each_run({"anger"}, 3), 0.5);
  CHECK(code_of([&] { alignment_report({de, de}, gt, cfg); }) == ErrorCode::ValidationError);
}

TEST_CASE("mock pipeline recovers the planted effect") {
  const EmotionSet set({"anger", "contempt", "disgust", "fear", "joy", "sadness", "frustration",
                        "confusion"});
  std::vector<double> delta(set.size(), 0.0);
  for (const char* l : {"anger", "frustration", "confusion"}) delta[*set.index_of(l)] = 0.4;
  const auto mock = uniform_mock(set, 0.2, delta, 0.01);
  auto cfg = mock_config(Region::Germany, AgentType::CultureAware, 40, 10, 7);
  cfg.emotions = set;
  const auto result = run_experiment(cfg, mock);
  CHECK(sig_rate_95(paired_differences(result), SigTestConfig{}) == 0.375);
  HumanGroundTruth gt{Region::Germany, std::set<std::string>{"anger", "frustration", "confusion"},
                      SasMapping::Identity, ""};
  CHECK(*mean_overlap(result, gt) == 1.0);

  // Row means of d reproduce the observed effects.
  const auto d = paired_differences(result);
  const auto effects = observed_effects(d);
  for (std::size_t e = 0; e < set.size(); ++e) {
    double sum = 0.0;
    for (const auto& run : result.runs) {
      sum += run.mean_redtape.scores[e] - run.mean_control.scores[e];
    }
    CHECK(effects[e] == doctest::Approx(sum / 10.0).epsilon(1e-12));
  }
}
