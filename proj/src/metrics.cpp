#include "ramo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include <fmt/format.h>

#include "ramo/error.hpp"
#include "ramo/json_util.hpp"
#include "ramo/rng.hpp"

namespace ramo {

using json_util::json;
using ojson = nlohmann::ordered_json;

std::string_view sas_mapping_name(SasMapping m) {
  switch (m) {
    case SasMapping::Negate: return "negate";
    case SasMapping::Identity: return "identity";
    case SasMapping::NegAbsDistance: return "neg-abs-distance";
  }
  return "";
}

std::optional<SasMapping> parse_sas_mapping(std::string_view name) {
  if (name == "negate") return SasMapping::Negate;
  if (name == "identity") return SasMapping::Identity;
  if (name == "neg-abs-distance") return SasMapping::NegAbsDistance;
  return std::nullopt;
}

SasMapping default_sas_mapping(Region region) {
  switch (region) {
    case Region::HongKongSAR: return SasMapping::Negate;
    case Region::Germany: return SasMapping::Identity;
    case Region::MainlandChina: return SasMapping::NegAbsDistance;
  }
  return SasMapping::Identity;
}

std::vector<HumanGroundTruth> load_ground_truth(const std::filesystem::path& path) {
  const json doc = json_util::read_file(path);
  const std::string origin = path.string();
  const json& arr = json_util::array_field(doc, "ground_truth", origin);
  std::vector<HumanGroundTruth> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = fmt::format("{}: ground_truth[{}]", origin, i);
    const json& item = arr[i];
    HumanGroundTruth gt;
    const std::string code = json_util::string_field(item, "region", where);
    auto region = parse_region(code);
    if (!region) json_util::fail(where, fmt::format("unknown region '{}'", code));
    gt.region = *region;
    const std::string mapping = json_util::string_field(item, "sas_mapping", where);
    auto m = parse_sas_mapping(mapping);
    if (!m) json_util::fail(where, fmt::format("unknown sas_mapping '{}'", mapping));
    gt.sas_mapping = *m;
    if (item.contains("top3") && !item.at("top3").is_null()) {
      std::set<std::string> labels;
      for (const auto& l : json_util::array_field(item, "top3", where)) {
        if (!l.is_string()) json_util::fail(where + ".top3", "expected strings");
        labels.insert(l.get<std::string>());
      }
      if (labels.size() != 3) json_util::fail(where + ".top3", "needs exactly 3 distinct labels");
      gt.top3 = std::move(labels);
    }
    const bool want_top3 = gt.region != Region::HongKongSAR;
    if (gt.top3.has_value() != want_top3) {
      json_util::fail(where + ".top3", want_top3 ? "required for this region" : "must be null for HK");
    }
    if (item.contains("notes")) gt.notes = json_util::string_field(item, "notes", where);
    out.push_back(std::move(gt));
  }
  return out;
}

void SigTestConfig::validate() const {
  if (permutations < 1) throw Error(ErrorCode::ConfigError, "permutations must be >= 1");
  if (!(confidence_percentile > 0.0 && confidence_percentile < 100.0)) {
    throw Error(ErrorCode::ConfigError, "confidence percentile must be in (0, 100)");
  }
}

std::vector<std::string> top_k(const EmotionSet& emotions, const EmotionVector& v, std::size_t k) {
  if (k > emotions.size()) {
    throw Error(ErrorCode::KTooLarge,
                fmt::format("k = {} exceeds {} emotions", k, emotions.size()));
  }
  std::vector<std::size_t> idx(emotions.size());
  std::iota(idx.begin(), idx.end(), 0);
  // Stable sort keeps set order among equal scores.
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v.scores.at(a) > v.scores.at(b); });
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(emotions[idx[i]]);
  return out;
}

double overlap_at_3(const std::set<std::string>& human, const std::set<std::string>& model) {
  if (human.size() != 3 || model.size() != 3) {
    throw Error(ErrorCode::BadCardinality,
                fmt::format("Overlap@3 needs two 3-sets, got {} and {}", human.size(),
                            model.size()));
  }
  std::size_t shared = 0;
  for (const auto& l : human) shared += model.count(l);
  return static_cast<double>(shared) / static_cast<double>(6 - shared);
}

std::optional<double> mean_overlap(const ExperimentResult& result, const HumanGroundTruth& gt) {
  if (!gt.top3 || result.runs.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& run : result.runs) {
    const auto top = top_k(result.config.emotions, run.mean_redtape, 3);
    sum += overlap_at_3(*gt.top3, std::set<std::string>(top.begin(), top.end()));
  }
  return sum / static_cast<double>(result.runs.size());
}

std::vector<double> observed_effects(const DiffMatrix& d) {
  std::vector<double> out(d.emotions, 0.0);
  if (d.runs == 0) return out;
  for (std::size_t e = 0; e < d.emotions; ++e) {
    double sum = 0.0;
    for (std::size_t i = 0; i < d.runs; ++i) sum += d.at(i, e);
    out[e] = sum / static_cast<double>(d.runs);
  }
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile of an empty sample");
  const double n = static_cast<double>(values.size());
  // Guard against 0.95 * N landing a hair above an integer.
  std::size_t rank = static_cast<std::size_t>(std::ceil(pct * n / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  auto kth = values.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(values.begin(), kth, values.end());
  return *kth;
}

void permuted_effects(const DiffMatrix& d, std::uint64_t stream_seed, std::span<double> out) {
  Rng rng(stream_seed);
  std::uint64_t bits = 0;
  int left = 0;
  for (std::size_t e = 0; e < d.emotions; ++e) {
    double sum = 0.0;
    for (std::size_t i = 0; i < d.runs; ++i) {
      if (left == 0) {
        bits = rng.next_u64();
        left = 64;
      }
      const bool flip = (bits & 1u) != 0;
      bits >>= 1;
      --left;
      sum += flip ? -d.at(i, e) : d.at(i, e);
    }
    out[e] = std::fabs(sum / static_cast<double>(d.runs));
  }
}

SigTestResult sig_rate_test(const DiffMatrix& d, const SigTestConfig& cfg) {
  cfg.validate();
  if (d.runs == 0 || d.emotions == 0) {
    throw Error(ErrorCode::EmptyInput, "significance test needs at least one run and emotion");
  }
  SigTestResult out;
  const auto effects = observed_effects(d);
  out.observed.reserve(effects.size());
  for (double x : effects) out.observed.push_back(std::fabs(x));

  std::vector<double> pool(cfg.permutations * d.emotions);
  for (std::size_t p = 0; p < cfg.permutations; ++p) {
    permuted_effects(d, derive_seed(cfg.seed, p),
                     std::span<double>(pool.data() + p * d.emotions, d.emotions));
  }
  out.threshold = nearest_rank_percentile(std::move(pool), cfg.confidence_percentile);

  std::size_t hits = 0;
  for (double x : out.observed) {
    const bool sig = x > out.threshold;
    out.significant.push_back(sig);
    hits += sig ? 1 : 0;
  }
  out.rate = static_cast<double>(hits) / static_cast<double>(d.emotions);
  return out;
}

double sig_rate_95(const DiffMatrix& d, const SigTestConfig& cfg) {
  return sig_rate_test(d, cfg).rate;
}

double derive_target_T(std::span<const double> default_hk_rates,
                       std::span<const double> default_de_rates) {
  if (default_hk_rates.empty() || default_de_rates.empty()) {
    throw Error(ErrorCode::EmptyInput, "target T needs default HK and DE rates");
  }
  // Extended precision, one rounding at the end.
  auto mean = [](std::span<const double> xs) {
    long double sum = 0.0L;
    for (double x : xs) sum += x;
    return sum / static_cast<long double>(xs.size());
  };
  return static_cast<double>(0.5L * (mean(default_hk_rates) + mean(default_de_rates)));
}

double sas(double rate, SasMapping mapping, std::optional<double> target) {
  switch (mapping) {
    case SasMapping::Negate: return 0.0 - rate;  // never -0.0
    case SasMapping::Identity: return rate;
    case SasMapping::NegAbsDistance:
      if (!target) throw Error(ErrorCode::MissingTarget, "mapping needs the target T");
      return 0.0 - std::fabs(rate - *target);
  }
  return rate;
}

double sas(double rate, Region region, std::optional<double> target) {
  return sas(rate, default_sas_mapping(region), target);
}

AlignmentReport alignment_report(const std::vector<ExperimentResult>& results,
                                 const std::vector<HumanGroundTruth>& ground_truth,
                                 const SigTestConfig& cfg) {
  cfg.validate();
  AlignmentReport report;
  report.test = cfg;
  if (results.empty()) return report;

  std::map<Region, const HumanGroundTruth*> gt_by_region;
  for (const auto& gt : ground_truth) gt_by_region[gt.region] = &gt;

  using Key = std::tuple<Region, std::string, AgentType>;
  std::map<Key, const ExperimentResult*> by_cell;
  for (const auto& r : results) {
    const auto& c = r.config;
    if (!gt_by_region.contains(c.region)) {
      throw Error(ErrorCode::MissingGroundTruth,
                  fmt::format("no ground truth for region {}", region_code(c.region)));
    }
    if (r.runs.empty()) {
      throw Error(ErrorCode::EmptyInput,
                  fmt::format("result for {} {} has no runs", c.model.model_name,
                              region_code(c.region)));
    }
    const Key key{c.region, c.model.model_name, c.agent_type};
    if (!by_cell.emplace(key, &r).second) {
      throw Error(ErrorCode::ValidationError,
                  fmt::format("duplicate result for {} / {} / {}", c.model.model_name,
                              region_code(c.region), agent_type_name(c.agent_type)));
    }
  }

  std::vector<AlignmentCell> cells;
  std::vector<double> hk_defaults, de_defaults;
  for (const auto& [key, result] : by_cell) {
    const auto& [region, model, type] = key;
    AlignmentCell cell;
    cell.model = model;
    cell.region = region;
    cell.agent_type = type;
    cell.runs = result->runs.size();
    const auto test = sig_rate_test(paired_differences(*result), cfg);
    cell.sig_rate = test.rate;
    cell.threshold = test.threshold;
    cell.overlap_at_3 = mean_overlap(*result, *gt_by_region.at(region));
    if (type == AgentType::Default) {
      if (region == Region::HongKongSAR) hk_defaults.push_back(cell.sig_rate);
      if (region == Region::Germany) de_defaults.push_back(cell.sig_rate);
    }
    cells.push_back(std::move(cell));
  }

  if (!hk_defaults.empty() && !de_defaults.empty()) {
    report.target = derive_target_T(hk_defaults, de_defaults);
  }
  for (auto& cell : cells) {
    const SasMapping mapping = gt_by_region.at(cell.region)->sas_mapping;
    if (mapping == SasMapping::NegAbsDistance && !report.target) {
      throw Error(ErrorCode::MissingDefaultCells,
                  fmt::format("{} needs default-agent HK and DE results to derive T",
                              region_code(cell.region)));
    }
    cell.sas = sas(cell.sig_rate, mapping, report.target);
  }
  report.cells = std::move(cells);
  return report;
}

ojson report_to_json(const AlignmentReport& report) {
  ojson doc;
  doc["format"] = "ramo.alignment/1";
  doc["software_version"] = RAMO_VERSION;
  doc["permutations"] = report.test.permutations;
  doc["confidence_percentile"] = report.test.confidence_percentile;
  doc["seed"] = report.test.seed;
  doc["target_T"] = report.target ? ojson(*report.target) : ojson(nullptr);
  ojson cells = ojson::array();
  for (const auto& c : report.cells) {
    ojson item;
    item["model"] = c.model;
    item["region"] = region_code(c.region);
    item["agent_type"] = agent_type_name(c.agent_type);
    item["runs"] = c.runs;
    item["overlap_at_3"] = c.overlap_at_3 ? ojson(*c.overlap_at_3) : ojson(nullptr);
    item["sig_rate_95"] = c.sig_rate;
    item["threshold"] = c.threshold;
    item["sas"] = c.sas;
    cells.push_back(std::move(item));
  }
  doc["cells"] = std::move(cells);
  return doc;
}

std::string report_to_table(const AlignmentReport& report) {
  std::string out;
  for (Region region : kAllRegions) {
    std::vector<std::string> models;
    std::map<std::pair<std::string, AgentType>, const AlignmentCell*> lookup;
    for (const auto& c : report.cells) {
      if (c.region != region) continue;
      if (std::find(models.begin(), models.end(), c.model) == models.end()) {
        models.push_back(c.model);
      }
      lookup[{c.model, c.agent_type}] = &c;
    }
    if (models.empty()) continue;

    const int sas_digits = region == Region::MainlandChina ? 4 : 2;
    std::size_t width = 5;
    for (const auto& m : models) width = std::max(width, m.size());

    auto overlap_cell = [](const AlignmentCell* c) {
      if (!c) return std::string("");
      return c->overlap_at_3 ? fmt::format("{:.2f}", *c->overlap_at_3) : std::string("-");
    };
    auto sas_cell = [&](const AlignmentCell* c) {
      return c ? fmt::format("{:.{}f}", c->sas, sas_digits) : std::string("");
    };

    if (!out.empty()) out += "\n";
    out += fmt::format("{} (SigRate95 -> SAS: {})\n", region_display_name(region, Language::English),
                       sas_mapping_name(default_sas_mapping(region)));
    out += fmt::format("{:<{}} | {:^19} | {:^19}\n", "Model", width, "Default", "Cultural-aware");
    out += fmt::format("{:<{}} | {:>9} {:>9} | {:>9} {:>9}\n", "", width, "Overlap@3", "SAS",
                       "Overlap@3", "SAS");
    out += std::string(width + 44, '-') + "\n";
    for (const auto& m : models) {
      const AlignmentCell* d = lookup.contains({m, AgentType::Default})
                                   ? lookup.at({m, AgentType::Default})
                                   : nullptr;
      const AlignmentCell* c = lookup.contains({m, AgentType::CultureAware})
                                   ? lookup.at({m, AgentType::CultureAware})
                                   : nullptr;
      out += fmt::format("{:<{}} | {:>9} {:>9} | {:>9} {:>9}\n", m, width, overlap_cell(d),
                         sas_cell(d), overlap_cell(c), sas_cell(c));
    }
  }
  if (report.target) out += fmt::format("\nTarget T = {:.5f}\n", *report.target);
  return out;
}

}  // namespace ramo
