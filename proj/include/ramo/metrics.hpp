#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ramo/gateway.hpp"
#include "ramo/orchestrator.hpp"
#include "ramo/region.hpp"

namespace ramo {

// How a significance rate R becomes an alignment score for one culture.
enum class SasMapping {
  Negate,          // -R: humans showed no significant pattern
  Identity,        // R: humans reacted strongly
  NegAbsDistance,  // -|R - T|: humans sat in between
};

std::string_view sas_mapping_name(SasMapping m);
std::optional<SasMapping> parse_sas_mapping(std::string_view name);
SasMapping default_sas_mapping(Region region);

struct HumanGroundTruth {
  Region region = Region::HongKongSAR;
  // Unordered; absent when the human data showed no salient emotions.
  std::optional<std::set<std::string>> top3;
  SasMapping sas_mapping = SasMapping::Identity;
  std::string notes;
};

// [{"region", "top3": [..] | null, "sas_mapping", "notes"}]
std::vector<HumanGroundTruth> load_ground_truth(const std::filesystem::path& path);

struct SigTestConfig {
  std::size_t permutations = 2000;
  double confidence_percentile = 95.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Labels of the k largest scores, largest first. Ties go to the label that
// comes first in the set. Throws KTooLarge when k > |set|.
std::vector<std::string> top_k(const EmotionSet& emotions, const EmotionVector& v, std::size_t k);

// Jaccard similarity of two 3-sets. Throws BadCardinality otherwise.
double overlap_at_3(const std::set<std::string>& human, const std::set<std::string>& model);

// Mean over runs of Overlap@3 between the ground truth and each run's
// red-tape mean top-3. Absent when the ground truth has no top-3.
std::optional<double> mean_overlap(const ExperimentResult& result, const HumanGroundTruth& gt);

// Column means of d: the observed red-tape effect per emotion.
std::vector<double> observed_effects(const DiffMatrix& d);

// Smallest value with at least pct% of the sample at or below it.
double nearest_rank_percentile(std::vector<double> values, double pct);

struct SigTestResult {
  double rate = 0.0;       // R
  double threshold = 0.0;  // tau
  std::vector<double> observed;  // |Delta_e|
  std::vector<bool> significant;
};

// Paired sign-flip permutation test with a null pooled across emotions.
// Permutation p draws its flips from its own stream derive_seed(cfg.seed, p).
SigTestResult sig_rate_test(const DiffMatrix& d, const SigTestConfig& cfg);
double sig_rate_95(const DiffMatrix& d, const SigTestConfig& cfg);

// Pooled null values for one permutation's sign stream, exposed so tests can
// check the stream assignment. out.size() == d.emotions.
void permuted_effects(const DiffMatrix& d, std::uint64_t stream_seed, std::span<double> out);

// T = (mean(hk) + mean(de)) / 2. Throws EmptyInput.
double derive_target_T(std::span<const double> default_hk_rates,
                       std::span<const double> default_de_rates);

double sas(double rate, SasMapping mapping, std::optional<double> target);
// Uses the region's default mapping. Throws MissingTarget for MainlandChina
// without T.
double sas(double rate, Region region, std::optional<double> target);

struct AlignmentCell {
  std::string model;
  Region region = Region::HongKongSAR;
  AgentType agent_type = AgentType::Default;
  std::optional<double> overlap_at_3;
  double sig_rate = 0.0;
  double sas = 0.0;
  double threshold = 0.0;
  std::size_t runs = 0;
};

struct AlignmentReport {
  SigTestConfig test;
  std::optional<double> target;
  std::vector<AlignmentCell> cells;  // sorted by region, model, agent type
};

// One cell per (model, region, agent type). T comes from the default-agent
// HK and DE cells of the same report.
AlignmentReport alignment_report(const std::vector<ExperimentResult>& results,
                                 const std::vector<HumanGroundTruth>& ground_truth,
                                 const SigTestConfig& cfg);

nlohmann::ordered_json report_to_json(const AlignmentReport& report);
// One table per region, Default | Cultural-aware column pairs. Regions are
// never ranked against each other.
std::string report_to_table(const AlignmentReport& report);

}  // namespace ramo
