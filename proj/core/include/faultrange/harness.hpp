#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "faultrange/dataset.hpp"
#include "faultrange/fault_inject.hpp"
#include "faultrange/graph.hpp"
#include "faultrange/protection.hpp"

namespace faultrange {

enum class Outcome { correct, sdc, due };

std::string_view to_string(Outcome outcome) noexcept;

/// One faulted inference of a baseline-correct image.
struct RunRecord {
  std::size_t image = 0;
  std::size_t true_label = 0;
  std::size_t baseline_prediction = 0;
  std::optional<std::size_t> prediction;  // absent for DUE
  std::optional<Due> due;
  bool any_oob = false;
  std::vector<std::size_t> oob_counts;  // per protection point, model order
  std::uint64_t epoch = 0;
  std::vector<BitIndex> flipped_bits;
};

/// due if the pass aborted, sdc if the top-1 class moved away from the
/// fault-free prediction, correct otherwise.
Outcome classify_outcome(const RunRecord& record);

struct Confusion {
  std::size_t true_label = 0;
  std::size_t predicted = 0;

  friend auto operator<=>(const Confusion&, const Confusion&) = default;
};

/// Raw event counts. Everything reported is derived from these.
struct CampaignCounts {
  std::uint64_t runs = 0;
  std::uint64_t correct = 0;
  std::uint64_t sdc = 0;
  std::uint64_t due = 0;
  // Joint counts; the six of them partition `runs`.
  std::uint64_t sdc_oob = 0;
  std::uint64_t sdc_ib = 0;
  std::uint64_t cl_oob = 0;
  std::uint64_t cl_ib = 0;
  std::uint64_t due_oob = 0;
  std::uint64_t due_ib = 0;
  // Single-fault campaigns only: runs / SDC / DUE per flipped bit position.
  std::array<std::uint64_t, 32> runs_by_bit{};
  std::array<std::uint64_t, 32> sdc_by_bit{};
  std::array<std::uint64_t, 32> due_by_bit{};
  std::map<Confusion, std::uint64_t> confusions;  // SDC runs only
  std::vector<std::uint64_t> oob_runs_by_point;   // runs where each point fired

  std::uint64_t oob() const noexcept { return sdc_oob + cl_oob + due_oob; }
  std::uint64_t ib() const noexcept { return sdc_ib + cl_ib + due_ib; }

  void add(const RunRecord& record, Outcome outcome, std::size_t faults_per_run);
  CampaignCounts& operator+=(const CampaignCounts& other);
  friend bool operator==(const CampaignCounts&, const CampaignCounts&) = default;
};

struct CampaignConfig {
  Policy policy = Policy::none;
  FaultKind kind = FaultKind::weight;
  std::size_t faults_per_run = 1;  // k
  std::vector<BitIndex> bits = parse_bits(kDefaultBits);
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  SamplingOptions sampling;
};

struct CampaignReport {
  Policy policy = Policy::none;
  FaultKind kind = FaultKind::weight;
  std::size_t faults_per_run = 0;
  std::vector<BitIndex> bits;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  bool include_bias = false;
  SiteSampling sampling = SiteSampling::element_uniform;
  std::string model_digest;
  std::string dataset_id;
  std::size_t images = 0;
  std::vector<std::string> class_names;
  std::vector<std::size_t> protection_points;
  CampaignCounts counts;

  friend bool operator==(const CampaignReport&, const CampaignReport&) = default;
};

/// Supplies the plan for (epoch, image); image is absent for weight plans.
using PlanProvider =
    std::function<FaultPlan(std::uint64_t epoch, std::optional<std::uint64_t> image)>;

/// Weight faults: one plan per epoch, shared by every image of the subset.
/// Neuron faults: a fresh plan for every (epoch, image). Work is split over
/// `config.workers` threads by epoch; counts are summed in epoch order, so the
/// report does not depend on the worker count. Every subset image must be
/// classified correctly by the fault-free, unprotected model.
CampaignReport run_campaign(const ModelGraph& model, const BoundsFile& bounds,
                            const Dataset& dataset, std::span<const std::size_t> subset,
                            const CampaignConfig& config, const PlanProvider& plans = {});

/// Executes one faulted inference and fills in a record (no aggregation).
RunRecord run_single(const ModelGraph& model, const BoundsFile& bounds, Policy policy,
                     const Tensor& image, std::size_t label, const FaultPlan& plan);

/// FNV-1a over the model's parameter bits, as 16 hex digits.
std::string model_digest(const ModelGraph& model);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for successes/n (n > 0); z = 1.96 gives 95 %.
Interval wilson_interval(std::uint64_t successes, std::uint64_t n, double z = 1.96);

/// SDC detector quality over the non-DUE runs. Precision is absent when no
/// run was out of bound; recall is absent when no SDC occurred.
struct DetectorMetrics {
  std::uint64_t non_due_runs = 0;
  std::optional<double> tp, fp, fn;
  std::optional<double> precision, recall;
};

DetectorMetrics detector_metrics(const CampaignCounts& counts);

/// Every rate the report exposes, recomputed from raw counts.
struct DerivedMetrics {
  std::optional<double> p_sdc, p_due, p_oob;
  std::optional<Interval> sdc_ci, due_ci;
  std::optional<double> p_sdc_given_oob, p_due_given_oob, p_cl_given_oob;
  std::optional<double> p_sdc_given_ib, p_due_given_ib;
  DetectorMetrics detector;
};

DerivedMetrics derive_metrics(const CampaignCounts& counts);

/// Class -> cluster mapping plus a vulnerability rank per cluster (higher is
/// more vulnerable).
struct ClusterConfig {
  std::map<std::string, std::string> class_to_cluster;
  std::map<std::string, int> cluster_rank;

  /// Throws ErrorCode::config for unmapped classes or unranked clusters.
  void validate(std::span<const std::string> class_names) const;
  int rank_of_class(const std::string& class_name) const;
};

/// A confusion is critical when the predicted class sits in a strictly less
/// vulnerable cluster than the true class.
bool is_critical(const ClusterConfig& clusters, const std::string& true_class,
                 const std::string& predicted_class);

struct SeverityResult {
  std::uint64_t sdc = 0;
  std::uint64_t critical = 0;
  std::optional<double> critical_fraction;  // critical / sdc
  std::optional<double> critical_rate;      // critical / runs
  std::vector<std::string> clusters;        // sorted by rank, ascending
  std::vector<std::vector<std::uint64_t>> cluster_matrix;  // [true][predicted]
};

SeverityResult severity_analysis(const CampaignReport& report, const ClusterConfig& clusters);

/// Inputs for one fault type of the risk model.
struct RiskTerm {
  double p_failure = 0.0;
  double p_detection = 0.0;
  double p_mitigation = 0.0;
  double severity = 0.0;
};

/// Sum over fault types of p_failure * ((1 - p_detection) + (1 - p_mitigation))
/// * severity. Probabilities outside [0, 1] are rejected.
double risk(std::span<const RiskTerm> terms);

/// Risk term from a report: detection = recall (1 when the campaign produced
/// no SDC to detect), mitigation = 1 - SDC rate.
RiskTerm risk_term(const CampaignReport& report, double p_failure, double severity);

struct BitAttribution {
  std::optional<std::array<double, 32>> given_sdc;  // p(bit | sdc)
  std::optional<std::array<double, 32>> given_due;  // p(bit | due)
  std::optional<double> msb_given_sdc;
  std::optional<double> msb_given_due;
};

/// Only defined for single-fault campaigns (ErrorCode::attribution otherwise).
BitAttribution bit_attribution(const CampaignReport& report);

/// One CSV header + row per report with every rate in the report. When
/// `clusters` is given, severity columns are appended; `p_failure` adds risk.
std::string reports_to_csv(std::span<const CampaignReport> reports,
                           const ClusterConfig* clusters = nullptr,
                           std::optional<double> p_failure = std::nullopt);

}  // namespace faultrange
