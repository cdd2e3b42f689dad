#include "faultrange/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "faultrange/error.hpp"

namespace faultrange {

std::string_view to_string(Outcome outcome) noexcept {
  switch (outcome) {
    case Outcome::correct: return "correct";
    case Outcome::sdc: return "sdc";
    case Outcome::due: return "due";
  }
  return "unknown";
}

Outcome classify_outcome(const RunRecord& record) {
  if (record.due || !record.prediction) return Outcome::due;
  return *record.prediction != record.baseline_prediction ? Outcome::sdc : Outcome::correct;
}

void CampaignCounts::add(const RunRecord& record, Outcome outcome, std::size_t faults_per_run) {
  ++runs;
  const bool oob = record.any_oob;
  switch (outcome) {
    case Outcome::correct:
      ++correct;
      ++(oob ? cl_oob : cl_ib);
      break;
    case Outcome::sdc:
      ++sdc;
      ++(oob ? sdc_oob : sdc_ib);
      ++confusions[{record.true_label, *record.prediction}];
      break;
    case Outcome::due:
      ++due;
      ++(oob ? due_oob : due_ib);
      break;
  }
  if (faults_per_run == 1 && record.flipped_bits.size() == 1) {
    const auto b = static_cast<std::size_t>(record.flipped_bits.front().position());
    ++runs_by_bit[b];
    if (outcome == Outcome::sdc) ++sdc_by_bit[b];
    if (outcome == Outcome::due) ++due_by_bit[b];
  }
  if (oob_runs_by_point.size() < record.oob_counts.size()) {
    oob_runs_by_point.resize(record.oob_counts.size(), 0);
  }
  for (std::size_t i = 0; i < record.oob_counts.size(); ++i) {
    if (record.oob_counts[i] > 0) ++oob_runs_by_point[i];
  }
}

CampaignCounts& CampaignCounts::operator+=(const CampaignCounts& o) {
  runs += o.runs;
  correct += o.correct;
  sdc += o.sdc;
  due += o.due;
  sdc_oob += o.sdc_oob;
  sdc_ib += o.sdc_ib;
  cl_oob += o.cl_oob;
  cl_ib += o.cl_ib;
  due_oob += o.due_oob;
  due_ib += o.due_ib;
  for (std::size_t b = 0; b < 32; ++b) {
    runs_by_bit[b] += o.runs_by_bit[b];
    sdc_by_bit[b] += o.sdc_by_bit[b];
    due_by_bit[b] += o.due_by_bit[b];
  }
  for (const auto& [pair, n] : o.confusions) confusions[pair] += n;
  if (oob_runs_by_point.size() < o.oob_runs_by_point.size()) {
    oob_runs_by_point.resize(o.oob_runs_by_point.size(), 0);
  }
  for (std::size_t i = 0; i < o.oob_runs_by_point.size(); ++i) {
    oob_runs_by_point[i] += o.oob_runs_by_point[i];
  }
  return *this;
}

std::string model_digest(const ModelGraph& model) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& layer : model.layers()) {
    for (const auto& p : layer.params) {
      for (float v : p.data()) {
        std::uint32_t bits = to_bits(v);
        for (int i = 0; i < 4; ++i) {
          h ^= (bits >> (8 * i)) & 0xFFu;
          h *= 0x100000001B3ULL;
        }
      }
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

/// Per-worker execution state: hooks reuse one OobRecord.
struct Runner {
  const ModelGraph& model;
  const std::vector<std::size_t>& points;
  OobRecord oob;
  LayerHook protection;

  Runner(const ModelGraph& m, const BoundsFile& bounds, Policy policy)
      : model(m), points(m.protection_points()),
        protection(make_protection_hook(m, bounds, policy, &oob)) {}

  RunRecord run(const ModelGraph& faulted, const Tensor& image, std::size_t index,
                std::size_t label, std::size_t baseline, const FaultPlan& plan) {
    oob.clear();
    std::vector<LayerHook> hooks;
    if (plan.kind == FaultKind::neuron && !plan.faults.empty()) {
      hooks.push_back(make_neuron_fault_hook(plan));
    }
    hooks.push_back(protection);
    const InferenceOutcome outcome = forward(faulted, image, hooks);

    RunRecord r;
    r.image = index;
    r.true_label = label;
    r.baseline_prediction = baseline;
    if (outcome.is_due()) {
      r.due = outcome.due();
    } else {
      r.prediction = predict(outcome.scores());
    }
    r.any_oob = oob.any();
    r.oob_counts.assign(points.size(), 0);
    for (const auto& e : oob.events) {
      const auto it = std::find(points.begin(), points.end(), e.protection_point);
      r.oob_counts[static_cast<std::size_t>(it - points.begin())] += e.count;
    }
    r.epoch = plan.epoch;
    for (const auto& f : plan.faults) r.flipped_bits.push_back(f.bit);
    return r;
  }
};

}  // namespace

RunRecord run_single(const ModelGraph& model, const BoundsFile& bounds, Policy policy,
                     const Tensor& image, std::size_t label, const FaultPlan& plan) {
  const auto base = forward(model, image);
  const std::size_t baseline = base.is_due() ? label : predict(base.scores());
  Runner runner(model, bounds, policy);
  if (plan.kind == FaultKind::weight) {
    const ModelGraph faulted = faulted_copy(model, plan);
    return runner.run(faulted, image, 0, label, baseline, plan);
  }
  return runner.run(model, image, 0, label, baseline, plan);
}

CampaignReport run_campaign(const ModelGraph& model, const BoundsFile& bounds,
                            const Dataset& dataset, std::span<const std::size_t> subset,
                            const CampaignConfig& config, const PlanProvider& plans) {
  if (subset.empty()) fail(ErrorCode::config, "campaign image subset is empty");
  if (config.epochs == 0) fail(ErrorCode::config, "campaign needs at least one epoch");
  if (config.bits.empty()) fail(ErrorCode::config, "campaign bit range is empty");
  bounds.validate(model);

  std::vector<std::size_t> baseline(subset.size());
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const std::size_t idx = subset[i];
    if (idx >= dataset.size()) fail(ErrorCode::config, "subset index " + std::to_string(idx) + " out of range");
    const auto out = forward(model, dataset.images[idx]);
    if (out.is_due() || predict(out.scores()) != dataset.labels[idx]) {
      fail(ErrorCode::config, "image " + std::to_string(idx) +
                                  " is not classified correctly by the fault-free model");
    }
    baseline[i] = dataset.labels[idx];
  }

  const PlanProvider provider =
      plans ? plans
            : PlanProvider([&](std::uint64_t epoch, std::optional<std::uint64_t> image) {
                return sample_plan(model, config.kind, config.faults_per_run, config.bits,
                                   config.seed, epoch, image, config.sampling);
              });

  std::vector<CampaignCounts> per_epoch(config.epochs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto worker = [&]() {
    try {
      ModelGraph local = model;
      Runner runner(local, bounds, config.policy);
      for (std::size_t e = next++; e < config.epochs; e = next++) {
        CampaignCounts& counts = per_epoch[e];
        if (config.kind == FaultKind::weight) {
          FaultPlan plan = provider(e, std::nullopt);
          validate_plan(model, plan);
          const RevertToken token = apply_weight_faults(local, plan);
          for (std::size_t i = 0; i < subset.size(); ++i) {
            const std::size_t idx = subset[i];
            RunRecord r = runner.run(local, dataset.images[idx], idx, dataset.labels[idx],
                                     baseline[i], plan);
            counts.add(r, classify_outcome(r), config.faults_per_run);
          }
          revert_weight_faults(local, token);
        } else {
          for (std::size_t i = 0; i < subset.size(); ++i) {
            const std::size_t idx = subset[i];
            FaultPlan plan = provider(e, idx);
            validate_plan(model, plan);
            RunRecord r = runner.run(local, dataset.images[idx], idx, dataset.labels[idx],
                                     baseline[i], plan);
            counts.add(r, classify_outcome(r), config.faults_per_run);
          }
        }
      }
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
      next = config.epochs;
    }
  };

  const std::size_t n_workers = std::clamp<std::size_t>(config.workers, 1, config.epochs);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  CampaignReport report;
  report.policy = config.policy;
  report.kind = config.kind;
  report.faults_per_run = config.faults_per_run;
  report.bits = config.bits;
  report.epochs = config.epochs;
  report.seed = config.seed;
  report.include_bias = config.sampling.include_bias;
  report.sampling = config.sampling.sampling;
  report.model_digest = model_digest(model);
  report.dataset_id = dataset.id;
  report.images = subset.size();
  report.class_names = model.class_names();
  report.protection_points = model.protection_points();
  report.counts.oob_runs_by_point.assign(model.protection_points().size(), 0);
  for (const auto& c : per_epoch) report.counts += c;
  return report;
}

Interval wilson_interval(std::uint64_t successes, std::uint64_t n, double z) {
  if (n == 0) fail(ErrorCode::config, "Wilson interval needs n > 0");
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

DetectorMetrics detector_metrics(const CampaignCounts& c) {
  DetectorMetrics m;
  m.non_due_runs = c.sdc_oob + c.sdc_ib + c.cl_oob + c.cl_ib;
  // tp = p(sdc|oob) p(oob) etc. reduce to joint-count ratios over non-DUE runs.
  m.tp = ratio(c.sdc_oob, m.non_due_runs);
  m.fp = ratio(c.cl_oob, m.non_due_runs);
  m.fn = ratio(c.sdc_ib, m.non_due_runs);
  m.precision = ratio(c.sdc_oob, c.sdc_oob + c.cl_oob);
  m.recall = ratio(c.sdc_oob, c.sdc_oob + c.sdc_ib);
  return m;
}

DerivedMetrics derive_metrics(const CampaignCounts& c) {
  DerivedMetrics d;
  d.p_sdc = ratio(c.sdc, c.runs);
  d.p_due = ratio(c.due, c.runs);
  d.p_oob = ratio(c.oob(), c.runs);
  if (c.runs > 0) {
    d.sdc_ci = wilson_interval(c.sdc, c.runs);
    d.due_ci = wilson_interval(c.due, c.runs);
  }
  d.p_sdc_given_oob = ratio(c.sdc_oob, c.oob());
  d.p_due_given_oob = ratio(c.due_oob, c.oob());
  d.p_cl_given_oob = ratio(c.cl_oob, c.oob());
  d.p_sdc_given_ib = ratio(c.sdc_ib, c.ib());
  d.p_due_given_ib = ratio(c.due_ib, c.ib());
  d.detector = detector_metrics(c);
  return d;
}

void ClusterConfig::validate(std::span<const std::string> class_names) const {
  for (const auto& name : class_names) {
    const auto it = class_to_cluster.find(name);
    if (it == class_to_cluster.end()) {
      fail(ErrorCode::config, "class '" + name + "' is not mapped to a cluster");
    }
    if (!cluster_rank.contains(it->second)) {
      fail(ErrorCode::config, "cluster '" + it->second + "' has no vulnerability rank");
    }
  }
}

int ClusterConfig::rank_of_class(const std::string& class_name) const {
  const auto it = class_to_cluster.find(class_name);
  if (it == class_to_cluster.end()) {
    fail(ErrorCode::config, "class '" + class_name + "' is not mapped to a cluster");
  }
  const auto r = cluster_rank.find(it->second);
  if (r == cluster_rank.end()) {
    fail(ErrorCode::config, "cluster '" + it->second + "' has no vulnerability rank");
  }
  return r->second;
}

bool is_critical(const ClusterConfig& clusters, const std::string& true_class,
                 const std::string& predicted_class) {
  return clusters.rank_of_class(predicted_class) < clusters.rank_of_class(true_class);
}

SeverityResult severity_analysis(const CampaignReport& report, const ClusterConfig& clusters) {
  clusters.validate(report.class_names);
  SeverityResult s;
  for (const auto& [name, rank] : clusters.cluster_rank) s.clusters.push_back(name);
  std::stable_sort(s.clusters.begin(), s.clusters.end(), [&](const auto& a, const auto& b) {
    return clusters.cluster_rank.at(a) < clusters.cluster_rank.at(b);
  });
  auto cluster_index = [&](std::size_t cls) {
    const auto& c = clusters.class_to_cluster.at(report.class_names.at(cls));
    return static_cast<std::size_t>(std::find(s.clusters.begin(), s.clusters.end(), c) -
                                    s.clusters.begin());
  };
  s.cluster_matrix.assign(s.clusters.size(), std::vector<std::uint64_t>(s.clusters.size(), 0));
  for (const auto& [pair, n] : report.counts.confusions) {
    if (pair.true_label >= report.class_names.size() || pair.predicted >= report.class_names.size()) {
      fail(ErrorCode::config, "confusion references a class outside the report's class list");
    }
    s.sdc += n;
    s.cluster_matrix[cluster_index(pair.true_label)][cluster_index(pair.predicted)] += n;
    if (is_critical(clusters, report.class_names[pair.true_label],
                    report.class_names[pair.predicted])) {
      s.critical += n;
    }
  }
  s.critical_fraction = ratio(s.critical, s.sdc);
  s.critical_rate = ratio(s.critical, report.counts.runs);
  return s;
}

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    fail(ErrorCode::config, std::string(name) + " must lie in [0, 1], got " + std::to_string(p));
  }
}

}  // namespace

double risk(std::span<const RiskTerm> terms) {
  double total = 0.0;
  for (const auto& t : terms) {
    check_probability(t.p_failure, "p_failure");
    check_probability(t.p_detection, "p_detection");
    check_probability(t.p_mitigation, "p_mitigation");
    check_probability(t.severity, "severity");
    const double p_loss = t.p_failure * ((1.0 - t.p_detection) + (1.0 - t.p_mitigation));
    total += p_loss * t.severity;
  }
  return total;
}

RiskTerm risk_term(const CampaignReport& report, double p_failure, double severity) {
  const auto d = derive_metrics(report.counts);
  RiskTerm t;
  t.p_failure = p_failure;
  t.p_detection = d.detector.recall.value_or(1.0);
  t.p_mitigation = 1.0 - d.p_sdc.value_or(0.0);
  t.severity = severity;
  return t;
}

BitAttribution bit_attribution(const CampaignReport& report) {
  if (report.faults_per_run != 1) {
    fail(ErrorCode::attribution, "bit attribution needs a single-fault campaign (k = 1), got k = " +
                                     std::to_string(report.faults_per_run));
  }
  const auto& c = report.counts;
  BitAttribution a;
  auto fill = [](const std::array<std::uint64_t, 32>& by_bit, std::uint64_t total) {
    std::array<double, 32> out{};
    for (std::size_t b = 0; b < 32; ++b) {
      out[b] = static_cast<double>(by_bit[b]) / static_cast<double>(total);
    }
    return out;
  };
  if (c.sdc > 0) {
    a.given_sdc = fill(c.sdc_by_bit, c.sdc);
    a.msb_given_sdc = (*a.given_sdc)[BitIndex::kExponentMsb];
  }
  if (c.due > 0) {
    a.given_due = fill(c.due_by_bit, c.due);
    a.msb_given_due = (*a.given_due)[BitIndex::kExponentMsb];
  }
  return a;
}

namespace {

std::string csv_value(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", *v);
  return buf;
}

}  // namespace

std::string reports_to_csv(std::span<const CampaignReport> reports, const ClusterConfig* clusters,
                           std::optional<double> p_failure) {
  std::ostringstream out;
  out << "policy,kind,k,bits,epochs,images,seed,runs,correct,sdc,due,oob,ib,"
         "sdc_rate,sdc_lo,sdc_hi,due_rate,due_lo,due_hi,p_oob,p_sdc_given_oob,"
         "p_due_given_oob,p_sdc_given_ib,tp,fp,fn,precision,recall,p_msb_given_sdc,"
         "p_msb_given_due";
  if (clusters) out << ",critical_sdc,critical_fraction";
  if (p_failure) out << ",risk";
  out << '\n';
  for (const auto& r : reports) {
    const auto& c = r.counts;
    const auto d = derive_metrics(c);
    std::optional<double> msb_sdc, msb_due;
    if (r.faults_per_run == 1) {
      const auto a = bit_attribution(r);
      msb_sdc = a.msb_given_sdc;
      msb_due = a.msb_given_due;
    }
    out << to_string(r.policy) << ',' << to_string(r.kind) << ',' << r.faults_per_run << ",\""
        << format_bits(r.bits) << "\"," << r.epochs << ',' << r.images << ',' << r.seed << ','
        << c.runs << ',' << c.correct << ',' << c.sdc << ',' << c.due << ',' << c.oob() << ','
        << c.ib() << ',' << csv_value(d.p_sdc) << ','
        << csv_value(d.sdc_ci ? std::optional(d.sdc_ci->lo) : std::nullopt) << ','
        << csv_value(d.sdc_ci ? std::optional(d.sdc_ci->hi) : std::nullopt) << ','
        << csv_value(d.p_due) << ','
        << csv_value(d.due_ci ? std::optional(d.due_ci->lo) : std::nullopt) << ','
        << csv_value(d.due_ci ? std::optional(d.due_ci->hi) : std::nullopt) << ','
        << csv_value(d.p_oob) << ',' << csv_value(d.p_sdc_given_oob) << ','
        << csv_value(d.p_due_given_oob) << ',' << csv_value(d.p_sdc_given_ib) << ','
        << csv_value(d.detector.tp) << ',' << csv_value(d.detector.fp) << ','
        << csv_value(d.detector.fn) << ',' << csv_value(d.detector.precision) << ','
        << csv_value(d.detector.recall) << ',' << csv_value(msb_sdc) << ','
        << csv_value(msb_due);
    double severity = 1.0;
    if (clusters) {
      const auto s = severity_analysis(r, *clusters);
      out << ',' << s.critical << ',' << csv_value(s.critical_fraction);
      severity = s.critical_fraction.value_or(0.0);
    }
    if (p_failure) {
      const RiskTerm t = risk_term(r, *p_failure, severity);
      out << ',' << csv_value(risk(std::span(&t, 1)));
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace faultrange
