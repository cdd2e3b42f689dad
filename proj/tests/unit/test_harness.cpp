#include <gtest/gtest.h>

#include <mutex>
#include <sstream>

#include "faultrange/error.hpp"
#include "faultrange/harness.hpp"
#include "fixture.hpp"

namespace faultrange {
namespace {

CampaignCounts counts(std::uint64_t sdc_oob, std::uint64_t sdc_ib, std::uint64_t cl_oob,
                      std::uint64_t cl_ib, std::uint64_t due_oob = 0, std::uint64_t due_ib = 0) {
  CampaignCounts c;
  c.sdc_oob = sdc_oob;
  c.sdc_ib = sdc_ib;
  c.cl_oob = cl_oob;
  c.cl_ib = cl_ib;
  c.due_oob = due_oob;
  c.due_ib = due_ib;
  c.sdc = sdc_oob + sdc_ib;
  c.correct = cl_oob + cl_ib;
  c.due = due_oob + due_ib;
  c.runs = c.sdc + c.correct + c.due;
  return c;
}

TEST(Classify, Outcomes) {
  RunRecord r;
  r.true_label = 0;
  r.baseline_prediction = 0;
  r.prediction = 7;
  EXPECT_EQ(classify_outcome(r), Outcome::sdc);
  r.prediction = 0;
  r.any_oob = true;
  EXPECT_EQ(classify_outcome(r), Outcome::correct);
  r.prediction.reset();
  r.due = Due{3, NonFiniteKind::nan, 0};
  EXPECT_EQ(classify_outcome(r), Outcome::due);
}

TEST(Detector, NinetyPercentPrecision) {
  const auto m = detector_metrics(counts(9, 0, 1, 90));
  EXPECT_EQ(m.non_due_runs, 100u);
  EXPECT_EQ(*m.precision, 0.9);
  EXPECT_EQ(*m.recall, 1.0);
  EXPECT_EQ(*m.tp, 0.09);
  EXPECT_EQ(*m.fp, 0.01);
  EXPECT_EQ(*m.fn, 0.0);
}

TEST(Detector, DueRunsAreExcluded) {
  const CampaignCounts c = counts(30, 10, 10, 120, 20, 10);
  const auto d = derive_metrics(c);
  EXPECT_EQ(d.detector.non_due_runs, 170u);
  EXPECT_EQ(*d.detector.tp, 30.0 / 170.0);
  EXPECT_EQ(*d.detector.fp, 10.0 / 170.0);
  EXPECT_EQ(*d.detector.fn, 10.0 / 170.0);
  EXPECT_EQ(*d.detector.precision, 0.75);
  EXPECT_EQ(*d.detector.recall, 0.75);
  EXPECT_EQ(*d.p_sdc, 0.2);
  EXPECT_EQ(*d.p_due, 0.15);
  EXPECT_EQ(*d.p_oob, 0.3);
  EXPECT_EQ(*d.p_sdc_given_oob, 0.5);
  EXPECT_EQ(*d.p_due_given_oob, 20.0 / 60.0);
  EXPECT_EQ(*d.p_cl_given_oob, 10.0 / 60.0);
  EXPECT_EQ(*d.p_sdc_given_ib, 10.0 / 140.0);
  EXPECT_EQ(*d.p_due_given_ib, 10.0 / 140.0);
}

TEST(Detector, DegenerateCases) {
  const auto all = detector_metrics(counts(10, 0, 0, 0));
  EXPECT_EQ(*all.precision, 1.0);
  EXPECT_EQ(*all.recall, 1.0);
  const auto blind = detector_metrics(counts(0, 5, 0, 95));
  EXPECT_EQ(*blind.recall, 0.0);
  EXPECT_FALSE(blind.precision.has_value());
  EXPECT_EQ(*blind.fn, 0.05);
  const auto clean = detector_metrics(counts(0, 0, 2, 98));
  EXPECT_FALSE(clean.recall.has_value());
  EXPECT_EQ(*clean.precision, 0.0);
  const auto empty = detector_metrics(counts(0, 0, 0, 0, 3, 0));
  EXPECT_FALSE(empty.tp.has_value());
}

TEST(Wilson, MatchesOracle) {
  const auto a = wilson_interval(9, 100);
  EXPECT_NEAR(a.lo, 0.04807199516388488, 1e-15);
  EXPECT_NEAR(a.hi, 0.16226374696643667, 1e-15);
  const auto b = wilson_interval(0, 50);
  EXPECT_EQ(b.lo, 0.0);
  EXPECT_NEAR(b.hi, 0.07135003417431873, 1e-15);
}

CampaignReport report_with(const std::vector<std::string>& classes, std::map<Confusion, std::uint64_t> conf) {
  CampaignReport r;
  r.class_names = classes;
  r.faults_per_run = 1;
  std::uint64_t sdc = 0;
  for (const auto& [k, n] : conf) sdc += n;
  r.counts = counts(sdc, 0, 0, 100);
  r.counts.confusions = std::move(conf);
  return r;
}

ClusterConfig road_clusters() {
  ClusterConfig c;
  c.cluster_rank = {{"vru", 2}, {"vehicle", 1}, {"background", 0}};
  c.class_to_cluster = {{"pedestrian", "vru"}, {"cyclist", "vru"}, {"car", "vehicle"}, {"background", "background"}};
  return c;
}

TEST(Severity, CriticalDirection) {
  const auto c = road_clusters();
  EXPECT_TRUE(is_critical(c, "pedestrian", "background"));
  EXPECT_FALSE(is_critical(c, "car", "pedestrian"));
  EXPECT_FALSE(is_critical(c, "pedestrian", "cyclist"));
  EXPECT_THROW(is_critical(c, "tram", "car"), Error);
}

TEST(Severity, CraftedConfusions) {
  // classes: 0 pedestrian, 1 cyclist, 2 car, 3 background
  const auto r = report_with({"pedestrian", "cyclist", "car", "background"},
                             {{{0, 3}, 4}, {{2, 0}, 3}, {{2, 3}, 2}, {{0, 2}, 1}, {{0, 1}, 5}});
  const auto s = severity_analysis(r, road_clusters());
  EXPECT_EQ(s.sdc, 15u);
  EXPECT_EQ(s.critical, 7u);
  EXPECT_EQ(*s.critical_fraction, 7.0 / 15.0);
  EXPECT_EQ(*s.critical_rate, 7.0 / 115.0);
  EXPECT_EQ(s.clusters, (std::vector<std::string>{"background", "vehicle", "vru"}));
  // [true][predicted] in ascending rank order.
  EXPECT_EQ(s.cluster_matrix[2][0], 4u);
  EXPECT_EQ(s.cluster_matrix[2][1], 1u);
  EXPECT_EQ(s.cluster_matrix[2][2], 5u);
  EXPECT_EQ(s.cluster_matrix[1][2], 3u);
  EXPECT_EQ(s.cluster_matrix[1][0], 2u);
  auto missing = road_clusters();
  missing.class_to_cluster.erase("car");
  EXPECT_THROW(severity_analysis(r, missing), Error);
}

TEST(Severity, NoSdc) {
  const auto s = severity_analysis(report_with({"pedestrian", "cyclist", "car", "background"}, {}), road_clusters());
  EXPECT_EQ(s.critical, 0u);
  EXPECT_FALSE(s.critical_fraction.has_value());
}

TEST(Risk, Examples) {
  const RiskTerm t{1.0, 0.9, 0.95, 1.0};
  // (1 - 0.9) + (1 - 0.95) rounded once from the exact sum of the double inputs.
  EXPECT_EQ(risk(std::span(&t, 1)), 0.15000000000000002);
  EXPECT_NEAR(risk(std::span(&t, 1)), 0.15, 1e-15);
  const RiskTerm perfect{0.3, 1.0, 1.0, 1.0};
  EXPECT_EQ(risk(std::span(&perfect, 1)), 0.0);
  const std::vector<RiskTerm> harmless{{1.0, 0.2, 0.1, 0.0}, {0.5, 0.0, 0.0, 0.0}};
  EXPECT_EQ(risk(harmless), 0.0);
  const std::vector<RiskTerm> two{{0.5, 0.5, 0.75, 1.0}, {0.25, 1.0, 0.5, 0.5}};
  EXPECT_EQ(risk(two), 0.5 * 0.75 + 0.25 * 0.5 * 0.5);
  const RiskTerm bad{1.5, 0.5, 0.5, 1.0};
  EXPECT_THROW(risk(std::span(&bad, 1)), Error);
}

TEST(Risk, FromReport) {
  CampaignReport r;
  r.counts = counts(9, 1, 0, 190);  // recall 0.9, p_sdc 0.05
  const RiskTerm t = risk_term(r, 1.0, 1.0);
  EXPECT_EQ(t.p_detection, 0.9);
  EXPECT_EQ(t.p_mitigation, 0.95);
  EXPECT_EQ(risk(std::span(&t, 1)), 0.15000000000000002);
  r.counts = counts(0, 0, 0, 10);
  EXPECT_EQ(risk_term(r, 1.0, 1.0).p_detection, 1.0);
}

TEST(Attribution, MsbAndRefusal) {
  CampaignReport r;
  r.faults_per_run = 1;
  r.counts = counts(4, 0, 0, 10, 2, 0);
  r.counts.sdc_by_bit[1] = 4;
  r.counts.due_by_bit[1] = 1;
  r.counts.due_by_bit[2] = 1;
  const auto a = bit_attribution(r);
  EXPECT_EQ(*a.msb_given_sdc, 1.0);
  EXPECT_EQ(*a.msb_given_due, 0.5);
  EXPECT_EQ((*a.given_due)[2], 0.5);
  r.counts = counts(0, 0, 0, 10);
  EXPECT_FALSE(bit_attribution(r).msb_given_sdc.has_value());
  r.faults_per_run = 10;
  try {
    bit_attribution(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::attribution);
  }
}

std::vector<std::size_t> first(std::span<const std::size_t> v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size()))};
}

TEST(Campaign, ZeroFaultsGiveNoEvents) {
  const auto& f = testing::trained_fixture();
  const auto subset = first(f.correct_test, 40);
  for (auto p : kAllPolicies) {
    for (auto kind : {FaultKind::weight, FaultKind::neuron}) {
      CampaignConfig cfg;
      cfg.policy = p;
      cfg.kind = kind;
      cfg.faults_per_run = 0;
      cfg.epochs = 2;
      const auto r = run_campaign(f.model, f.bounds, f.dataset, subset, cfg);
      EXPECT_EQ(r.counts.runs, 80u);
      EXPECT_EQ(r.counts.sdc, 0u);
      EXPECT_EQ(r.counts.due, 0u);
      EXPECT_EQ(r.counts.oob(), 0u);
    }
  }
}

TEST(Campaign, SamePlansAcrossPoliciesDifferentOutcomes) {
  const auto& f = testing::trained_fixture();
  const auto subset = first(f.correct_test, 30);
  CampaignConfig cfg;
  cfg.faults_per_run = 10;
  cfg.epochs = 20;
  cfg.seed = 3;
  auto record = [&](Policy p, std::vector<FaultPlan>& plans) {
    std::mutex mu;
    cfg.policy = p;
    return run_campaign(f.model, f.bounds, f.dataset, subset, cfg,
                        [&](std::uint64_t epoch, std::optional<std::uint64_t> image) {
                          auto plan = sample_plan(f.model, cfg.kind, cfg.faults_per_run, cfg.bits,
                                                  cfg.seed, epoch, image, cfg.sampling);
                          const std::lock_guard lock(mu);
                          plans.push_back(plan);
                          return plan;
                        });
  };
  std::vector<FaultPlan> a, b;
  const auto none = record(Policy::none, a);
  const auto clip = record(Policy::clipper, b);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_NE(none.counts, clip.counts);
  EXPECT_GT(none.counts.sdc, clip.counts.sdc);
  // The default provider samples the same plans.
  cfg.policy = Policy::none;
  EXPECT_EQ(run_campaign(f.model, f.bounds, f.dataset, subset, cfg).counts, none.counts);
}

TEST(Campaign, WorkerCountDoesNotChangeCounts) {
  const auto& f = testing::trained_fixture();
  const auto subset = first(f.correct_test, 20);
  for (auto kind : {FaultKind::weight, FaultKind::neuron}) {
    CampaignConfig cfg;
    cfg.kind = kind;
    cfg.policy = Policy::ranger;
    cfg.faults_per_run = 3;
    cfg.epochs = 12;
    cfg.seed = 8;
    cfg.workers = 1;
    const auto one = run_campaign(f.model, f.bounds, f.dataset, subset, cfg);
    cfg.workers = 5;
    const auto five = run_campaign(f.model, f.bounds, f.dataset, subset, cfg);
    EXPECT_EQ(one, five);
  }
}

TEST(Campaign, CountsPartitionRuns) {
  const auto& f = testing::trained_fixture();
  CampaignConfig cfg;
  cfg.kind = FaultKind::neuron;
  cfg.faults_per_run = 2;
  cfg.epochs = 5;
  cfg.seed = 1;
  const auto r = run_campaign(f.model, f.bounds, f.dataset, first(f.correct_test, 50), cfg);
  const auto& c = r.counts;
  EXPECT_EQ(c.runs, 250u);
  EXPECT_EQ(c.sdc + c.correct + c.due, c.runs);
  EXPECT_EQ(c.oob() + c.ib(), c.runs);
  std::uint64_t confused = 0;
  for (const auto& [k, n] : c.confusions) confused += n;
  EXPECT_EQ(confused, c.sdc);
}

TEST(Campaign, SingleFaultBitBookkeeping) {
  const auto& f = testing::trained_fixture();
  CampaignConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 2;
  const auto r = run_campaign(f.model, f.bounds, f.dataset, first(f.correct_test, 10), cfg);
  std::uint64_t runs = 0, sdc = 0, due = 0;
  for (std::size_t b = 0; b < 32; ++b) {
    runs += r.counts.runs_by_bit[b];
    sdc += r.counts.sdc_by_bit[b];
    due += r.counts.due_by_bit[b];
    if (b > 8) EXPECT_EQ(r.counts.runs_by_bit[b], 0u);
  }
  EXPECT_EQ(runs, r.counts.runs);
  EXPECT_EQ(sdc, r.counts.sdc);
  EXPECT_EQ(due, r.counts.due);
}

TEST(Campaign, RejectsBadInputs) {
  const auto& f = testing::trained_fixture();
  CampaignConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(run_campaign(f.model, f.bounds, f.dataset, {}, cfg), Error);
  std::vector<std::size_t> wrong;
  for (auto i : f.dataset.indices(Split::test)) {
    if (std::find(f.correct_test.begin(), f.correct_test.end(), i) == f.correct_test.end()) {
      wrong.push_back(i);
      break;
    }
  }
  ASSERT_FALSE(wrong.empty());
  EXPECT_THROW(run_campaign(f.model, f.bounds, f.dataset, wrong, cfg), Error);
  BoundsFile partial = f.bounds;
  partial.entries.pop_back();
  EXPECT_THROW(run_campaign(f.model, partial, f.dataset, first(f.correct_test, 2), cfg), Error);
}

TEST(Csv, ZeroFaultRow) {
  const auto& f = testing::trained_fixture();
  CampaignConfig cfg;
  cfg.faults_per_run = 0;
  cfg.epochs = 1;
  const auto r = run_campaign(f.model, f.bounds, f.dataset, first(f.correct_test, 5), cfg);
  const std::string csv = reports_to_csv(std::span(&r, 1));
  std::istringstream in(csv);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header.rfind("policy,kind,k,bits,", 0), 0u);
  EXPECT_EQ(row.rfind("none,weight,0,\"0:8\",1,5,", 0), 0u);
  EXPECT_NE(row.find(",5,5,0,0,0,5,0,"), std::string::npos);  // runs, correct, sdc, due, oob, ib, sdc_rate
}

}  // namespace
}  // namespace faultrange
