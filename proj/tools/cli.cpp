#include "faultrange_cli/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "faultrange/dataset.hpp"
#include "faultrange/error.hpp"
#include "faultrange/fault_inject.hpp"
#include "faultrange/graph.hpp"
#include "faultrange/harness.hpp"
#include "faultrange/model_io.hpp"
#include "faultrange/protection.hpp"
#include "faultrange/trainer.hpp"

namespace faultrange::cli {

namespace {

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage error (unknown flag, bad flag value)\n"
    "  3  i/o error (missing or unwritable file)\n"
    "  4  container format error\n"
    "  5  schema violation in a JSON or container header\n"
    "  6  configuration error (inconsistent inputs)\n"
    "  7  shape error\n"
    "  8  training diverged\n"
    "  9  bit attribution unavailable\n"
    "Errors are printed to stderr as one line:\n"
    "  error code=<name> exit=<n> message=<text>\n";

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return kConfig;
    case ErrorCode::shape: return kShape;
    case ErrorCode::io: return kIo;
    case ErrorCode::format: return kFormat;
    case ErrorCode::schema: return kSchema;
    case ErrorCode::training: return kTraining;
    case ErrorCode::attribution: return kAttribution;
  }
  return kInternal;
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

int report_error(std::ostream& err, std::string_view name, int code, const std::string& message) {
  err << "error code=" << name << " exit=" << code << " message=" << one_line(message) << '\n';
  return code;
}

/// Explicit flag, then FAULTRANGE_SEED, then a fresh random seed (printed).
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::ostream& err) {
  if (flag) return *flag;
  if (const char* env = std::getenv("FAULTRANGE_SEED")) {
    std::uint64_t v = 0;
    std::istringstream in(env);
    if (!(in >> v) || !in.eof()) fail(ErrorCode::config, std::string("FAULTRANGE_SEED is not an unsigned integer: ") + env);
    return v;
  }
  std::random_device rd;
  const std::uint64_t seed = (std::uint64_t{rd()} << 32) | rd();
  err << "seed: " << seed << '\n';
  return seed;
}

std::vector<std::size_t> split_indices(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.indices(Split::train);
  if (split == "test") return ds.indices(Split::test);
  if (split == "all") return ds.all_indices();
  fail(ErrorCode::config, "unknown split '" + split + "' (expected train, test or all)");
}

Policy policy_flag(const std::string& name) {
  if (auto p = parse_policy(name)) return *p;
  fail(ErrorCode::config, "unknown policy '" + name + "'");
}

std::string fmt(const std::optional<double>& v, int precision = 4) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << *v;
  return s.str();
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t per_class = 200;
  std::size_t classes = 6;
  float noise = 0.1f;
  std::string mnist_images, mnist_labels;
};

int gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  Dataset ds;
  if (!a.mnist_images.empty() || !a.mnist_labels.empty()) {
    if (a.mnist_images.empty() || a.mnist_labels.empty()) {
      fail(ErrorCode::config, "--mnist-images and --mnist-labels must be given together");
    }
    ds = load_mnist(a.mnist_images, a.mnist_labels);
  } else {
    ShapesConfig cfg;
    cfg.seed = resolve_seed(a.seed, err);
    cfg.per_class = a.per_class;
    cfg.num_classes = a.classes;
    cfg.noise = a.noise;
    ds = generate_dataset(cfg);
  }
  save_dataset(ds, a.out);
  out << "dataset " << ds.id << ": " << ds.size() << " images, " << ds.class_names.size()
      << " classes -> " << a.out << '\n';
  return kOk;
}

struct TrainArgs {
  std::string data, out;
  std::optional<std::uint64_t> seed;
  std::size_t epochs = TrainConfig{}.epochs;
  float lr = TrainConfig{}.learning_rate;
};

int train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(a.data);
  TrainConfig cfg;
  cfg.seed = resolve_seed(a.seed, err);
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  const TrainResult r = train_fixture(ds, cfg);
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    out << "epoch " << e << " loss " << fmt(r.epoch_loss[e], 6) << '\n';
  }
  out << "train accuracy " << fmt(r.train_accuracy) << ", test accuracy " << fmt(r.test_accuracy)
      << '\n';
  save_model(r.model, a.out);
  return kOk;
}

struct EvalArgs {
  std::string model, data, split = "test", subset_out;
};

int eval(const EvalArgs& a, std::ostream& out) {
  const ModelGraph model = load_model(a.model);
  const Dataset ds = load_dataset(a.data);
  const auto indices = split_indices(ds, a.split);
  const AccuracyResult r = evaluate_accuracy(model, ds, indices);
  out << "accuracy " << fmt(r.accuracy) << " (" << r.correct.size() << "/" << indices.size()
      << " correct, split " << a.split << ")\n";
  if (!a.subset_out.empty()) {
    write_text_file(a.subset_out, subset_to_json({ds.id, a.split, r.accuracy, r.correct}));
  }
  return kOk;
}

struct BoundsArgs {
  std::string model, data, split = "train", out;
};

int extract(const BoundsArgs& a, std::ostream& out) {
  const ModelGraph model = load_model(a.model);
  const Dataset ds = load_dataset(a.data);
  const BoundsFile b = extract_bounds(model, ds, split_indices(ds, a.split));
  save_bounds(b, a.out);
  for (const auto& e : b.entries) {
    out << "point " << e.protection_point << ": [" << format_float(e.t_low) << ", "
        << format_float(e.t_up) << "]\n";
  }
  return kOk;
}

struct BitHistArgs {
  std::string model, bits = std::string(kDefaultBits), out;
};

int bit_hist(const BitHistArgs& a, std::ostream& out) {
  const ModelGraph model = load_model(a.model);
  std::ostringstream csv;
  csv << "bit,ones,total,fraction\n";
  for (const auto& f : weight_bit_histogram(model, parse_bits(a.bits))) {
    csv << f.bit.position() << ',' << f.ones << ',' << f.total << ',' << fmt(f.fraction, 6) << '\n';
  }
  if (a.out.empty()) out << csv.str();
  else write_text_file(a.out, csv.str());
  return kOk;
}

struct RunArgs {
  std::string model, data, bounds, subset, out, replay, plans_out;
  std::string policy = "none", kind = "weight", bits = std::string(kDefaultBits);
  std::string sampling = "element_uniform";
  std::size_t k = 1;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  bool include_bias = false;
};

int run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  const ModelGraph model = load_model(a.model);
  const Dataset ds = load_dataset(a.data);
  const BoundsFile bounds = load_bounds(a.bounds);

  std::vector<std::size_t> subset;
  if (!a.subset.empty()) {
    const CorrectSubset s = subset_from_json(read_text_file(a.subset));
    if (s.dataset_id != ds.id) {
      fail(ErrorCode::config, "subset was computed on dataset " + s.dataset_id + ", not " + ds.id);
    }
    subset = s.indices;
  } else {
    subset = evaluate_accuracy(model, ds, ds.indices(Split::test)).correct;
  }

  CampaignConfig cfg;
  cfg.policy = policy_flag(a.policy);
  const auto kind = parse_fault_kind(a.kind);
  if (!kind) fail(ErrorCode::config, "unknown fault kind '" + a.kind + "'");
  cfg.kind = *kind;
  cfg.faults_per_run = a.k;
  cfg.bits = parse_bits(a.bits);
  cfg.epochs = a.epochs.value_or(cfg.kind == FaultKind::weight ? 100 : 20);
  cfg.workers = a.workers;
  cfg.sampling.include_bias = a.include_bias;
  if (a.sampling == "layer_uniform") cfg.sampling.sampling = SiteSampling::layer_uniform;
  else if (a.sampling != "element_uniform") fail(ErrorCode::config, "unknown sampling '" + a.sampling + "'");

  PlanProvider provider;
  std::map<std::pair<std::uint64_t, std::optional<std::uint64_t>>, FaultPlan> replayed;
  if (!a.replay.empty()) {
    for (auto& plan : plans_from_json(read_text_file(a.replay))) {
      if (plan.kind != cfg.kind) fail(ErrorCode::config, "replayed plan kind does not match --kind");
      validate_plan(model, plan);
      cfg.seed = plan.master_seed;
      replayed[{plan.epoch, plan.image}] = std::move(plan);
    }
    provider = [&replayed](std::uint64_t epoch, std::optional<std::uint64_t> image) {
      const auto it = replayed.find({epoch, image});
      if (it == replayed.end()) {
        fail(ErrorCode::config, "replay file has no plan for epoch " + std::to_string(epoch) +
                                    (image ? ", image " + std::to_string(*image) : ""));
      }
      return it->second;
    };
  } else {
    cfg.seed = resolve_seed(a.seed, err);
  }

  std::mutex mu;
  std::vector<FaultPlan> recorded;
  if (!a.plans_out.empty()) {
    PlanProvider inner = provider ? provider
                                  : PlanProvider([&](std::uint64_t epoch, std::optional<std::uint64_t> image) {
                                      return sample_plan(model, cfg.kind, cfg.faults_per_run, cfg.bits,
                                                         cfg.seed, epoch, image, cfg.sampling);
                                    });
    provider = [inner, &mu, &recorded](std::uint64_t epoch, std::optional<std::uint64_t> image) {
      FaultPlan plan = inner(epoch, image);
      const std::lock_guard lock(mu);
      recorded.push_back(plan);
      return plan;
    };
  }

  const CampaignReport report = run_campaign(model, bounds, ds, subset, cfg, provider);
  if (!a.plans_out.empty()) {
    std::sort(recorded.begin(), recorded.end(), [](const FaultPlan& x, const FaultPlan& y) {
      return std::pair(x.epoch, x.image) < std::pair(y.epoch, y.image);
    });
    write_text_file(a.plans_out, plans_to_json(recorded));
  }
  save_report(report, a.out);
  const auto d = derive_metrics(report.counts);
  out << "runs " << report.counts.runs << ", sdc " << fmt(d.p_sdc) << ", due " << fmt(d.p_due)
      << ", recall " << fmt(d.detector.recall) << ", precision " << fmt(d.detector.precision) << '\n';
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string csv, clusters;
  std::optional<double> p_failure;
};

int report(const ReportArgs& a, std::ostream& out) {
  std::vector<CampaignReport> reports;
  for (const auto& path : a.inputs) reports.push_back(load_report(path));
  std::optional<ClusterConfig> clusters;
  if (!a.clusters.empty()) {
    clusters = load_clusters(a.clusters);
    for (const auto& r : reports) clusters->validate(r.class_names);
  }
  const ClusterConfig* cp = clusters ? &*clusters : nullptr;
  if (!a.csv.empty()) write_text_file(a.csv, reports_to_csv(reports, cp, a.p_failure));

  out << std::left << std::setw(13) << "policy" << std::setw(8) << "kind" << std::setw(5) << "k"
      << std::setw(9) << "runs" << std::setw(26) << "sdc [95% ci]" << std::setw(9) << "due"
      << std::setw(9) << "recall" << std::setw(10) << "precision" << std::setw(12) << "p(msb|sdc)";
  if (cp) out << std::setw(10) << "critical";
  if (a.p_failure) out << std::setw(8) << "risk";
  out << '\n';
  for (const auto& r : reports) {
    const auto d = derive_metrics(r.counts);
    std::string ci = fmt(d.p_sdc);
    if (d.sdc_ci) ci += " [" + fmt(d.sdc_ci->lo) + ", " + fmt(d.sdc_ci->hi) + "]";
    std::optional<double> msb;
    if (r.faults_per_run == 1) msb = bit_attribution(r).msb_given_sdc;
    out << std::setw(13) << to_string(r.policy) << std::setw(8) << to_string(r.kind) << std::setw(5)
        << r.faults_per_run << std::setw(9) << r.counts.runs << std::setw(26) << ci << std::setw(9)
        << fmt(d.p_due) << std::setw(9) << fmt(d.detector.recall) << std::setw(10)
        << fmt(d.detector.precision) << std::setw(12) << fmt(msb);
    double severity = 1.0;
    if (cp) {
      const auto s = severity_analysis(r, *cp);
      out << std::setw(10) << fmt(s.critical_fraction);
      severity = s.critical_fraction.value_or(0.0);
    }
    if (a.p_failure) {
      const RiskTerm t = risk_term(r, *a.p_failure, severity);
      out << std::setw(8) << fmt(risk(std::span(&t, 1)));
    }
    out << '\n';
  }
  return kOk;
}

struct DumpArgs {
  std::string model, data, out_dir, bounds, policy = "none", replay;
  std::size_t index = 0;
  std::size_t plan = 0;
};

int dump(const DumpArgs& a, std::ostream& out) {
  ModelGraph model = load_model(a.model);
  const Dataset ds = load_dataset(a.data);
  if (a.index >= ds.size()) {
    fail(ErrorCode::config, "image index " + std::to_string(a.index) + " out of range (dataset has " +
                                std::to_string(ds.size()) + ")");
  }
  std::vector<LayerHook> hooks;
  if (!a.replay.empty()) {
    const auto plans = plans_from_json(read_text_file(a.replay));
    if (a.plan >= plans.size()) fail(ErrorCode::config, "--plan index out of range");
    validate_plan(model, plans[a.plan]);
    if (plans[a.plan].kind == FaultKind::weight) apply_weight_faults(model, plans[a.plan]);
    else hooks.push_back(make_neuron_fault_hook(plans[a.plan]));
  }
  OobRecord record;
  BoundsFile bounds;
  const Policy policy = policy_flag(a.policy);
  if (!a.bounds.empty()) {
    bounds = load_bounds(a.bounds);
    bounds.validate(model);
    hooks.push_back(make_protection_hook(model, bounds, policy, &record));
  } else if (policy != Policy::none) {
    fail(ErrorCode::config, "--policy requires --bounds");
  }
  std::filesystem::create_directories(a.out_dir);
  const auto files = dump_fmaps(model, ds.images[a.index], a.out_dir, hooks);
  out << files.size() << " files written to " << a.out_dir << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct Parsed {
  GenDataArgs gen;
  TrainArgs train;
  EvalArgs eval;
  BoundsArgs bounds;
  BitHistArgs hist;
  RunArgs run;
  ReportArgs report;
  DumpArgs dump;
};

void build_app(CLI::App& app, Parsed& p) {
  app.description("Range-restriction fault-injection toolkit for small CNNs.");
  app.footer(kExitCodes);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic shapes dataset (or an MNIST IDX pair) to a container");
  gen->add_option("--out", p.gen.out, "Output dataset container")->required();
  gen->add_option("--seed", p.gen.seed, "Dataset seed (default: FAULTRANGE_SEED, else random)");
  gen->add_option("--per-class", p.gen.per_class, "Images per class")->capture_default_str();
  gen->add_option("--classes", p.gen.classes, "Number of shape classes (1-6)")->capture_default_str();
  gen->add_option("--noise", p.gen.noise, "Uniform pixel noise amplitude")->capture_default_str();
  gen->add_option("--mnist-images", p.gen.mnist_images, "IDX image file to import instead");
  gen->add_option("--mnist-labels", p.gen.mnist_labels, "IDX label file to import instead");

  auto* tr = app.add_subcommand("train-fixture", "Train the LeNet-style fixture model");
  tr->add_option("--data", p.train.data, "Dataset container")->required();
  tr->add_option("--out", p.train.out, "Output model container")->required();
  tr->add_option("--seed", p.train.seed, "Init/shuffle seed (default: FAULTRANGE_SEED, else random)");
  tr->add_option("--epochs", p.train.epochs, "Training epochs")->capture_default_str();
  tr->add_option("--lr", p.train.lr, "SGD learning rate")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "Fault-free accuracy and the baseline-correct subset");
  ev->add_option("--model", p.eval.model, "Model container")->required();
  ev->add_option("--data", p.eval.data, "Dataset container")->required();
  ev->add_option("--split", p.eval.split, "train, test or all")->capture_default_str();
  ev->add_option("--subset-out", p.eval.subset_out, "Write the correct-subset JSON here");

  auto* eb = app.add_subcommand("extract-bounds", "Profile per-protection-point activation bounds");
  eb->add_option("--model", p.bounds.model, "Model container")->required();
  eb->add_option("--data", p.bounds.data, "Dataset container")->required();
  eb->add_option("--split", p.bounds.split, "Profiling split: train, test or all")->capture_default_str();
  eb->add_option("--out", p.bounds.out, "Output bounds JSON")->required();

  auto* bh = app.add_subcommand("bit-hist", "Fraction of set bits per position over conv weights (CSV)");
  bh->add_option("--model", p.hist.model, "Model container")->required();
  bh->add_option("--bits", p.hist.bits, "Bit positions, e.g. 0:8 or 0,1,8")->capture_default_str();
  bh->add_option("--out", p.hist.out, "Output CSV (default: stdout)");

  auto* rn = app.add_subcommand("run", "Run a fault-injection campaign and write a report JSON");
  rn->add_option("--model", p.run.model, "Model container")->required();
  rn->add_option("--data", p.run.data, "Dataset container")->required();
  rn->add_option("--bounds", p.run.bounds, "Bounds JSON")->required();
  rn->add_option("--subset", p.run.subset, "Correct-subset JSON (default: correct test images)");
  rn->add_option("--policy", p.run.policy, "none, ranger, clipper, fmap_rescale, backflip or fmap_avg")->capture_default_str();
  rn->add_option("--kind", p.run.kind, "weight or neuron")->capture_default_str();
  rn->add_option("--k", p.run.k, "Faults per run")->capture_default_str();
  rn->add_option("--bits", p.run.bits, "Bit positions, e.g. 0:8 or 0,1,8")->capture_default_str();
  rn->add_option("--epochs", p.run.epochs, "Campaign epochs (default: 100 weight, 20 neuron)");
  rn->add_option("--seed", p.run.seed, "Master seed (default: FAULTRANGE_SEED, else random)");
  rn->add_option("--workers", p.run.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  rn->add_flag("--include-bias", p.run.include_bias, "Also inject weight faults into biases");
  rn->add_option("--sampling", p.run.sampling, "element_uniform or layer_uniform")->capture_default_str();
  rn->add_option("--replay", p.run.replay, "Replay fault plans from JSON instead of sampling");
  rn->add_option("--plans-out", p.run.plans_out, "Write the fault plans used to JSON");
  rn->add_option("--out", p.run.out, "Output report JSON")->required();

  auto* rp = app.add_subcommand("report", "Summarize reports as a table and optional CSV");
  rp->add_option("reports", p.report.inputs, "Report JSON files")->required();
  rp->add_option("--csv", p.report.csv, "Write CSV here");
  rp->add_option("--clusters", p.report.clusters, "Cluster config JSON for severity");
  rp->add_option("--p-failure", p.report.p_failure, "Failure probability for the risk column")->check(CLI::Range(0.0, 1.0));

  auto* dm = app.add_subcommand("dump-fmaps", "Write every layer output of one image as text grids");
  dm->add_option("--model", p.dump.model, "Model container")->required();
  dm->add_option("--data", p.dump.data, "Dataset container")->required();
  dm->add_option("--index", p.dump.index, "Dataset image index")->capture_default_str();
  dm->add_option("--out-dir", p.dump.out_dir, "Output directory")->required();
  dm->add_option("--bounds", p.dump.bounds, "Bounds JSON (enables protection)");
  dm->add_option("--policy", p.dump.policy, "Protection policy")->capture_default_str();
  dm->add_option("--replay", p.dump.replay, "Fault plans JSON to apply");
  dm->add_option("--plan", p.dump.plan, "Index of the plan in --replay")->capture_default_str();
}

}  // namespace

std::string help_text() {
  CLI::App app("", "faultrange");
  Parsed p;
  build_app(app, p);
  return app.help("", CLI::AppFormatMode::All);
}

int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app("", "faultrange");
  Parsed p;
  build_app(app, p);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << help_text();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << help_text();
    return kOk;
  } catch (const CLI::ParseError& e) {
    return report_error(err, "usage", kUsage, e.what());
  }

  try {
    if (app.got_subcommand("gen-data")) return gen_data(p.gen, out, err);
    if (app.got_subcommand("train-fixture")) return train(p.train, out, err);
    if (app.got_subcommand("eval")) return eval(p.eval, out);
    if (app.got_subcommand("extract-bounds")) return extract(p.bounds, out);
    if (app.got_subcommand("bit-hist")) return bit_hist(p.hist, out);
    if (app.got_subcommand("run")) return run(p.run, out, err);
    if (app.got_subcommand("report")) return report(p.report, out);
    if (app.got_subcommand("dump-fmaps")) return dump(p.dump, out);
  } catch (const Error& e) {
    return report_error(err, to_string(e.code()), exit_code(e.code()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return report_error(err, "io", kIo, e.what());
  } catch (const std::exception& e) {
    return report_error(err, "internal", kInternal, e.what());
  }
  return report_error(err, "usage", kUsage, "no subcommand given");
}

}  // namespace faultrange::cli
