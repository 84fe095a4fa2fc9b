// SPDX-License-Identifier: Apache-2.0
//
// ircount: train, evaluate, explore and report on 8x8 IR people counters.
#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ircount/baseline.hpp"
#include "ircount/cost_model.hpp"
#include "ircount/explorer.hpp"
#include "ircount/model_file.hpp"
#include "ircount/report.hpp"
#include "ircount/synth.hpp"

using namespace ircount;

namespace {

constexpr int kExitPartial = 2;

std::string num(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string default_data() {
  const char* env = std::getenv("IRCOUNT_DATA");
  return env ? env : "";
}

std::vector<SessionRecord> load_data(const std::string& path, bool keep_low_confidence) {
  if (path.empty()) throw DataError("no dataset: pass --data or set IRCOUNT_DATA");
  LoadOptions opt;
  opt.filter_low_confidence = !keep_low_confidence;
  return load_sessions(path, opt);
}

Fold find_fold(const std::vector<SessionRecord>& sessions, int test_session) {
  for (auto& f : make_folds(sessions))
    if (f.test_session == test_session) return f;
  throw DataError("no fold with test session " + std::to_string(test_session));
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("write failed for " + path);
}

std::string metrics_header() {
  return "fold,n_test,bal_acc,acc,f1,mae,mse,bal_acc_std,acc_std,f1_std,mae_std,mse_std,config_digest\n";
}

std::string metrics_row(const std::string& fold, const FoldMetrics& m, const std::string& digest) {
  return fold + ',' + std::to_string(m.n_test) + ',' + num(m.bal_acc) + ',' + num(m.acc) + ',' +
         num(m.f1) + ',' + num(m.mae) + ',' + num(m.mse) + ",0,0,0,0,0," + digest + '\n';
}

std::string aggregate_row(const std::vector<FoldMetrics>& folds, const std::string& digest) {
  const auto a = aggregate(folds);
  std::int64_t n = 0;
  for (const auto& f : folds) n += f.n_test;
  return "all," + std::to_string(n) + ',' + num(a.bal_acc.mean) + ',' + num(a.acc.mean) + ',' +
         num(a.f1.mean) + ',' + num(a.mae.mean) + ',' + num(a.mse.mean) + ',' + num(a.bal_acc.std) +
         ',' + num(a.acc.std) + ',' + num(a.f1.std) + ',' + num(a.mae.std) + ',' + num(a.mse.std) +
         ',' + digest + '\n';
}

std::map<std::string, std::string> metrics_info(const FoldMetrics& m) {
  return {{"bal_acc", num(m.bal_acc)}, {"acc", num(m.acc)}, {"f1", num(m.f1)},
          {"mae", num(m.mae)},         {"mse", num(m.mse)}, {"n_test", std::to_string(m.n_test)}};
}

std::optional<AggregatedMetrics> read_baseline_aggregate(const std::string& path) {
  if (path.empty()) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("all,", 0) != 0) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) v.push_back(std::atof(field.c_str()));
    if (v.size() < 12) break;
    AggregatedMetrics a;
    a.bal_acc = {v[2], v[7]};
    a.acc = {v[3], v[8]};
    a.f1 = {v[4], v[9]};
    a.mae = {v[5], v[10]};
    a.mse = {v[6], v[11]};
    return a;
  }
  throw Error(path + ": no aggregate row");
}

std::vector<Family> parse_families(const std::string& text) {
  if (text == "all") return all_families();
  std::vector<Family> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(parse_family(tok));
  if (out.empty()) throw Error("no families given");
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

struct Common {
  std::string data = default_data();
  bool keep_low_confidence = false;
};

void add_data(CLI::App* cmd, Common& c) {
  cmd->add_option("--data", c.data, "Dataset CSV (default: $IRCOUNT_DATA)");
  cmd->add_flag("--keep-low-confidence", c.keep_low_confidence, "Do not drop confidence-0 frames");
}

struct TrainArgs {
  Common common;
  std::string arch;
  int fold = 2;
  std::uint64_t seed = 0;
  bool qat = false;
  std::string out = "model.ircm";
  std::string history;
  int max_epochs = 0;
};

int cmd_train(const TrainArgs& a) {
  const ModelSpec spec = parse_arch(a.arch);
  if (a.qat && !quantizable(spec.family))
    throw QuantUnsupported("quantization-aware training is not supported for the " +
                           std::string(family_name(spec.family)) + " family");
  const auto sessions = load_data(a.common.data, a.common.keep_low_confidence);
  const Fold fold = find_fold(sessions, a.fold);
  ExploreConfig cfg;
  cfg.master_seed = a.seed;
  cfg.quantize = a.qat;
  if (a.max_epochs > 0) cfg.float_cfg.max_epochs = cfg.qat_cfg.max_epochs = a.max_epochs;
  const std::string config = cfg.float_cfg.str() + (a.qat ? ";qat{" + cfg.qat_cfg.str() + "}" : "");
  const std::string digest = config_digest(config + ";spec=" + spec.str() + ";fold=" +
                                           std::to_string(a.fold) + ";seed=" + std::to_string(a.seed));
  const std::uint64_t seed = model_seed(a.seed, spec);
  const FoldModels fm = train_fold(sessions, fold, spec, seed, cfg);

  ModelFile file;
  file.spec = spec;
  file.provenance = {seed, a.fold, digest, config};
  file.norm = fm.norm;
  if (a.qat) {
    file.precision = Precision::kInt8;
    file.int_model = *fm.int_model;
    file.info = metrics_info(*fm.outcome.int8_metrics);
  } else {
    file.float_model = fm.float_result.model;
    file.info = metrics_info(fm.outcome.float_metrics);
  }
  save_model_file(a.out, file);

  std::ostringstream h;
  h << "phase,epoch,loss,lr,config_digest\n";
  auto dump = [&](const char* phase, const TrainHistory& hist) {
    for (int e = 0; e < hist.epochs(); ++e)
      h << phase << ',' << e << ',' << num(hist.loss[std::size_t(e)]) << ','
        << num(hist.lr[std::size_t(e)]) << ',' << digest << '\n';
  };
  dump("float", fm.float_result.history);
  if (fm.qat_result) dump("qat", fm.qat_result->history);
  write_text(a.history.empty() ? a.out + ".history.csv" : a.history, h.str());

  const FoldMetrics& m = a.qat ? *fm.outcome.int8_metrics : fm.outcome.float_metrics;
  std::cout << "spec " << spec.str() << " fold " << a.fold << " precision "
            << precision_name(file.precision) << " bal_acc " << num(m.bal_acc) << " acc "
            << num(m.acc) << " config_digest " << digest << '\n';
  return 0;
}

struct EvalArgs {
  Common common;
  std::string model;
  int fold = 0;
  std::string out = "-";
};

int cmd_eval(const EvalArgs& a) {
  const ModelFile file = load_model_file(a.model);
  const auto sessions = load_data(a.common.data, a.common.keep_low_confidence);
  const int test = a.fold ? a.fold : file.provenance.fold;
  if (test == 0) throw Error("model file has no fold; pass --fold");
  const FoldData fd = prepare_fold(sessions, find_fold(sessions, test), file.spec);
  const auto preds = predict_counts(file, fd.test.windows);
  const FoldMetrics m = evaluate_predictions(preds, fd.test.labels, file.spec.classes);
  write_text(a.out, metrics_header() + metrics_row(std::to_string(test), m, file.provenance.config_digest));
  if (test == file.provenance.fold && !file.info.empty()) {
    const bool same = metrics_info(m) == file.info;
    std::cerr << "training-time metrics " << (same ? "reproduced exactly" : "DIFFER") << '\n';
    if (!same) return kExitPartial;
  }
  return 0;
}

struct ExploreArgs {
  Common common;
  std::string families = "all";
  std::string preset = "full";
  std::string extractors = "both";
  std::string folds;
  std::string out = "results.csv";
  std::string timing;
  std::uint64_t seed = 0;
  int jobs = 1;
  int max_epochs = 0;
  std::size_t max_specs = 0;
  bool no_quantize = false;
};

int cmd_explore(const ExploreArgs& a) {
  ExploreConfig cfg;
  cfg.families = parse_families(a.families);
  if (a.preset == "sf-pooled") cfg.grid.two_conv_requires_pool = true;
  else if (a.preset != "full") throw Error("unknown preset '" + a.preset + "' (full|sf-pooled)");
  cfg.extractor_source = parse_extractor_source(a.extractors);
  cfg.master_seed = a.seed;
  cfg.quantize = !a.no_quantize;
  cfg.jobs = a.jobs;
  cfg.results_path = a.out;
  cfg.timing_path = a.timing;
  cfg.max_specs_per_family = a.max_specs;
  cfg.folds = parse_int_list(a.folds);
  if (a.max_epochs > 0) cfg.float_cfg.max_epochs = cfg.qat_cfg.max_epochs = a.max_epochs;
  cfg.log = [](const std::string& s) { std::cerr << s << '\n'; };
  const auto sessions = load_data(a.common.data, a.common.keep_low_confidence);
  const std::string digest = config_digest(cfg.str());
  std::cerr << "config_digest " << digest << '\n';
  const auto records = run_grid(sessions, cfg);
  std::size_t failed = 0, rows = 0;
  for (const auto& r : records)
    if (r.config_digest == digest) {
      ++rows;
      failed += !r.ok();
    }
  std::cerr << rows << " rows in " << a.out << ", " << failed << " failed\n";
  return failed ? kExitPartial : 0;
}

struct ReportArgs {
  std::string results;
  std::string axis = "macs";
  std::string out_dir = "report";
  std::string baseline;
};

int cmd_report(const ReportArgs& a) {
  const auto records = read_results_file(a.results);
  if (records.empty()) throw Error("empty results file " + a.results);
  const auto baseline = read_baseline_aggregate(a.baseline);
  std::vector<CostAxis> axes;
  if (a.axis == "both") axes = {CostAxis::kMacs, CostAxis::kParams};
  else axes = {parse_axis(a.axis)};
  for (CostAxis axis : axes) {
    const auto out = a.axis == "both" ? std::filesystem::path(a.out_dir) / std::string(axis_name(axis))
                                      : std::filesystem::path(a.out_dir);
    const auto files = write_report(records, axis, out, baseline);
    std::cout << files.markdown.string() << '\n' << files.csv.string() << '\n';
    for (const auto& s : files.svg) std::cout << s.string() << '\n';
  }
  return 0;
}

struct BaselineArgs {
  Common common;
  std::string config;
  std::vector<std::string> set;
  std::string out = "-";
  std::string predictions;
};

int cmd_baseline(const BaselineArgs& a) {
  BaselineConfig cfg;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw Error("cannot open baseline config " + a.config);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg.parse(ss.str());
  }
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  const std::string digest = config_digest("baseline;" + cfg.str());
  const auto sessions = load_data(a.common.data, a.common.keep_low_confidence);
  std::string text = metrics_header();
  std::vector<FoldMetrics> folds;
  std::ostringstream preds;
  preds << "session,frame_idx,count\n";
  for (const auto& f : make_folds(sessions)) {
    const auto& s = find_session(sessions, f.test_session);
    const auto counts = run_baseline(s, cfg);
    write_predictions(preds, s, counts);
    folds.push_back(evaluate_predictions(counts, s.labels, kDefaultClasses));
    text += metrics_row(std::to_string(f.test_session), folds.back(), digest);
  }
  text += aggregate_row(folds, digest);
  write_text(a.out, text);
  if (!a.predictions.empty()) write_text(a.predictions, preds.str());
  return 0;
}

int cmd_cost(const std::vector<std::string>& archs) {
  std::cout << "spec,params,params_folded,macs,size_float,size_int8\n";
  for (const auto& s : archs) {
    const ModelSpec spec = parse_arch(s);
    const CostReport c = cost_report(spec);
    std::cout << spec.str() << ',' << c.params << ',' << c.params_folded << ',' << c.macs << ','
              << c.size_float << ',' << c.size_int8 << '\n';
  }
  return 0;
}

struct SynthArgs {
  std::string out = "synthetic.csv";
  double scale = 1.0;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.scale = a.scale;
  cfg.seed = a.seed;
  save_sessions(a.out, generate_synthetic(cfg));
  std::cout << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ircount: tiny people counters on 8x8 infrared frames"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train one architecture on one fold");
  train->add_option("--arch", train_args.arch, "Architecture string, e.g. sf:w1:C8-P-FC")->required();
  train->add_option("--fold", train_args.fold, "Test session of the fold")->check(CLI::Range(2, 99));
  train->add_option("--seed", train_args.seed, "Master seed");
  train->add_flag("--qat", train_args.qat, "Quantization-aware fine-tuning and int8 export");
  train->add_option("--out", train_args.out, "Model file");
  train->add_option("--history", train_args.history, "History CSV (default: <out>.history.csv)");
  train->add_option("--max-epochs", train_args.max_epochs, "Cap on epochs per phase");
  add_data(train, train_args.common);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a model file on its test fold");
  eval->add_option("--model", eval_args.model, "Model file")->required();
  eval->add_option("--fold", eval_args.fold, "Test session (default: the training fold)");
  eval->add_option("--out", eval_args.out, "Metrics CSV (default: stdout)");
  add_data(eval, eval_args.common);

  ExploreArgs ex;
  auto* explore = app.add_subcommand("explore", "Staged grid exploration");
  explore->add_option("--families", ex.families, "Comma list of sf,mc,mv,cat,lstm,tcn or 'all'");
  explore->add_option("--preset", ex.preset, "Grid preset: full or sf-pooled");
  explore->add_option("--extractors", ex.extractors, "Extractor fronts: both, macs or params");
  explore->add_option("--folds", ex.folds, "Comma list of test sessions (default: all)");
  explore->add_option("--jobs", ex.jobs, "Worker threads")->check(CLI::PositiveNumber);
  explore->add_option("--out", ex.out, "Results CSV (appended, resumable)");
  explore->add_option("--timing", ex.timing, "Wall-clock sidecar CSV");
  explore->add_option("--seed", ex.seed, "Master seed");
  explore->add_option("--max-epochs", ex.max_epochs, "Cap on epochs per phase");
  explore->add_option("--max-specs", ex.max_specs, "First N specs per family");
  explore->add_flag("--no-quantize", ex.no_quantize, "Skip QAT and int8 evaluation");
  add_data(explore, ex.common);

  ReportArgs rep;
  auto* report = app.add_subcommand("report", "Pareto tables, scatter CSV/SVG and summary");
  report->add_option("--results", rep.results, "Results CSV")->required();
  report->add_option("--axis", rep.axis, "macs, params or both");
  report->add_option("--out-dir", rep.out_dir, "Output directory");
  report->add_option("--baseline", rep.baseline, "Baseline metrics CSV for the summary");

  BaselineArgs base;
  auto* baseline = app.add_subcommand("baseline", "Deterministic blob-counting baseline");
  baseline->add_option("--config", base.config, "key = value config file");
  baseline->add_option("--set", base.set, "Override, e.g. --set delta_t=1.2");
  baseline->add_option("--out", base.out, "Metrics CSV (default: stdout)");
  baseline->add_option("--predictions", base.predictions, "Per-frame predictions CSV");
  add_data(baseline, base.common);

  std::vector<std::string> archs;
  auto* cost = app.add_subcommand("cost", "Parameter, MAC and size counts");
  cost->add_option("arch", archs, "Architecture strings")->required();

  SynthArgs syn;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with the reference session shape");
  synth->add_option("--out", syn.out, "Output CSV");
  synth->add_option("--scale", syn.scale, "Session size multiplier")->check(CLI::PositiveNumber);
  synth->add_option("--seed", syn.seed, "Generator seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args);
    if (*explore) return cmd_explore(ex);
    if (*report) return cmd_report(rep);
    if (*baseline) return cmd_baseline(base);
    if (*cost) return cmd_cost(archs);
    if (*synth) return cmd_synth(syn);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
