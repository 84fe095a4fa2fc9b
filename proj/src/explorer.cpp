// SPDX-License-Identifier: Apache-2.0
#include "ircount/explorer.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ircount/error.hpp"
#include "ircount/model_file.hpp"
#include "ircount/quantizer.hpp"
#include "ircount/rng.hpp"

namespace ircount {

namespace {

std::string num(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw DataError("results: bad number '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = c == ',' ? ';' : ' ';
  return s;
}

}  // namespace

void reaggregate(ResultRecord& r) {
  std::vector<FoldMetrics> m;
  for (const auto& f : r.folds) m.push_back(f.metrics);
  if (!m.empty()) r.agg = aggregate(m);
}

std::string_view axis_name(CostAxis a) { return a == CostAxis::kMacs ? "macs" : "params"; }

CostAxis parse_axis(std::string_view s) {
  if (s == "macs") return CostAxis::kMacs;
  if (s == "params") return CostAxis::kParams;
  throw Error("unknown cost axis '" + std::string(s) + "' (macs|params)");
}

ExtractorSource parse_extractor_source(std::string_view s) {
  if (s == "both") return ExtractorSource::kBoth;
  if (s == "macs") return ExtractorSource::kMacs;
  if (s == "params") return ExtractorSource::kParams;
  throw Error("unknown extractor source '" + std::string(s) + "' (both|macs|params)");
}

std::vector<std::size_t> pareto_front(const std::vector<ParetoPoint>& pts) {
  if (pts.empty()) throw Error("pareto front of an empty set");
  std::vector<std::size_t> idx(pts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (pts[a].cost != pts[b].cost) return pts[a].cost < pts[b].cost;
    if (pts[a].accuracy != pts[b].accuracy) return pts[a].accuracy > pts[b].accuracy;
    return pts[a].key < pts[b].key;
  });
  std::vector<std::size_t> front;
  for (std::size_t i : idx)
    if (front.empty() || pts[i].accuracy > pts[front.back()].accuracy) front.push_back(i);
  return front;
}

namespace {

// O(n^2) dominance check of a computed front; exact duplicates keep the
// smallest key.
void verify_front(const std::vector<ParetoPoint>& pts, const std::vector<std::size_t>& front) {
  std::vector<char> member(pts.size(), 0);
  for (std::size_t i : front) member[i] = 1;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
      if (i == j) continue;
      const bool no_worse = pts[j].cost <= pts[i].cost && pts[j].accuracy >= pts[i].accuracy;
      const bool better = pts[j].cost < pts[i].cost || pts[j].accuracy > pts[i].accuracy;
      dominated = no_worse && (better || pts[j].key < pts[i].key);
    }
    if (dominated == bool(member[i]))
      throw Error("pareto front disagrees with the dominance check at '" + pts[i].key + "'");
  }
}

}  // namespace

double record_cost(const ResultRecord& r, CostAxis axis) {
  return axis == CostAxis::kMacs ? double(r.cost.macs) : double(r.cost.params);
}

std::vector<ResultRecord> pareto_front(const std::vector<ResultRecord>& records, CostAxis axis,
                                       Precision precision) {
  std::vector<const ResultRecord*> pool;
  for (const auto& r : records)
    if (r.ok() && r.precision == precision) pool.push_back(&r);
  if (pool.empty()) throw Error("pareto front: no successful records");
  std::vector<ParetoPoint> pts;
  for (const auto* r : pool) pts.push_back({record_cost(*r, axis), r->agg.bal_acc.mean, r->spec});
  const auto front = pareto_front(pts);
  verify_front(pts, front);
  std::vector<ResultRecord> out;
  for (std::size_t i : front) out.push_back(*pool[i]);
  return out;
}

std::vector<ModelSpec> select_extractors(const std::vector<ResultRecord>& sf_records,
                                         ExtractorSource source) {
  std::vector<ResultRecord> sf;
  for (const auto& r : sf_records)
    if (r.family == Family::kSingleFrame && r.precision == Precision::kFloat && r.ok()) sf.push_back(r);
  if (sf.empty()) throw Error("extractor selection needs successful single-frame results");
  std::vector<ModelSpec> out;
  std::set<std::string> seen;
  auto take = [&](CostAxis axis) {
    for (const auto& r : pareto_front(sf, axis)) {
      ModelSpec s = parse_arch(r.spec);
      if (seen.insert(s.extractor_str()).second) out.push_back(std::move(s));
    }
  };
  if (source != ExtractorSource::kParams) take(CostAxis::kMacs);
  if (source != ExtractorSource::kMacs) take(CostAxis::kParams);
  return out;
}

// ---------------------------------------------------------------------------
// Results CSV
// ---------------------------------------------------------------------------

std::string results_header() {
  return "spec,family,window,precision,status,bal_acc_mean,bal_acc_std,acc_mean,acc_std,f1_mean,"
         "f1_std,mae_mean,mae_std,mse_mean,mse_std,params,params_folded,macs,size_bytes,"
         "model_seed,float_only,folds,config_digest";
}

std::string results_row(const ResultRecord& r) {
  std::ostringstream o;
  o << r.spec << ',' << family_name(r.family) << ',' << r.window << ','
    << precision_name(r.precision) << ',' << sanitize(r.status);
  for (const Aggregate* a : {&r.agg.bal_acc, &r.agg.acc, &r.agg.f1, &r.agg.mae, &r.agg.mse})
    o << ',' << num(a->mean) << ',' << num(a->std);
  o << ',' << r.cost.params << ',' << r.cost.params_folded << ',' << r.cost.macs << ','
    << r.size_bytes()
    << ',' << r.model_seed << ',' << (r.float_only ? 1 : 0) << ',';
  for (std::size_t i = 0; i < r.folds.size(); ++i) {
    const auto& f = r.folds[i];
    if (i) o << ';';
    o << f.test_session << ':' << num(f.metrics.bal_acc) << ':' << num(f.metrics.acc) << ':'
      << num(f.metrics.f1) << ':' << num(f.metrics.mae) << ':' << num(f.metrics.mse) << ':'
      << f.metrics.n_test;
  }
  o << ',' << r.config_digest;
  return o.str();
}

void write_results(std::ostream& out, const std::vector<ResultRecord>& records) {
  out << results_header() << '\n';
  for (const auto& r : records) out << results_row(r) << '\n';
}

std::vector<ResultRecord> read_results(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("results: empty file");
  const auto header = split(line, ',');
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& name : split(results_header(), ','))
    if (!col.count(name)) throw DataError("results: missing column " + name);
  std::vector<ResultRecord> out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw DataError("results: wrong field count");
    auto get = [&](const char* name) { return f[col.at(name)]; };
    ResultRecord r;
    r.spec = get("spec");
    const ModelSpec spec = parse_arch(r.spec);
    r.family = spec.family;
    r.window = spec.window;
    r.precision = parse_precision(get("precision"));
    r.status = get("status");
    auto agg = [&](Aggregate& a, const char* base) {
      a.mean = parse_double(get((std::string(base) + "_mean").c_str()));
      a.std = parse_double(get((std::string(base) + "_std").c_str()));
    };
    agg(r.agg.bal_acc, "bal_acc");
    agg(r.agg.acc, "acc");
    agg(r.agg.f1, "f1");
    agg(r.agg.mae, "mae");
    agg(r.agg.mse, "mse");
    r.cost = cost_report(spec);
    r.model_seed = std::stoull(get("model_seed"));
    r.float_only = get("float_only") == "1";
    r.config_digest = get("config_digest");
    const std::string folds = get("folds");
    if (!folds.empty())
      for (const auto& part : split(folds, ';')) {
        const auto v = split(part, ':');
        if (v.size() != 7) throw DataError("results: bad fold entry '" + part + "'");
        FoldResult fr;
        fr.test_session = std::stoi(v[0]);
        fr.metrics.bal_acc = parse_double(v[1]);
        fr.metrics.acc = parse_double(v[2]);
        fr.metrics.f1 = parse_double(v[3]);
        fr.metrics.mae = parse_double(v[4]);
        fr.metrics.mse = parse_double(v[5]);
        fr.metrics.n_test = std::stoll(v[6]);
        r.folds.push_back(fr);
      }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ResultRecord> read_results_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results file " + path.string());
  return read_results(in);
}

// ---------------------------------------------------------------------------
// Grid run
// ---------------------------------------------------------------------------

std::string ExploreConfig::str() const {
  std::ostringstream o;
  o << "families=";
  for (auto f : families) o << family_name(f) << ' ';
  auto list = [&](const char* name, const std::vector<int>& v) {
    o << ';' << name << '=';
    for (int x : v) o << x << ' ';
  };
  list("channels", grid.channels);
  list("windows", grid.windows);
  list("units", grid.units);
  list("folds", folds);
  o << ";two_conv_requires_pool=" << grid.two_conv_requires_pool
    << ";extractors=" << int(extractor_source) << ";master_seed=" << master_seed
    << ";quantize=" << quantize << ";max_specs_per_family=" << max_specs_per_family
    << ";float{" << float_cfg.str() << "};qat{" << qat_cfg.str() << "}";
  return o.str();
}

std::uint64_t model_seed(std::uint64_t master, const ModelSpec& spec) {
  return derive_seed(master, spec.str());
}

FoldModels train_fold(const std::vector<SessionRecord>& sessions, const Fold& fold,
                      const ModelSpec& spec, std::uint64_t seed, const ExploreConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const FoldData fd = prepare_fold(sessions, fold, spec);
  TrainConfig fc = cfg.float_cfg;
  fc.seed = derive_seed(seed, "fold:" + std::to_string(fold.test_session));
  FoldModels out{fd.norm, train(build_model(spec, seed), fd.train, fd.class_weights, fc, false), {}, {}, {}};
  {
    std::vector<int> preds;
    preds.reserve(fd.test.size());
    for (const auto& w : fd.test.windows) preds.push_back(out.float_result.model.predict(w).count);
    out.outcome.float_metrics = evaluate_predictions(preds, fd.test.labels, spec.classes);
  }
  if (cfg.quantize && quantizable(spec.family)) {
    TrainConfig qc = cfg.qat_cfg;
    qc.seed = derive_seed(seed, "qat:" + std::to_string(fold.test_session));
    out.qat_result = train(out.float_result.model, fd.train, fd.class_weights, qc, true);
    out.int_model = export_int8(out.qat_result->model);
    std::vector<int> preds;
    preds.reserve(fd.test.size());
    for (const auto& w : fd.test.windows)
      preds.push_back(int_forward(*out.int_model, quantize_window(w, out.int_model->input)).count);
    out.outcome.int8_metrics = evaluate_predictions(preds, fd.test.labels, spec.classes);
  }
  out.outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

FoldOutcome run_fold(const std::vector<SessionRecord>& sessions, const Fold& fold,
                     const ModelSpec& spec, std::uint64_t seed, const ExploreConfig& cfg) {
  return train_fold(sessions, fold, spec, seed, cfg).outcome;
}

std::vector<ResultRecord> run_specs(const std::vector<SessionRecord>& sessions,
                                    const std::vector<ModelSpec>& specs, const ExploreConfig& cfg,
                                    std::vector<ResultRecord> existing) {
  const std::string digest = config_digest(cfg.str());
  std::vector<Fold> folds;
  for (auto& f : make_folds(sessions))
    if (cfg.folds.empty() ||
        std::find(cfg.folds.begin(), cfg.folds.end(), f.test_session) != cfg.folds.end())
      folds.push_back(std::move(f));
  if (folds.empty()) throw Error("no folds selected");

  std::set<std::string> done;
  for (const auto& r : existing)
    if (r.precision == Precision::kFloat && r.config_digest == digest) done.insert(r.spec);
  std::vector<ModelSpec> todo;
  for (const auto& s : specs)
    if (!done.count(s.str()) &&
        std::find(todo.begin(), todo.end(), s) == todo.end())
      todo.push_back(s);
  if (cfg.log && todo.size() < specs.size())
    cfg.log("skipping " + std::to_string(specs.size() - todo.size()) + " specs already in results");

  struct SpecState {
    std::vector<std::optional<FoldOutcome>> outcomes;
    std::string error;
    std::size_t remaining = 0;
  };
  std::vector<SpecState> state(todo.size());
  for (auto& s : state) {
    s.outcomes.resize(folds.size());
    s.remaining = folds.size();
  }

  std::mutex mu;
  std::ofstream results, timing;
  if (!cfg.results_path.empty()) {
    const bool fresh = !std::filesystem::exists(cfg.results_path) ||
                       std::filesystem::file_size(cfg.results_path) == 0;
    results.open(cfg.results_path, std::ios::app);
    if (!results) throw Error("cannot open results file " + cfg.results_path.string());
    if (fresh) results << results_header() << '\n' << std::flush;
  }
  if (!cfg.timing_path.empty()) {
    const bool fresh = !std::filesystem::exists(cfg.timing_path);
    timing.open(cfg.timing_path, std::ios::app);
    if (fresh) timing << "spec,fold,seconds,config_digest\n";
  }

  auto finish_spec = [&](std::size_t i) {
    const ModelSpec& spec = todo[i];
    const SpecState& st = state[i];
    ResultRecord fr;
    fr.spec = spec.str();
    fr.family = spec.family;
    fr.window = spec.window;
    fr.cost = cost_report(spec);
    fr.model_seed = model_seed(cfg.master_seed, spec);
    fr.float_only = !quantizable(spec.family);
    fr.config_digest = digest;
    ResultRecord qr = fr;
    qr.precision = Precision::kInt8;
    const bool want_q = cfg.quantize && quantizable(spec.family);
    if (!st.error.empty()) {
      fr.status = qr.status = "error: " + st.error;
    } else {
      for (std::size_t k = 0; k < folds.size(); ++k) {
        fr.folds.push_back({folds[k].test_session, st.outcomes[k]->float_metrics});
        if (want_q) qr.folds.push_back({folds[k].test_session, *st.outcomes[k]->int8_metrics});
      }
      reaggregate(fr);
      if (want_q) reaggregate(qr);
    }
    existing.push_back(fr);
    if (results.is_open()) results << results_row(fr) << '\n';
    if (want_q) {
      existing.push_back(qr);
      if (results.is_open()) results << results_row(qr) << '\n';
    }
    if (results.is_open()) results.flush();
    if (cfg.log)
      cfg.log(fr.spec + (fr.ok() ? " bal_acc=" + num(fr.agg.bal_acc.mean) +
                                       (want_q && qr.ok() ? " int8=" + num(qr.agg.bal_acc.mean) : "")
                                 : " " + fr.status));
  };

  std::atomic<std::size_t> next{0};
  const std::size_t n_tasks = todo.size() * folds.size();
  auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= n_tasks) return;
      const std::size_t si = t / folds.size(), fi = t % folds.size();
      {
        std::lock_guard lock(mu);
        if (!state[si].error.empty()) {
          if (--state[si].remaining == 0) finish_spec(si);
          continue;
        }
      }
      std::optional<FoldOutcome> out;
      std::string err;
      try {
        out = run_fold(sessions, folds[fi], todo[si], model_seed(cfg.master_seed, todo[si]), cfg);
      } catch (const std::exception& e) {
        err = e.what();
      }
      std::lock_guard lock(mu);
      auto& st = state[si];
      if (!err.empty() && st.error.empty()) st.error = err;
      st.outcomes[fi] = std::move(out);
      if (timing.is_open() && st.outcomes[fi])
        timing << todo[si].str() << ',' << folds[fi].test_session << ','
               << num(st.outcomes[fi]->seconds) << ',' << digest << '\n';
      if (--st.remaining == 0) finish_spec(si);
    }
  };
  const int jobs = std::max(1, cfg.jobs);
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return existing;
}

std::vector<ResultRecord> run_grid(const std::vector<SessionRecord>& sessions,
                                   const ExploreConfig& cfg) {
  std::vector<ResultRecord> records;
  if (!cfg.results_path.empty() && std::filesystem::exists(cfg.results_path) &&
      std::filesystem::file_size(cfg.results_path) > 0)
    records = read_results_file(cfg.results_path);

  auto wants = [&](Family f) {
    return std::find(cfg.families.begin(), cfg.families.end(), f) != cfg.families.end();
  };
  bool dependent = false;
  for (Family f : {Family::kMajorityVoting, Family::kConcat, Family::kLstm, Family::kTcn})
    dependent = dependent || wants(f);

  auto limit = [&](std::vector<ModelSpec> v) {
    if (cfg.max_specs_per_family && v.size() > cfg.max_specs_per_family) v.resize(cfg.max_specs_per_family);
    return v;
  };
  auto stage = [&](Family f, const std::vector<ModelSpec>& extractors) {
    const auto specs = limit(enumerate_family(f, extractors, cfg.grid));
    if (cfg.log)
      cfg.log("stage " + std::string(family_name(f)) + ": " + std::to_string(specs.size()) + " specs");
    records = run_specs(sessions, specs, cfg, std::move(records));
  };

  if (wants(Family::kSingleFrame) || dependent) stage(Family::kSingleFrame, {});
  if (wants(Family::kMultiChannel)) stage(Family::kMultiChannel, {});
  if (dependent) {
    const std::string digest = config_digest(cfg.str());
    std::vector<ResultRecord> sf;
    for (const auto& r : records)
      if (r.family == Family::kSingleFrame && r.config_digest == digest) sf.push_back(r);
    const auto extractors = select_extractors(sf, cfg.extractor_source);
    if (cfg.log) {
      std::string names;
      for (const auto& e : extractors) names += " " + e.extractor_str();
      cfg.log(std::to_string(extractors.size()) + " extractors:" + names);
    }
    for (Family f : {Family::kMajorityVoting, Family::kConcat, Family::kLstm, Family::kTcn})
      if (wants(f)) stage(f, extractors);
  }
  return records;
}

}  // namespace ircount
