#include "experiment.hpp"

#include <glob.h>
#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "gbgnn/error.hpp"

namespace gbgnn::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Strict reader: every key must be consumed, errors carry the field path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw config_error(path_ + ": must be an object");
  }

  template <class T>
  bool opt(const char* key, T& out) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(key, "has the wrong type");
    }
    return true;
  }

  template <class T>
  T req(const char* key) {
    T out{};
    if (!opt(key, out)) fail(key, "is required");
    return out;
  }

  /// Enum-like string field parsed by `conv`; conversion errors get the path.
  template <class T, class Conv>
  bool opt_enum(const char* key, T& out, Conv&& conv) {
    std::string s;
    if (!opt(key, s)) return false;
    try {
      out = conv(s);
    } catch (const Error& e) {
      fail(key, e.what());
    }
    return true;
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(item.key(), "unknown key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw config_error(path_ + "." + key + ": " + msg);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

RPolicy r_policy_from_string(const std::string& s) {
  if (s == "midpoint") return RPolicy::kMidpoint;
  if (s == "tightest") return RPolicy::kTightest;
  throw invalid_argument("unknown r policy '" + s + "' (midpoint | tightest)");
}
std::string to_string(RPolicy p) { return p == RPolicy::kMidpoint ? "midpoint" : "tightest"; }

RootChoice root_from_string(const std::string& s) {
  if (s == "minus") return RootChoice::kMinus;
  if (s == "plus") return RootChoice::kPlus;
  throw invalid_argument("unknown root '" + s + "' (minus | plus)");
}
std::string to_string(RootChoice r) { return r == RootChoice::kMinus ? "minus" : "plus"; }

WlcFallback fallback_from_string(const std::string& s) {
  if (s == "continue") return WlcFallback::kContinueFlagged;
  if (s == "stop") return WlcFallback::kStop;
  throw invalid_argument("unknown fallback '" + s + "' (continue | stop)");
}
std::string to_string(WlcFallback f) { return f == WlcFallback::kStop ? "stop" : "continue"; }

void parse_train(const json& j, const std::string& path, TrainConfig& t, int min_epochs) {
  Reader r(j, path);
  r.opt("epochs", t.epochs);
  r.opt("batch_size", t.batch_size);
  r.opt_enum("optimizer", t.optimizer, optimizer_from_string);
  r.opt("learning_rate", t.learning_rate);
  r.opt("momentum", t.momentum);
  r.opt("weight_decay", t.weight_decay);
  r.opt("dropout", t.dropout);
  if (const json* b = r.child("l1_column_bound")) {
    if (b->is_null()) {
      t.l1_column_bound.reset();
    } else if (b->is_number()) {
      t.l1_column_bound = b->get<double>();
      if (!(*t.l1_column_bound > 0.0)) r.fail("l1_column_bound", "must be > 0");
    } else {
      r.fail("l1_column_bound", "has the wrong type");
    }
  }
  r.finish();
  if (t.epochs < min_epochs) r.fail("epochs", "must be >= " + std::to_string(min_epochs));
  if (t.batch_size < 0) r.fail("batch_size", "must be >= 0 (0 = full batch)");
  if (!(t.learning_rate > 0.0)) r.fail("learning_rate", "must be > 0");
  if (!(t.momentum >= 0.0 && t.momentum < 1.0)) r.fail("momentum", "must lie in [0, 1)");
  if (!(t.weight_decay >= 0.0)) r.fail("weight_decay", "must be >= 0");
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"optimizer", to_string(t.optimizer)},
          {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"dropout", t.dropout},
          {"l1_column_bound", t.l1_column_bound ? json(*t.l1_column_bound) : json(nullptr)}};
}

AggregatorKind aggregator_for(const std::string& variant) {
  if (variant == "kta") return AggregatorKind::kKta;
  if (variant == "input_injection") return AggregatorKind::kInputInjection;
  return AggregatorKind::kFixed;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw data_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw data_error("cannot write " + p.string());
  out << text;
  if (!out) throw data_error("failed writing " + p.string());
}

double accuracy(const Labels& predicted, const Labels& labels, const NodeIds& ids) {
  return ids.empty() ? kNaN : 1.0 - zero_one_error(predicted, labels, ids);
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json seed_json(const SeedResult& r) {
  json j{{"seed", r.seed},
         {"train_acc", num(r.train_acc)},
         {"val_acc", num(r.val_acc)},
         {"test_acc", num(r.test_acc)},
         {"t_star", r.t_star},
         {"stages", r.stages},
         {"flagged", r.flagged},
         {"flag_reason", r.flag_reason}};
  if (r.fine_tune) {
    j["fine_tune"] = {{"train_err_before", r.fine_tune->train_err_before},
                      {"train_err_after", r.fine_tune->train_err_after},
                      {"val_err_before", num(r.fine_tune->val_err_before)},
                      {"val_err_after", num(r.fine_tune->val_err_after)},
                      {"flagged", r.fine_tune->flagged}};
  }
  return j;
}

json mean_std_json(const MeanStd& m) { return {{"mean", num(m.mean)}, {"std", num(m.std)}}; }

}  // namespace

ModelSpec ExperimentConfig::model_spec(std::uint64_t seed) const {
  ModelSpec s;
  s.aggregator = aggregator_for(variant);
  s.propagation = propagation;
  s.rho = rho;
  s.kta_degree = kta_degree;
  s.alignment = alignment;
  s.hidden_layers = hidden_layers;
  s.hidden_width = hidden_width;
  s.activation = activation;
  s.bias_every_layer = bias_every_layer;
  s.train = train;
  s.train.seed = seed;
  return s;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Reader r(j, "config");

  const json* ds = r.child("dataset");
  if (ds == nullptr) r.fail("dataset", "is required");
  {
    Reader d(*ds, "config.dataset");
    d.opt("kind", c.dataset.kind);
    if (c.dataset.kind == "planetoid") {
      c.dataset.name = d.req<std::string>("name");
      c.dataset.path = d.req<std::string>("path");
      d.opt("row_normalize", c.dataset.row_normalize);
    } else if (c.dataset.kind == "two_block") {
      d.opt("n", c.dataset.n);
      d.opt("p_in", c.dataset.p_in);
      d.opt("p_out", c.dataset.p_out);
      d.opt("seed", c.dataset.seed);
      d.opt("noise_sigma", c.dataset.noise_sigma);
      d.opt("train_fraction", c.dataset.train_fraction);
      c.dataset.name = "two_block";
      if (c.dataset.n < 4) d.fail("n", "must be >= 4");
      if (!(c.dataset.p_in >= 0.0 && c.dataset.p_in <= 1.0)) d.fail("p_in", "must lie in [0, 1]");
      if (!(c.dataset.p_out >= 0.0 && c.dataset.p_out <= 1.0)) d.fail("p_out", "must lie in [0, 1]");
      if (!(c.dataset.noise_sigma >= 0.0)) d.fail("noise_sigma", "must be >= 0");
      if (!(c.dataset.train_fraction > 0.0 && c.dataset.train_fraction < 1.0)) {
        d.fail("train_fraction", "must lie in (0, 1)");
      }
    } else {
      d.fail("kind", "must be planetoid or two_block");
    }
    d.finish();
  }

  r.opt("variant", c.variant);
  if (c.variant != "adj" && c.variant != "kta" && c.variant != "input_injection" &&
      c.variant != "samme_r") {
    r.fail("variant", "must be adj, kta, input_injection or samme_r");
  }

  if (const json* m = r.child("model")) {
    Reader mr(*m, "config.model");
    mr.opt("hidden_layers", c.hidden_layers);
    mr.opt("hidden_width", c.hidden_width);
    mr.opt_enum("activation", c.activation, activation_from_string);
    mr.opt("bias_every_layer", c.bias_every_layer);
    mr.opt_enum("propagation", c.propagation, propagation_from_string);
    mr.opt("kta_degree", c.kta_degree);
    mr.opt("rho", c.rho);
    mr.finish();
    if (c.hidden_layers < 0 || c.hidden_layers > 4) mr.fail("hidden_layers", "must lie in [0, 4]");
    if (c.hidden_width < 1) mr.fail("hidden_width", "must be >= 1");
    if (c.kta_degree < 0) mr.fail("kta_degree", "must be >= 0");
    if (!(c.rho >= 0.0 && c.rho <= 1.0)) mr.fail("rho", "must lie in [0, 1]");
  }

  if (const json* ft = r.child("fine_tune")) {
    Reader fr(*ft, "config.fine_tune");
    fr.opt("enabled", c.fine_tune.enabled);
    if (const json* t = fr.child("train")) parse_train(*t, fr.path("train"), c.fine_tune.train, 0);
    fr.finish();
  }

  bool mode_given = false;
  bool t_given = false;
  if (const json* b = r.child("boosting")) {
    Reader br(*b, "config.boosting");
    mode_given = br.opt_enum("mode", c.mode, boost_mode_from_string);
    t_given = br.opt("T", c.T);
    br.opt("eta1", c.functional.eta1);
    br.opt_enum("r_policy", c.functional.r_policy, r_policy_from_string);
    br.opt_enum("root", c.functional.root, root_from_string);
    br.opt_enum("fallback", c.functional.fallback, fallback_from_string);
    br.opt("fallback_alpha", c.functional.fallback_alpha);
    br.opt("strict_t_star", c.functional.strict_t_star);
    br.opt("delta", c.functional.delta);
    br.opt("clip", c.clip);
    br.finish();
    if (t_given && c.T < 1) br.fail("T", "must be >= 1");
    if (!(c.functional.eta1 > 0.0)) br.fail("eta1", "must be > 0");
    if (!(c.functional.fallback_alpha > 0.0)) br.fail("fallback_alpha", "must be > 0");
    if (!(c.clip > 0.0 && c.clip < 0.5)) br.fail("clip", "must lie in (0, 1/2)");
    if (c.variant == "samme_r" && mode_given && c.mode != BoostMode::kSammeR) {
      br.fail("mode", "variant samme_r requires mode samme_r");
    }
  }
  if (c.variant == "samme_r") c.mode = BoostMode::kSammeR;
  if (!t_given) {
    if (c.mode == BoostMode::kFunctional) c.T = 10;
    else if (c.variant == "kta" && c.fine_tune.enabled) c.T = 40;
    else c.T = 100;
  }

  if (const json* t = r.child("train")) parse_train(*t, "config.train", c.train, 1);

  if (const json* a = r.child("alignment")) {
    Reader ar(*a, "config.alignment");
    ar.opt("epochs", c.alignment.epochs);
    ar.opt_enum("optimizer", c.alignment.optimizer, optimizer_from_string);
    ar.opt("learning_rate", c.alignment.learning_rate);
    ar.finish();
    if (c.alignment.epochs < 1) ar.fail("epochs", "must be >= 1");
    if (!(c.alignment.learning_rate > 0.0)) ar.fail("learning_rate", "must be > 0");
  }

  if (r.opt("seeds", c.seeds) && c.seeds.empty()) r.fail("seeds", "must be nonempty");
  r.opt("output_dir", c.output_dir);
  r.finish();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json ds{{"kind", c.dataset.kind}};
  if (c.dataset.kind == "planetoid") {
    ds["name"] = c.dataset.name;
    ds["path"] = c.dataset.path;
    ds["row_normalize"] = c.dataset.row_normalize;
  } else {
    ds["n"] = c.dataset.n;
    ds["p_in"] = c.dataset.p_in;
    ds["p_out"] = c.dataset.p_out;
    ds["seed"] = c.dataset.seed;
    ds["noise_sigma"] = c.dataset.noise_sigma;
    ds["train_fraction"] = c.dataset.train_fraction;
  }
  return {{"dataset", ds},
          {"variant", c.variant},
          {"model",
           {{"hidden_layers", c.hidden_layers},
            {"hidden_width", c.hidden_width},
            {"activation", to_string(c.activation)},
            {"bias_every_layer", c.bias_every_layer},
            {"propagation", to_string(c.propagation)},
            {"kta_degree", c.kta_degree},
            {"rho", c.rho}}},
          {"boosting",
           {{"mode", to_string(c.mode)},
            {"T", c.T},
            {"eta1", c.functional.eta1},
            {"r_policy", to_string(c.functional.r_policy)},
            {"root", to_string(c.functional.root)},
            {"fallback", to_string(c.functional.fallback)},
            {"fallback_alpha", c.functional.fallback_alpha},
            {"strict_t_star", c.functional.strict_t_star},
            {"delta", c.functional.delta},
            {"clip", c.clip}}},
          {"train", train_json(c.train)},
          {"alignment",
           {{"epochs", c.alignment.epochs},
            {"optimizer", to_string(c.alignment.optimizer)},
            {"learning_rate", c.alignment.learning_rate}}},
          {"fine_tune", {{"enabled", c.fine_tune.enabled}, {"train", train_json(c.fine_tune.train)}}},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir}};
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw config_error("cannot read config file " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw config_error("config file " + file.string() + " is not valid JSON: " + e.what());
  }
  ExperimentConfig c = parse_config(j);
  if (c.dataset.kind == "planetoid" && fs::path(c.dataset.path).is_relative()) {
    c.dataset.path = (file.parent_path() / c.dataset.path).lexically_normal().string();
  }
  return c;
}

NodeDataset load_dataset(const DatasetRef& ref) {
  if (ref.kind == "two_block") {
    TwoBlockOptions o;
    o.noise_sigma = ref.noise_sigma;
    o.train_fraction = ref.train_fraction;
    return synthesize_two_block(ref.n, ref.p_in, ref.p_out, ref.seed, o);
  }
  PlanetoidOptions o;
  o.row_normalize = ref.row_normalize;
  return load_planetoid(ref.path, ref.name, o);
}

std::string git_blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw numeric_error("SHA-1 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return hex.str();
}

std::string git_blob_sha1_file(const fs::path& file) { return git_blob_sha1(read_file(file)); }

MeanStd mean_std(const std::vector<double>& v) {
  std::vector<double> x;
  for (double d : v) {
    if (std::isfinite(d)) x.push_back(d);
  }
  if (x.empty()) return {kNaN, kNaN};
  double mean = 0.0;
  for (double d : x) mean += d;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double d : x) ss += (d - mean) * (d - mean);
  const double sd = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
  return {mean, sd};
}

SeedRun run_seed(const ExperimentConfig& cfg, const NodeDataset& data, std::uint64_t seed) {
  const ModelSpec spec = cfg.model_spec(seed);
  SeedRun run;
  switch (cfg.mode) {
    case BoostMode::kFunctional: {
      FunctionalConfig f = cfg.functional;
      f.T = cfg.T;
      f.clip = cfg.clip;
      run.boost = run_functional_gb(data, spec, f);
      break;
    }
    case BoostMode::kSamme:
      run.boost = run_samme(data, spec, SammeConfig{cfg.T, cfg.clip});
      break;
    case BoostMode::kSammeR:
      run.boost = run_samme_r(data, spec, SammeConfig{cfg.T, cfg.clip});
      break;
  }
  SeedResult& r = run.result;
  r.seed = seed;
  r.flagged = run.boost.flagged;
  r.flag_reason = run.boost.flag_reason;
  if (cfg.fine_tune.enabled && !run.boost.model.stages.empty()) {
    TrainConfig ft = cfg.fine_tune.train;
    ft.seed = seed;
    r.fine_tune = fine_tune(run.boost.model, data, ft);
    run.boost.model = r.fine_tune->model;
  }
  const EnsembleModel& m = run.boost.model;
  r.t_star = m.t_star;
  r.stages = m.stages.size();
  if (m.stages.empty()) {
    r.train_acc = r.val_acc = r.test_acc = kNaN;
    return run;
  }
  const Prediction p = predict(m, data.features);
  r.train_acc = accuracy(p.classes, data.labels, data.split.train());
  r.val_acc = accuracy(p.classes, data.labels, data.split.validation());
  r.test_acc = accuracy(p.classes, data.labels, data.split.test());
  return run;
}

TrainSummary cmd_train(const ExperimentConfig& cfg, const fs::path& out,
                       const std::optional<fs::path>& config_file, unsigned jobs) {
  const NodeDataset data = load_dataset(cfg.dataset);
  fs::create_directories(out);

  const std::string config_text = to_json(cfg).dump(2) + "\n";
  write_file(out / "config.json", config_text);
  json info{{"config_sha1", git_blob_sha1(config_text)}};
  if (config_file) info["config_file_sha1"] = git_blob_sha1_file(*config_file);
  fs::path data_dir;
  if (cfg.dataset.kind == "two_block") {
    data_dir = out / "dataset";
    save_dataset(data, data_dir);
  } else {
    data_dir = cfg.dataset.path;
  }
  json inputs = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(data_dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) inputs[f.filename().string()] = git_blob_sha1_file(f);
  info["dataset_dir"] = data_dir.string();
  info["inputs"] = inputs;
  write_file(out / "run_info.json", info.dump(2) + "\n");

  const std::size_t n = cfg.seeds.size();
  std::vector<SeedResult> results(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const std::uint64_t seed = cfg.seeds[i];
        const fs::path dir = out / ("seed_" + std::to_string(seed));
        fs::create_directories(dir);
        const SeedRun run = run_seed(cfg, data, seed);
        save_model(run.boost.model, dir / "model");
        std::ofstream trace(dir / "trace.csv");
        write_trace_csv(trace, run.boost.trace);
        if (!trace) throw data_error("failed writing " + (dir / "trace.csv").string());
        write_file(dir / "summary.json", seed_json(run.result).dump(2) + "\n");
        results[i] = run.result;
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  TrainSummary s;
  s.runs = results;
  std::vector<double> tr, va, te;
  json runs = json::array();
  for (const SeedResult& r : results) {
    tr.push_back(r.train_acc);
    va.push_back(r.val_acc);
    te.push_back(r.test_acc);
    runs.push_back(seed_json(r));
  }
  s.train_acc = mean_std(tr);
  s.val_acc = mean_std(va);
  s.test_acc = mean_std(te);
  const json summary{{"runs", runs},
                     {"n_runs", n},
                     {"train_acc", mean_std_json(s.train_acc)},
                     {"val_acc", mean_std_json(s.val_acc)},
                     {"test_acc", mean_std_json(s.test_acc)}};
  write_file(out / "summary.json", summary.dump(2) + "\n");
  return s;
}

TheoryFiles cmd_theory(const fs::path& model, const fs::path& data_dir, const TheoryOptions& opts,
                       const std::optional<fs::path>& out) {
  const fs::path model_json = fs::is_directory(model) ? model / "model.json" : model;
  if (!fs::exists(model_json)) throw data_error("model manifest not found: " + model_json.string());
  const fs::path model_dir = model_json.parent_path();
  const fs::path run_dir = model_dir.parent_path();

  // A config two levels up tells how the features were prepared.
  PlanetoidOptions po;
  const fs::path config = run_dir.parent_path() / "config.json";
  if (fs::exists(config)) {
    const ExperimentConfig c = parse_config(json::parse(read_file(config)));
    po.row_normalize = c.dataset.kind == "planetoid" && c.dataset.row_normalize;
  }
  fs::path dir = data_dir;
  if (dir.filename().empty()) dir = dir.parent_path();  // trailing slash
  const NodeDataset data = load_planetoid(dir, dir.filename().string(), po);
  const EnsembleModel m = load_model(model_json, data.graph);

  std::vector<TraceRow> trace;
  for (const fs::path& candidate : {run_dir / "trace.csv", model_dir / "trace.csv"}) {
    if (fs::exists(candidate)) {
      std::ifstream in(candidate);
      trace = read_trace_csv(in);
      break;
    }
  }

  TheoryFiles files;
  files.report = theory_report(m, data, trace, opts);
  const fs::path target = out.value_or(run_dir);
  fs::create_directories(target);
  files.json = target / "theory.json";
  write_file(files.json, to_json(files.report).dump(2) + "\n");
  if (files.report.spectral) {
    files.spectral_csv = target / "spectral.csv";
    std::ofstream csv(*files.spectral_csv);
    write_spectral_csv(csv, *files.report.spectral);
    if (!csv) throw data_error("failed writing " + files.spectral_csv->string());
  }
  return files;
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<fs::path> out;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw data_error("glob failed for pattern " + pattern);
  std::sort(out.begin(), out.end());
  return out;
}

void cmd_curves(const std::vector<fs::path>& traces, std::ostream& out) {
  if (traces.empty()) throw data_error("curves: no trace files matched");
  static const std::vector<std::string> metrics = {"train_loss", "train_err", "test_err",
                                                   "cos_theta",  "alpha",     "beta",
                                                   "gamma",      "grad_l1",   "wlc_pass"};
  auto value = [](const TraceRow& r, std::size_t k) {
    switch (k) {
      case 0: return r.train_loss;
      case 1: return r.train_err;
      case 2: return r.test_err;
      case 3: return r.cos_theta;
      case 4: return r.alpha;
      case 5: return r.beta;
      case 6: return r.gamma;
      case 7: return r.grad_l1;
      default: return r.wlc_pass ? 1.0 : 0.0;
    }
  };

  std::vector<std::string> seeds;
  std::vector<std::vector<TraceRow>> data;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::ifstream in(traces[i]);
    if (!in) throw data_error("curves: cannot read " + traces[i].string());
    try {
      data.push_back(read_trace_csv(in));
    } catch (const Error& e) {
      throw data_error("curves: " + traces[i].string() + ": " + e.what());
    }
    std::string seed = std::to_string(i);
    for (const auto& part : traces[i]) {
      const std::string s = part.string();
      if (s.rfind("seed_", 0) == 0) seed = s.substr(5);
    }
    seeds.push_back(seed);
  }

  const bool stats = data.size() > 1;
  std::map<std::pair<int, std::size_t>, std::vector<double>> pooled;
  if (stats) {
    for (const auto& rows : data) {
      for (const TraceRow& r : rows) {
        for (std::size_t k = 0; k < metrics.size(); ++k) pooled[{r.t, k}].push_back(value(r, k));
      }
    }
  }
  auto put = [&out](double v) {
    if (std::isnan(v)) out << "nan";
    else out << v;
  };
  const auto old = out.precision(17);
  out << "seed,t,metric,value" << (stats ? ",mean,std" : "") << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (const TraceRow& r : data[i]) {
      for (std::size_t k = 0; k < metrics.size(); ++k) {
        out << seeds[i] << ',' << r.t << ',' << metrics[k] << ',';
        put(value(r, k));
        if (stats) {
          const MeanStd ms = mean_std(pooled[{r.t, k}]);
          out << ',';
          put(ms.mean);
          out << ',';
          put(ms.std);
        }
        out << '\n';
      }
    }
  }
  out.precision(old);
}

}  // namespace gbgnn::experiment
