// Acceptance criteria on the citation datasets (1, 2 and 9).
//
// GBGNN_DATA_ROOT must hold cora/, citeseer/ and pubmed/ in the converted
// layout (see tools/planetoid_to_tsv.py). Without it the program exits 77,
// which ctest reports as skipped. Artifacts go to GBGNN_ACCEPTANCE_OUT
// (default ./acceptance_runs).
//
// GBGNN_ACCEPTANCE_SEEDS and GBGNN_ACCEPTANCE_T shrink the runs for smoke
// testing; results obtained that way are labelled and do not count.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "experiment.hpp"
#include "report.hpp"

namespace fs = std::filesystem;
namespace ex = gbgnn::experiment;
using gbgnn::acceptance::Outcome;
using gbgnn::acceptance::fmt;

namespace {

struct Reference {
  const char* name;
  double reference;  // published mean test accuracy, percent
  double threshold;  // reference - 3
};

constexpr Reference kReferences[] = {
    {"cora", 79.9, 76.9},
    {"citeseer", 70.5, 67.5},
    {"pubmed", 79.4, 76.4},
};

int env_int(const char* key, int fallback) {
  const char* v = std::getenv(key);
  return v != nullptr && *v != '\0' ? std::atoi(v) : fallback;
}

ex::ExperimentConfig adj_config(const fs::path& root, const std::string& name, int hidden_layers,
                                int seeds, int t) {
  ex::ExperimentConfig c;
  c.dataset.kind = "planetoid";
  c.dataset.name = name;
  c.dataset.path = (root / name).string();
  c.variant = "adj";
  c.hidden_layers = hidden_layers;
  c.mode = gbgnn::BoostMode::kSamme;
  c.T = t;
  c.seeds.clear();
  for (int s = 0; s < seeds; ++s) c.seeds.push_back(static_cast<std::uint64_t>(s));
  return c;
}

// Runs (or reuses) a training run directory; returns mean test accuracy in percent.
double train(const ex::ExperimentConfig& cfg, const fs::path& out) {
  const unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  const ex::TrainSummary s = ex::cmd_train(cfg, out, std::nullopt, jobs);
  return 100.0 * s.test_acc.mean;
}

Outcome curves(const fs::path& run_dir, const fs::path& csv) {
  Outcome o{2, "CiteSeer curves: losses non-increasing while cos > 0", false, ""};
  std::ifstream in(run_dir / "seed_0" / "trace.csv");
  const auto rows = gbgnn::read_trace_csv(in);
  {
    std::ofstream merged(csv);
    ex::cmd_curves({run_dir / "seed_0" / "trace.csv"}, merged);
  }
  std::size_t prefix = 0;
  while (prefix < rows.size() && rows[prefix].cos_theta > 0.0) ++prefix;
  if (prefix == 0) {
    o.detail = "cos theta is not positive at the first iteration";
    return o;
  }
  // Noise band: 5% of the initial value above the running minimum.
  auto within_band = [&](auto get) {
    const double band = 0.05 * get(rows[0]);
    double best = get(rows[0]);
    std::size_t violations = 0;
    for (std::size_t t = 1; t < prefix; ++t) {
      if (get(rows[t]) > best + band) ++violations;
      best = std::min(best, get(rows[t]));
    }
    return violations;
  };
  const std::size_t loss_bad = within_band([](const gbgnn::TraceRow& r) { return r.train_loss; });
  const std::size_t test_bad = within_band([](const gbgnn::TraceRow& r) { return r.test_err; });
  o.pass = prefix >= 20 && loss_bad == 0 && test_bad == 0;
  o.detail = "cos > 0 for the first " + std::to_string(prefix) + " iterations; band violations: " +
             "train loss " + std::to_string(loss_bad) + ", test error " + std::to_string(test_bad) +
             "; curves at " + csv.string();
  return o;
}

// Smoke-test runs never count as passing.
Outcome& discount(Outcome& o, bool reduced) {
  if (reduced) {
    o.detail += o.pass ? " [would pass; " : " [";
    o.detail += "not counted: reduced settings]";
    o.pass = false;
  }
  return o;
}

}  // namespace

int main() {
  const char* root_env = std::getenv("GBGNN_DATA_ROOT");
  if (root_env == nullptr || *root_env == '\0') {
    std::printf("SKIP criteria 1, 2, 9: GBGNN_DATA_ROOT is not set (citation datasets unavailable)\n");
    return 77;
  }
  const fs::path root(root_env);
  const char* out_env = std::getenv("GBGNN_ACCEPTANCE_OUT");
  const fs::path out = out_env != nullptr && *out_env != '\0' ? fs::path(out_env) : fs::path("acceptance_runs");
  const int seeds = env_int("GBGNN_ACCEPTANCE_SEEDS", 10);
  const int t = env_int("GBGNN_ACCEPTANCE_T", 100);
  const bool reduced = seeds != 10 || t != 100;
  if (reduced) {
    std::printf("NOTE: reduced settings (%d seeds, T = %d); results below are a smoke test only\n",
                seeds, t);
  }

  std::vector<Outcome> all;
  try {
    // Criterion 1: Adj, one hidden layer, SAMME.
    Outcome c1{1, "test accuracy, Adj L=1 SAMME", true, ""};
    std::map<std::string, double> acc;
    for (const Reference& r : kReferences) {
      if (!fs::is_directory(root / r.name)) {
        c1.pass = false;
        c1.detail += std::string(r.name) + " missing; ";
        continue;
      }
      const double a = train(adj_config(root, r.name, 1, seeds, t), out / r.name / "L1");
      acc[r.name] = a;
      const bool ok = a >= r.threshold && std::abs(a - r.reference) <= 3.0;
      c1.pass = c1.pass && ok;
      c1.detail += std::string(r.name) + " " + fmt("%.2f", a) + " (need " + fmt("%.1f", r.threshold) + ".." +
                   fmt("%.1f", r.reference + 3.0) + ")" + (ok ? "" : " FAIL") + "; ";
    }
    all.push_back(c1);
    gbgnn::acceptance::print(discount(all.back(), reduced));

    const fs::path citeseer_l1 = out / "citeseer" / "L1";
    if (acc.count("citeseer") != 0) {
      all.push_back(curves(citeseer_l1, out / "citeseer_curves.csv"));
      gbgnn::acceptance::print(discount(all.back(), reduced));

      // Criterion 9: depth trend.
      Outcome c9{9, "CiteSeer depth trend", false, ""};
      std::vector<double> by_depth(5);
      by_depth[1] = acc["citeseer"];
      for (int l : {0, 2, 3, 4}) {
        by_depth[l] = train(adj_config(root, "citeseer", l, seeds, t),
                            out / "citeseer" / ("L" + std::to_string(l)));
      }
      c9.pass = by_depth[4] <= std::max(by_depth[0], by_depth[1]);
      for (int l = 0; l <= 4; ++l) c9.detail += "L=" + std::to_string(l) + " " + fmt("%.2f", by_depth[l]) + "; ";
      all.push_back(c9);
      gbgnn::acceptance::print(discount(all.back(), reduced));
    } else {
      for (auto [id, title] : {std::pair{2, "CiteSeer curves"}, std::pair{9, "CiteSeer depth trend"}}) {
        all.push_back(Outcome{id, title, false, "citeseer dataset missing"});
        gbgnn::acceptance::print(all.back());
      }
    }
  } catch (const std::exception& e) {
    std::printf("FAIL datasets acceptance aborted: %s\n", e.what());
    return 1;
  }
  return gbgnn::acceptance::summarize(all);
}
