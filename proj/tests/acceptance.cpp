// Acceptance suite: one pass/fail line per criterion, nonzero exit if any fails.
// The ablation-based criteria share one resumable run whose journal lives in
// the build tree, so a rerun only trains cells that are missing.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

#include "lgr/ablation.hpp"
#include "lgr/errors.hpp"
#include "lgr/eval.hpp"
#include "lgr/experiment.hpp"
#include "lgr/gradient_suite.hpp"
#include "lgr/image.hpp"
#include "lgr/ops.hpp"
#include "lgr/training.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace lgr;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto cases = run_gradient_suite({1, 2, 3, 4, 5});
  const double elapsed = seconds_since(t0);
  double worst = 0;
  std::string failures;
  std::set<std::string> ops;
  for (const GradientCase& c : cases) {
    ops.insert(c.op);
    worst = std::max(worst, c.report.worst);
    if (c.report.worst > 1e-4 || c.report.max_abs_grad < kMinGradient) {
      failures += fmt(" %s/seed%llu", c.op.c_str(), static_cast<unsigned long long>(c.seed));
    }
  }
  return {failures.empty() && elapsed <= 120.0,
          fmt("%zu operations x 5 seeds, worst relative error %.2e (tolerance 1e-4), %.1f s (limit 120 s)%s%s",
              ops.size(), worst, elapsed, failures.empty() ? "" : "; failing:", failures.c_str())};
}

Verdict hand_trace() {
  const nlohmann::json fx = testing::load_fixture("hand_trace_2leaf.json");
  double worst = 0;
  for (const bool edge : {true, false}) {
    const LayoutGraph g = testing::pair_graph(edge);
    LgrConfig cfg;
    cfg.channels = 2;
    cfg.node_dim = 2;
    cfg.clustering_depth = 1;
    LgrParams p = zero_lgr_params(g, cfg);
    for_each_weight(p, [&](const std::string& name, Tensor& t) { t = testing::from_json(fx["weights"].at(name)); });
    const auto& want = fx[edge ? "with_edge" : "no_edge"];
    Tape tape;
    const LgrVars w = bind(tape, p);
    const Var f = tape.constant(testing::from_json(fx["weights"]["F"]));
    auto compare = [&](const Tensor& got, const nlohmann::json& expected) {
      const Tensor e = testing::from_json(expected);
      if (got.shape() != e.shape()) {
        worst = INFINITY;
        return;
      }
      for (std::size_t i = 0; i < e.size(); ++i) worst = std::max(worst, std::abs(got[i] - e[i]));
    };
    const Var leaves = map_to_node(f, w, cfg);
    compare(leaves.value(), want["x_leaf"]);
    const Var adj = tape.constant(g.normalized(0));
    const Var x1 = graph_reasoning(leaves, adj, w.reasoning[0]);
    compare(x1.value(), want["x_after_leaf_reasoning"]);
    const ClusterResult up = cluster_step(x1, adj, g, w, 0, cfg);
    compare(up.features.value(), want["x_up"]);
    compare(up.raw_adjacency.value(), want["raw_up_adjacency"]);
    compare(reason_full(leaves, g, w, cfg).value(), want["x_evolved"]);
    compare(lgr_forward(f, g, w, cfg).value(), want["output"]);
  }
  return {worst <= 1e-12,
          fmt("2-leaf/1-root graph with and without the leaf edge, max deviation from the committed symbolic trace "
              "%.2e (tolerance 1e-12)",
              worst)};
}

Verdict overfit() {
  ExperimentConfig cfg;
  cfg.synth.train_count = 16;
  const Dataset data = generate_split(cfg.synth, build_hierarchy(fld8()), "train");
  cfg.train.augment = false;
  cfg.train.epochs = 2000;  // one step per epoch with 16 images
  cfg.train.max_steps = 2000;
  cfg.train.drop_every = 100000;
  cfg.train.patience = 2000;
  cfg.train.target_ne = 0.02;
  const auto t0 = Clock::now();
  const TrainResult r = train(data, data, cfg.model, cfg.train);
  const double elapsed = seconds_since(t0);
  const Model model(cfg.model, r.best_params);
  const double argmax_ne = evaluate(model, data, Decoder::argmax).average;
  return {r.best_val_ne <= 0.02 && r.steps <= 2000 && elapsed <= 600.0,
          fmt("16 images, %zu stacks, clustering depth %zu: train NE %.4f after %zu Adam steps (target 0.02 within "
              "2000), %.0f s (limit 600 s); argmax-decoded NE %.4f",
              cfg.model.num_stacks, cfg.model.clustering_depth, r.best_val_ne, r.steps, elapsed, argmax_ne)};
}

Verdict orthogonality_alone() {
  // Plain gradient descent on the penalty of every stack from the masked initialization.
  ModelConfig cfg;
  const LayoutGraph g = build_hierarchy(fld8());
  ModelParams p = init_params(cfg, g, 1);
  std::vector<Tensor*> cluster_weights;
  for (auto& stack : p.stacks)
    for (auto& c : stack.cluster) {
      cluster_weights.push_back(&c.adjacency_assign);
      cluster_weights.push_back(&c.feature_assign);
    }
  const double initial = orthogonality_value(p, g, cfg);
  double value = initial;
  std::size_t steps = 0;
  for (; steps < 1000 && value > 1e-3; ++steps) {
    Tape tape;
    const ModelVars w = bind(tape, p);
    const Var penalty = orthogonality_total(w, g, cfg);
    auto grads = tape.backward(penalty);
    std::vector<const Var*> vars;
    for (auto& stack : w.stacks)
      for (auto& c : stack.cluster) {
        vars.push_back(&c.adjacency_assign);
        vars.push_back(&c.feature_assign);
      }
    for (std::size_t i = 0; i < vars.size(); ++i) {
      const Tensor& gr = grads[*vars[i]];
      Tensor& t = *cluster_weights[i];
      for (std::size_t k = 0; k < t.size(); ++k) t[k] -= 1e-2 * gr[k];
    }
    value = orthogonality_value(p, g, cfg);
  }
  return {value <= 1e-3,
          fmt("%zu stacks x 3 levels of both clustering matrices, penalty %.3g -> %.2e after %zu gradient steps "
              "(target 1e-3 within 1000)",
              cfg.num_stacks, initial, value, steps)};
}

Verdict determinism_and_formats(const fs::path& scratch) {
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  ExperimentConfig cfg;
  cfg.synth.train_count = 32;
  cfg.synth.val_count = 16;
  cfg.synth.test_count = 8;
  cfg.synth.distractor_prob = 0.5;
  cfg.train.epochs = 2;
  const LayoutGraph g = build_hierarchy(fld8());
  const Dataset train_set = generate_split(cfg.synth, g, "train"), val_set = generate_split(cfg.synth, g, "val");

  // Two identical runs must write byte-identical metrics logs.
  auto run = [&](const std::string& name) {
    TrainOutputs out;
    out.metrics_path = (scratch / (name + ".csv")).string();
    out.checkpoint_path = (scratch / (name + ".lgrc")).string();
    out.config_text = experiment_to_text(cfg);
    return std::make_pair(train(train_set, val_set, cfg.model, cfg.train, out), out);
  };
  const auto [ra, oa] = run("a");
  const auto [rb, ob] = run("b");
  const bool logs_equal = read_text_file(oa.metrics_path) == read_text_file(ob.metrics_path);
  const bool checkpoints_equal = read_text_file(oa.checkpoint_path) == read_text_file(ob.checkpoint_path);

  // Checkpoint write -> read -> eval reproduces the in-memory report exactly.
  const NEReport in_memory = evaluate(Model(cfg.model, ra.best_params), val_set, cfg.train.decoder);
  const NEReport reloaded = evaluate(load_model(oa.checkpoint_path), val_set, cfg.train.decoder);
  const bool reports_equal = in_memory == reloaded;

  // Annotation files and images survive a disk round trip.
  generate_dataset(cfg.synth, (scratch / "data").string());
  bool annotations_equal = true;
  for (const char* split : kSplitNames) {
    const Dataset disk = load_split((scratch / "data").string(), split);
    const Dataset memory = generate_split(cfg.synth, g, split);
    annotations_equal = annotations_equal && disk.annotations == memory.annotations;
    for (std::size_t i = 0; i < disk.size() && annotations_equal; ++i) {
      const Tensor& a = disk.images[i];
      const Tensor& b = memory.images[i];
      for (std::size_t k = 0; k < a.size(); ++k) annotations_equal &= to_byte(a[k]) == to_byte(b[k]);
    }
    for (const SceneAnnotation& a : memory.annotations) {
      annotations_equal = annotations_equal && annotation_from_json(annotation_to_json(a)) == a;
    }
  }
  fs::remove_all(scratch);
  const bool pass = logs_equal && checkpoints_equal && reports_equal && annotations_equal;
  return {pass, fmt("metrics logs identical: %s; checkpoints identical: %s; reloaded NEReport identical: %s; "
                    "annotations and images round-trip: %s",
                    logs_equal ? "yes" : "NO", checkpoints_equal ? "yes" : "NO", reports_equal ? "yes" : "NO",
                    annotations_equal ? "yes" : "NO")};
}

Verdict quantization_bound() {
  SynthSpec spec;
  spec.val_count = 500;
  spec.distractor_prob = 0.5;
  const LayoutGraph g = build_hierarchy(fld8());
  const Dataset d = generate_split(spec, g, "val");
  bool pass = true;
  std::string detail;
  for (std::size_t W : {8u, 16u}) {
    std::vector<Prediction> preds;
    for (const auto& a : d.annotations) preds.push_back(decode_landmarks(render_heatmaps(a.landmarks, W, W, 1.0)));
    const double ne = normalized_error(preds, d.annotations, g.leaf_names()).average;
    const double bound = std::sqrt(2.0) * 0.5 / static_cast<double>(W);
    pass = pass && ne <= bound;
    detail += fmt("%s%zux%zu: NE %.4f <= %.4f", detail.empty() ? "" : "; ", W, W, ne, bound);
  }
  return {pass, "argmax decoding of ground-truth heatmaps over 500 images, " + detail};
}

// ---------------------------------------------------------------------------
// Ablation-based criteria.

const char* kAblationPlan = R"(# Structure ablation on 2000 training / 500 validation synthetic images.
seeds = 1, 2, 3, 4, 5
train_count = 2000
val_count = 500
test_count = 0
distractor_prob = 0.5
epochs = 12
drop_every = 8
patience = 12

[standard]

[plain]
clustering_depth = 0

[one_stack]
num_stacks = 1
)";

struct AblationSummary {
  std::vector<AblationRow> rows;
  double elapsed = 0;
};

std::string row_list(const std::vector<AblationRow>& rows, const std::function<double(const AblationRow&)>& value) {
  std::string s;
  for (const AblationRow& r : rows) s += fmt("%s%.4f", s.empty() ? "" : " ", value(r));
  return s;
}

/// Number of seeds where `better` beats `worse` on the given metric (lower is better).
std::pair<std::size_t, std::size_t> wins(const std::vector<AblationRow>& better, const std::vector<AblationRow>& worse,
                                         const std::function<double(const AblationRow&)>& metric) {
  std::size_t w = 0, n = 0;
  for (const AblationRow& a : better)
    for (const AblationRow& b : worse) {
      if (a.seed != b.seed || !a.ok() || !b.ok()) continue;
      ++n;
      w += metric(a) < metric(b);
    }
  return {w, n};
}

Verdict structure_trend(const AblationSummary& s) {
  const auto standard = rows_for(s.rows, "standard"), plain = rows_for(s.rows, "plain"),
             one = rows_for(s.rows, "one_stack");
  auto ne = [](const AblationRow& r) { return r.avg_ne; };
  const auto [wa, na] = wins(standard, plain, ne);
  const auto [wb, nb] = wins(standard, one, ne);
  return {na == 5 && nb == 5 && wa >= 4 && wb >= 4,
          fmt("(a) clustering depth 3 beats plain reasoning on %zu of %zu seeds; (b) 4 stacks beat 1 stack on %zu of "
              "%zu seeds (need 4 of 5 each). val NE per seed: standard [%s] plain [%s] one_stack [%s]",
              wa, na, wb, nb, row_list(standard, ne).c_str(), row_list(plain, ne).c_str(),
              row_list(one, ne).c_str())};
}

Verdict coherency_probe(const AblationSummary& s) {
  const auto standard = rows_for(s.rows, "standard"), plain = rows_for(s.rows, "plain");
  auto ratio = [](const AblationRow& r) { return r.distractor_ne / r.clean_ne; };
  const auto [w, n] = wins(standard, plain, ratio);
  return {n == 5 && w >= 3,
          fmt("distractor/clean NE ratio lower for the layout-graph model than for plain reasoning on %zu of %zu "
              "seeds (need 3 of 5). ratios: standard [%s] plain [%s]",
              w, n, row_list(standard, ratio).c_str(), row_list(plain, ratio).c_str())};
}

Verdict orthogonality_in_training(const AblationSummary& s) {
  const auto standard = rows_for(s.rows, "standard");
  std::size_t below = 0;
  std::string detail;
  for (const AblationRow& r : standard) {
    below += r.ok() && r.best_orthogonality < r.initial_orthogonality;
    detail += fmt("%s%.3g->%.2e", detail.empty() ? "" : " ", r.initial_orthogonality, r.best_orthogonality);
  }
  return {standard.size() == 5 && below == standard.size(),
          fmt("penalty at the best-validation checkpoint below its initial value on %zu of %zu standard runs "
              "(lambda_orth 1e-3): %s",
              below, standard.size(), detail.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = LGR_ACCEPTANCE_DIR;
  std::vector<int> only;
  bool fresh = false;
  app.add_option("--work-dir", work_dir, "Directory for the ablation journal and scratch files")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (1-8)")->delimiter(',');
  app.add_flag("--fresh", fresh, "Ignore the ablation journal from earlier runs");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  fs::create_directories(work_dir);
  std::vector<std::pair<std::string, Verdict>> results;
  auto record = [&](int n, const char* name, const std::function<Verdict()>& fn) {
    if (!wanted(n)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const std::string line = fmt("criterion %d %-28s %s", n, name, v.pass ? "PASS" : "FAIL");
    std::printf("%s  %s\n", line.c_str(), v.detail.c_str());
    std::fflush(stdout);
    results.push_back({line, v});
  };

  record(1, "gradient fidelity", gradient_fidelity);
  record(2, "hand-trace equivalence", hand_trace);
  record(8, "quantization bound", quantization_bound);
  record(7, "determinism and formats", [&] { return determinism_and_formats(fs::path(work_dir) / "scratch"); });
  record(3, "overfit sanity", overfit);

  const bool need_ablation = wanted(4) || wanted(5) || wanted(6);
  AblationSummary ablation;
  if (need_ablation) {
    AblationOptions opts;
    opts.journal_path = (fs::path(work_dir) / "ablation_journal.csv").string();
    if (fresh) fs::remove(opts.journal_path);
    opts.on_row = [](const AblationRow& r) {
      std::printf("  ablation %-10s seed %llu: %s val NE %.4f clean %.4f distractor %.4f (%.0f s)\n",
                  r.config.c_str(), static_cast<unsigned long long>(r.seed), r.status.c_str(), r.avg_ne, r.clean_ne,
                  r.distractor_ne, r.wall_time_s);
      std::fflush(stdout);
    };
    const auto t0 = Clock::now();
    try {
      ablation.rows = run_ablation(parse_ablation_plan(kAblationPlan), opts);
    } catch (const std::exception& e) {
      std::printf("  ablation run failed: %s\n", e.what());
    }
    ablation.elapsed = seconds_since(t0);
    std::printf("  ablation journal: %s (%.0f s this run)\n", opts.journal_path.c_str(), ablation.elapsed);
  }
  record(4, "structure ablation trend", [&] { return structure_trend(ablation); });
  record(5, "orthogonality feasibility", [&] {
    const Verdict alone = orthogonality_alone();
    const Verdict trained = orthogonality_in_training(ablation);
    return Verdict{alone.pass && trained.pass, "alone: " + alone.detail + "; in training: " + trained.detail};
  });
  record(6, "structural-coherency probe", [&] { return coherency_probe(ablation); });

  std::printf("\nsummary\n");
  bool all = true;
  for (const auto& [line, v] : results) {
    std::printf("%s\n", line.c_str());
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
