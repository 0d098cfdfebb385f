#include "lgr/ablation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "lgr/errors.hpp"
#include "lgr/eval.hpp"

namespace lgr {

namespace {

constexpr std::size_t kColumns = 11;

std::string sanitize_status(std::string s) {
  for (char& c : s) {
    if (c == ',') c = ';';
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string format_optional(double v) { return std::isnan(v) ? "" : format_double(v); }

double parse_optional(const std::string& key, const std::string& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(key, v);
}

/// Runs `fn`, turning library exceptions into a "<category>: <message>" status.
template <typename Fn>
std::string run_guarded(Fn&& fn) {
  try {
    fn();
    return "ok";
  } catch (const ConfigError& e) {
    return sanitize_status(std::string("config: ") + e.what());
  } catch (const ValidationError& e) {
    return sanitize_status(std::string("data: ") + e.what());
  } catch (const IoError& e) {
    return sanitize_status(std::string("data: ") + e.what());
  } catch (const NumericError& e) {
    return sanitize_status(std::string("numeric: ") + e.what());
  } catch (const std::exception& e) {
    return sanitize_status(std::string("error: ") + e.what());
  }
}

Dataset subset(const Dataset& d, bool with_distractor) {
  Dataset out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.annotations[i].tags.distractor_present != with_distractor) continue;
    out.annotations.push_back(d.annotations[i]);
    out.images.push_back(d.images[i]);
  }
  return out;
}

std::map<std::pair<std::string, std::uint64_t>, AblationRow> read_journal(const std::string& path) {
  std::map<std::pair<std::string, std::uint64_t>, AblationRow> done;
  std::ifstream in(path);
  if (!in) return done;
  std::string line;
  if (!std::getline(in, line)) return done;
  if (line != ablation_csv_header()) throw IoError(path + ": not an ablation journal");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // A row cut short by an interrupted run is ignored and recomputed.
    try {
      AblationRow row = parse_ablation_csv_row(line);
      done[{row.config, row.seed}] = row;
    } catch (const ConfigError&) {
    }
  }
  return done;
}

bool ends_with_newline(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in || in.tellg() == 0) return true;
  in.seekg(-1, std::ios::end);
  return in.get() == '\n';
}

}  // namespace

AblationPlan parse_ablation_plan(const std::string& text) {
  AblationPlan plan;
  std::set<std::string> names;
  for (ConfigSection& section : parse_config_sections(text)) {
    if (section.name.empty()) {
      for (ConfigEntry& e : section.entries) {
        if (e.key == "seeds") {
          for (std::size_t s : parse_size_list(e.key, e.value)) plan.seeds.push_back(s);
        } else {
          plan.shared.push_back(std::move(e));
        }
      }
      continue;
    }
    if (section.name.find(',') != std::string::npos) {
      throw ConfigError("plan line " + std::to_string(section.line) + ": configuration names cannot contain ','");
    }
    if (!names.insert(section.name).second) {
      throw ConfigError("plan line " + std::to_string(section.line) + ": duplicate configuration '" + section.name +
                        "'");
    }
    plan.variants.push_back({section.name, section.line, std::move(section.entries)});
  }
  if (plan.variants.empty()) throw ConfigError("plan lists no configurations");
  if (plan.seeds.empty()) plan.seeds.push_back(1);
  return plan;
}

AblationPlan load_ablation_plan(const std::string& path) {
  try {
    return parse_ablation_plan(read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ExperimentConfig ablation_experiment(const AblationPlan& plan, const AblationVariant& variant, std::uint64_t seed) {
  ExperimentConfig cfg;
  apply_options(cfg, plan.shared);
  apply_options(cfg, variant.overrides);
  cfg.train.seed = seed;
  cfg.synth.seed = seed;
  validate(cfg);
  return cfg;
}

std::string ablation_csv_header() {
  return "config,seed,avg_ne,clean_ne,distractor_ne,best_epoch,initial_orthogonality,best_orthogonality,"
         "wall_time_s,fingerprint,status";
}

std::string ablation_csv_row(const AblationRow& r) {
  std::ostringstream os;
  os << r.config << "," << r.seed << ",";
  if (r.ok()) {
    os << format_double(r.avg_ne) << "," << format_optional(r.clean_ne) << "," << format_optional(r.distractor_ne)
       << "," << r.best_epoch << "," << format_double(r.initial_orthogonality) << ","
       << format_double(r.best_orthogonality) << ",";
  } else {
    os << ",,,,,,";
  }
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", r.wall_time_s);
  os << wall << "," << r.fingerprint << "," << sanitize_status(r.status);
  return os.str();
}

AblationRow parse_ablation_csv_row(const std::string& line) {
  std::vector<std::string> f;
  std::size_t start = 0;
  // The status column is last and may not be split further.
  while (f.size() + 1 < kColumns) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) throw ConfigError("ablation row has too few columns: '" + line + "'");
    f.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  f.push_back(line.substr(start));
  AblationRow r;
  r.config = f[0];
  r.seed = parse_u64("seed", f[1]);
  r.wall_time_s = parse_double("wall_time_s", f[8]);
  r.fingerprint = f[9];
  r.status = f[10];
  if (r.ok()) {
    r.avg_ne = parse_double("avg_ne", f[2]);
    r.clean_ne = parse_optional("clean_ne", f[3]);
    r.distractor_ne = parse_optional("distractor_ne", f[4]);
    r.best_epoch = parse_size("best_epoch", f[5]);
    r.initial_orthogonality = parse_double("initial_orthogonality", f[6]);
    r.best_orthogonality = parse_double("best_orthogonality", f[7]);
  }
  return r;
}

void write_ablation_table(const std::vector<AblationRow>& rows, std::ostream& os) {
  os << ablation_csv_header() << "\n";
  for (const AblationRow& r : rows) os << ablation_csv_row(r) << "\n";
}

std::string experiment_fingerprint(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : experiment_to_text(cfg)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<AblationRow> run_ablation(const AblationPlan& plan, const AblationOptions& options) {
  auto done = options.journal_path.empty() ? decltype(read_journal("")){} : read_journal(options.journal_path);
  std::unique_ptr<std::ofstream> journal;
  if (!options.journal_path.empty()) {
    const bool fresh = done.empty();
    journal = std::make_unique<std::ofstream>(options.journal_path, fresh ? std::ios::trunc : std::ios::app);
    if (!*journal) throw IoError("cannot write '" + options.journal_path + "'");
    if (fresh) *journal << ablation_csv_header() << "\n" << std::flush;
    // An interrupted run may have left a partial last line; start on a new one.
    if (!fresh && !ends_with_newline(options.journal_path)) *journal << "\n";
  }

  // Variants of one seed usually share their data options; keep the last split pair.
  std::string cached_synth;
  Dataset train_set, val_set;

  std::vector<AblationRow> rows;
  for (std::uint64_t seed : plan.seeds) {
    for (const AblationVariant& variant : plan.variants) {
      AblationRow row;
      row.config = variant.name;
      row.seed = seed;
      ExperimentConfig cfg;
      row.status = run_guarded([&] {
        cfg = ablation_experiment(plan, variant, seed);
        row.fingerprint = experiment_fingerprint(cfg);
      });
      const auto prior = done.find({variant.name, seed});
      if (row.ok() && prior != done.end() && prior->second.fingerprint == row.fingerprint) {
        rows.push_back(prior->second);
        if (options.on_row) options.on_row(rows.back());
        continue;
      }
      if (row.ok()) {
        const auto t0 = std::chrono::steady_clock::now();
        row.status = run_guarded([&] {
          std::ostringstream synth_text;
          write_synth_options(cfg.synth, synth_text);
          if (synth_text.str() != cached_synth) {
            cached_synth.clear();
            const LayoutGraph graph = build_hierarchy(hierarchy_by_name(cfg.synth.hierarchy));
            train_set = generate_split(cfg.synth, graph, "train");
            val_set = generate_split(cfg.synth, graph, "val");
            cached_synth = synth_text.str();
          }
          TrainOutputs outputs;
          if (options.on_epoch) {
            outputs.on_epoch = [&](const EpochMetrics& m) { options.on_epoch(variant.name, seed, m); };
          }
          const TrainResult result = train(train_set, val_set, cfg.model, cfg.train, outputs);
          const Model model(cfg.model, result.best_params);
          const Dataset& scored = val_set.size() ? val_set : train_set;
          row.avg_ne = evaluate(model, scored, cfg.train.decoder).average;
          const Dataset clean = subset(scored, false), distracted = subset(scored, true);
          const double nan = std::numeric_limits<double>::quiet_NaN();
          row.clean_ne = clean.size() ? evaluate(model, clean, cfg.train.decoder).average : nan;
          row.distractor_ne = distracted.size() ? evaluate(model, distracted, cfg.train.decoder).average : nan;
          row.best_epoch = result.best_epoch;
          row.initial_orthogonality = result.initial_orthogonality;
          row.best_orthogonality = result.best_orthogonality;
        });
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
      if (journal) *journal << ablation_csv_row(row) << "\n" << std::flush;
      rows.push_back(row);
      if (options.on_row) options.on_row(row);
    }
  }
  return rows;
}

std::vector<AblationRow> rows_for(const std::vector<AblationRow>& rows, const std::string& config) {
  std::vector<AblationRow> out;
  for (const AblationRow& r : rows)
    if (r.config == config) out.push_back(r);
  return out;
}

}  // namespace lgr
