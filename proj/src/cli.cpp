#include "ohz/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ohz/checkpoint.hpp"
#include "ohz/featstore.hpp"
#include "ohz/fscil.hpp"
#include "ohz/io.hpp"
#include "ohz/metrics.hpp"
#include "ohz/prep.hpp"
#include "ohz/probe.hpp"
#include "ohz/scores.hpp"

namespace ohz::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kSubcommands = {"split", "probe-train", "score",
                                               "eval",  "fscil",       "report"};

// JSON config files. Keys may be flat or grouped under a subcommand name;
// nested objects flatten to "outer-inner" and underscores become dashes, so
// {"orco": {"step_size": 0.1}} sets --orco-step-size.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string section) : section_(std::move(section)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json doc = json::object();
    for (const CLI::Option* op : app->get_options()) {
      if (!op->get_configurable() || op->get_lnames().empty()) continue;
      std::vector<std::string> values = op->results();
      if (values.empty() && default_also && !op->get_default_str().empty()) {
        values.push_back(op->get_default_str());
      }
      if (values.empty()) continue;
      doc[op->get_lnames().front()] = values.size() == 1 ? json(values.front()) : json(values);
    }
    return doc.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json doc;
    try {
      input >> doc;
    } catch (const json::exception& e) {
      throw CLI::ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object()) throw CLI::ConfigError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : doc.items()) {
      const bool is_section =
          std::find(kSubcommands.begin(), kSubcommands.end(), key) != kSubcommands.end();
      if (is_section) {
        if (key != section_ || !value.is_object()) continue;
        for (const auto& [inner, v] : value.items()) flatten(inner, v, items);
      } else {
        flatten(key, value, items);
      }
    }
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  void flatten(const std::string& key, const json& value,
               std::vector<CLI::ConfigItem>& items) const {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (value.is_null()) return;
    if (value.is_object()) {
      for (const auto& [inner, v] : value.items()) flatten(name + "-" + inner, v, items);
      return;
    }
    CLI::ConfigItem item;
    if (!section_.empty()) item.parents = {section_};
    item.name = name;
    if (value.is_array()) {
      const bool nested = std::any_of(value.begin(), value.end(),
                                      [](const json& e) { return e.is_array(); });
      if (nested) {
        // [[7], [8, 9]] -> "7;8,9"
        std::string joined;
        for (std::size_t i = 0; i < value.size(); ++i) {
          if (i > 0) joined += ';';
          const json& group = value[i];
          if (!group.is_array()) throw CLI::ConfigError(key + ": mixed nesting in array");
          for (std::size_t j = 0; j < group.size(); ++j) {
            if (j > 0) joined += ',';
            joined += scalar(group[j]);
          }
        }
        item.inputs = {joined};
      } else {
        for (const auto& e : value) item.inputs.push_back(scalar(e));
      }
    } else {
      item.inputs = {scalar(value)};
    }
    items.push_back(std::move(item));
  }

  std::string section_;
};

// ---- small helpers ----

FeatureSet load_features(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing --" + what);
  if (!fs::exists(path)) throw IoError(what + " file not found: " + path);
  return read_feature_file(path);
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing --" + what);
  if (!fs::exists(path)) throw IoError(what + " file not found: " + path);
}

fs::path prepare_out_dir(const std::string& out) {
  const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory: " + dir.string());
  return dir;
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

std::string safe_name(const std::string& s) {
  std::string out = s.empty() ? "unknown" : s;
  for (char& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::int64_t parse_int(const std::string& field, const std::string& what) {
  std::size_t used = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(field, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != field.size()) throw IoError(what + ": not an integer: '" + field + "'");
  return v;
}

double parse_double(const std::string& field, const std::string& what) {
  if (field == "inf") return std::numeric_limits<double>::infinity();
  if (field == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size()) {
    throw IoError(what + ": not a number: '" + field + "'");
  }
  return v;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path,
                                               const std::vector<std::string>& header) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || io::split_csv_line(line) != header) {
    throw IoError("malformed CSV header in " + path.string());
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = io::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IoError("malformed CSV row in " + path.string() + ": " + line);
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

// Parses "7;8;9" or "7,8;9" into session groups.
std::vector<std::vector<std::int64_t>> parse_sessions(const std::string& text) {
  std::vector<std::vector<std::int64_t>> sessions;
  for (const std::string& group : split_on(text, ';')) {
    std::vector<std::int64_t> ids;
    for (const std::string& id : split_on(group, ',')) {
      try {
        ids.push_back(parse_int(id, "--sessions"));
      } catch (const IoError& e) {
        throw UsageError(e.what());
      }
    }
    sessions.push_back(std::move(ids));
  }
  return sessions;
}

// ---- split ----

struct SplitArgs {
  std::string train;
  std::string test;
  std::optional<std::size_t> known_count;
  std::vector<std::int64_t> known_ids;
  std::string out;
};

void cmd_split(const SplitArgs& a, const fs::path& out_hint) {
  const FeatureSet train = load_features(a.train, "train");
  const FeatureSet test = load_features(a.test, "test");
  if (train.dim() != test.dim()) throw UsageError("train and test feature widths differ");

  std::set<std::int64_t> all = class_ids(train);
  const std::set<std::int64_t> test_ids = class_ids(test);
  all.insert(test_ids.begin(), test_ids.end());

  const SplitSpec spec =
      a.known_ids.empty()
          ? build_first_k_split(all, a.known_count.value_or(6))
          : build_open_split(all, std::set<std::int64_t>(a.known_ids.begin(), a.known_ids.end()));

  std::vector<std::string> warnings;
  const FeatureSet id_train = select(train, spec, SplitRole::id_train, &warnings);
  const FeatureSet id_test = select(test, spec, SplitRole::id_test, &warnings);
  const FeatureSet ood_test = select(test, spec, SplitRole::ood_test, &warnings);
  warn(warnings);

  json remap = json::array();
  for (const auto& [orig, idx] : spec.remap) remap.push_back({orig, idx});
  json doc = {{"known_count", spec.known_count()},
              {"known_original_ids", spec.known_original_ids},
              {"unknown_original_ids", spec.unknown_original_ids},
              {"remap", remap},
              {"rows", {{"id_train", id_train.rows()},
                        {"id_test", id_test.rows()},
                        {"ood_test", ood_test.rows()}}},
              {"warnings", warnings}};

  const fs::path dir = prepare_out_dir(out_hint.string());
  io::StagedOutputs out;
  const std::pair<const char*, const FeatureSet*> files[] = {
      {"id_train.ohfs", &id_train}, {"id_test.ohfs", &id_test}, {"ood_test.ohfs", &ood_test}};
  for (const auto& [name, set] : files) {
    out.stage(dir / name, encode_feature_file(*set));
    out.stage(manifest_path(dir / name), encode_manifest(set->manifest));
  }
  out.stage(dir / "split.json", doc.dump(2) + "\n");
  out.commit();
}

// ---- probe-train ----

struct ProbeArgs {
  std::string train;
  TrainConfig config;
  std::size_t classes = 0;
  double precision_floor = 1e-6;
};

void cmd_probe_train(ProbeArgs a, const fs::path& out_dir) {
  const FeatureSet train = load_features(a.train, "train");
  const std::uint64_t global_seed = a.config.seed;
  a.config.seed = derive_seed(global_seed, "probe.shuffle");
  a.config.validate();

  const TrainResult result = train_probe(train, a.config, a.classes);
  warn(result.warnings);
  const std::size_t k = result.model.classes();

  const Matrix raw = train.features_f64();
  const Preprocessor prep = fit_center(raw);
  const ClassStats stats =
      fit_class_stats(center_normalize(raw, prep), train.labels, k, a.precision_floor);

  std::string history = "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
    history += std::to_string(e + 1) + "," + io::fixed6(result.loss_history[e]) + "\n";
  }
  json doc = {{"backbone", train.manifest.backbone_id},
              {"K", k},
              {"d", train.dim()},
              {"rows", train.rows()},
              {"seed", global_seed},
              {"shuffle_seed", a.config.seed},
              {"config", {{"epochs", a.config.epochs},
                          {"batch_size", a.config.batch_size},
                          {"learning_rate", a.config.learning_rate},
                          {"momentum", a.config.momentum},
                          {"shuffle", a.config.shuffle}}},
              {"loss_history", result.loss_history},
              {"shrinkage_lambda", stats.shrinkage_lambda},
              {"warnings", result.warnings}};

  const fs::path dir = prepare_out_dir(out_dir.string());
  io::StagedOutputs out;
  out.stage(dir / "probe.ckpt", encode_checkpoint(probe_checkpoint(result.model, a.config)));
  out.stage(dir / "stats.ckpt", encode_checkpoint(stats_checkpoint(prep, stats)));
  out.stage(dir / "loss_history.csv", history);
  out.stage(dir / "probe_train.json", doc.dump(2) + "\n");
  out.commit();
}

// ---- score ----

struct ScoreArgs {
  std::string checkpoint;
  std::string stats;
  std::string train;
  std::string id;
  std::string ood;
  std::vector<std::string> kinds = {"msp", "energy", "mahalanobis", "knn"};
  ScoreParams params;
};

std::string score_csv(const std::vector<double>& scores, const char* split, ScoreKind kind) {
  std::string csv = "row_index,split,kind,score\n";
  const std::string k = to_string(kind);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    csv += std::to_string(i) + "," + split + "," + k + "," + io::fixed6(scores[i]) + "\n";
  }
  return csv;
}

void cmd_score(const ScoreArgs& a, const fs::path& out_dir) {
  std::vector<ScoreKind> kinds;
  for (const std::string& name : a.kinds) {
    const ScoreKind kind = score_kind_from_string(name);
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) kinds.push_back(kind);
  }
  if (kinds.empty()) throw UsageError("no score kinds requested");
  bool need_probe = !a.checkpoint.empty();
  bool need_stats = false;
  bool need_train = false;
  for (ScoreKind kind : kinds) {
    const std::string name = to_string(kind);
    if (kind == ScoreKind::msp || kind == ScoreKind::energy) {
      if (a.checkpoint.empty()) throw UsageError("score kind " + name + " needs --checkpoint");
      need_probe = true;
    } else {
      if (a.stats.empty()) throw UsageError("score kind " + name + " needs --stats");
      need_stats = true;
      if (kind == ScoreKind::knn) {
        if (a.train.empty()) throw UsageError("score kind knn needs --train");
        need_train = true;
      }
    }
  }

  const FeatureSet id = load_features(a.id, "id");
  const FeatureSet ood = load_features(a.ood, "ood");
  if (id.dim() != ood.dim()) throw UsageError("id and ood feature widths differ");

  ScoringArtifacts artifacts;
  ProbeModel probe;
  LoadedStats stats;
  Matrix train_norm;
  if (need_probe) {
    require_file(a.checkpoint, "checkpoint");
    probe = load_probe(a.checkpoint);
    artifacts.probe = &probe;
  }
  if (need_stats) {
    require_file(a.stats, "stats");
    stats = load_stats(a.stats);
    artifacts.prep = &stats.prep;
    artifacts.stats = &stats.stats;
  }
  if (need_train) {
    const FeatureSet train = load_features(a.train, "train");
    train_norm = center_normalize(train.features_f64(), stats.prep);
    artifacts.train_normalized = &train_norm;
  }

  const Matrix id_raw = id.features_f64();
  const Matrix ood_raw = ood.features_f64();
  const std::string backbone = id.manifest.backbone_id;

  const fs::path dir = prepare_out_dir(out_dir.string());
  io::StagedOutputs out;
  for (ScoreKind kind : kinds) {
    const auto [id_scores, ood_scores] = score_pipeline(kind, artifacts, id_raw, ood_raw, a.params);
    const std::string name = to_string(kind);
    json params = json::object();
    if (kind == ScoreKind::energy) params["temperature"] = a.params.temperature;
    if (kind == ScoreKind::knn) params["k"] = a.params.k;
    json doc = {{"kind", name},
                {"backbone", backbone},
                {"params", params},
                {"id_count", id_scores.size()},
                {"ood_count", ood_scores.size()},
                {"id_scores", id_scores.scores},
                {"ood_scores", ood_scores.scores}};
    out.stage(dir / ("scores_" + name + "_id.csv"), score_csv(id_scores.scores, "id", kind));
    out.stage(dir / ("scores_" + name + "_ood.csv"), score_csv(ood_scores.scores, "ood", kind));
    out.stage(dir / ("scores_" + name + ".json"), doc.dump(2) + "\n");
  }
  if (need_probe) {
    if (probe.dim() != id.dim()) throw UsageError("probe width differs from id features");
    const std::vector<std::int64_t> pred = predict(probe, id_raw);
    std::string csv = "row_index,label,prediction\n";
    for (std::size_t i = 0; i < pred.size(); ++i) {
      csv += std::to_string(i) + "," + std::to_string(id.labels[i]) + "," +
             std::to_string(pred[i]) + "\n";
    }
    out.stage(dir / "id_predictions.csv", csv);
  }
  out.commit();
}

// ---- eval ----

struct EvalArgs {
  std::vector<std::string> scores;
  double target_rejection = 0.95;
  double target_tpr = 0.95;
};

struct Cell {
  std::string backbone;
  ScoreKind kind;
  std::vector<double> id;
  std::vector<double> ood;
  std::optional<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> predictions;
};

std::vector<double> read_score_csv(const fs::path& path, const char* split, ScoreKind kind) {
  const auto rows = read_csv(path, {"row_index", "split", "kind", "score"});
  std::vector<double> scores;
  scores.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string what = path.string() + " row " + std::to_string(i);
    if (parse_int(rows[i][0], what) != static_cast<std::int64_t>(i) || rows[i][1] != split ||
        rows[i][2] != to_string(kind)) {
      throw IoError("malformed score CSV " + path.string() + " at row " + std::to_string(i));
    }
    scores.push_back(parse_double(rows[i][3], what));
  }
  return scores;
}

// Full-precision values from the sidecar, checked against the CSV.
void refine_from_sidecar(const json& doc, const char* field, std::vector<double>& scores,
                         const fs::path& path) {
  const auto& arr = doc.at(field);
  if (arr.size() != scores.size()) {
    throw IoError("score sidecar " + path.string() + " disagrees with CSV row count");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double v = arr[i].get<double>();
    if (io::fixed6(v) != io::fixed6(scores[i])) {
      throw IoError("score sidecar " + path.string() + " disagrees with CSV at row " +
                    std::to_string(i));
    }
    scores[i] = v;
  }
}

std::vector<Cell> load_cells(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("score directory not found: " + dir.string());
  std::optional<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> predictions;
  const fs::path pred_path = dir / "id_predictions.csv";
  if (fs::exists(pred_path)) {
    const auto rows = read_csv(pred_path, {"row_index", "label", "prediction"});
    std::vector<std::int64_t> labels;
    std::vector<std::int64_t> pred;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::string what = pred_path.string() + " row " + std::to_string(i);
      if (parse_int(rows[i][0], what) != static_cast<std::int64_t>(i)) {
        throw IoError("malformed predictions CSV " + pred_path.string());
      }
      labels.push_back(parse_int(rows[i][1], what));
      pred.push_back(parse_int(rows[i][2], what));
    }
    predictions.emplace(std::move(labels), std::move(pred));
  }

  std::vector<Cell> cells;
  for (ScoreKind kind : kAllScoreKinds) {
    const std::string name = to_string(kind);
    const fs::path id_path = dir / ("scores_" + name + "_id.csv");
    const fs::path ood_path = dir / ("scores_" + name + "_ood.csv");
    if (!fs::exists(id_path) && !fs::exists(ood_path)) continue;
    if (!fs::exists(id_path) || !fs::exists(ood_path)) {
      throw IoError("score CSVs for " + name + " in " + dir.string() + " are incomplete");
    }
    Cell cell{dir.filename().string(), kind, read_score_csv(id_path, "id", kind),
              read_score_csv(ood_path, "ood", kind), std::nullopt};
    const fs::path side = dir / ("scores_" + name + ".json");
    if (fs::exists(side)) {
      try {
        const json doc = json::parse(io::read_file(side));
        if (doc.at("kind").get<std::string>() != name) {
          throw IoError("score sidecar " + side.string() + " names another kind");
        }
        const std::string backbone = doc.value("backbone", std::string());
        if (!backbone.empty()) cell.backbone = backbone;
        refine_from_sidecar(doc, "id_scores", cell.id, side);
        refine_from_sidecar(doc, "ood_scores", cell.ood, side);
      } catch (const json::exception& e) {
        throw IoError("malformed score sidecar " + side.string() + ": " + e.what());
      }
    }
    if (predictions) {
      if (predictions->first.size() != cell.id.size()) {
        throw IoError("id_predictions.csv row count differs from " + id_path.string());
      }
      cell.predictions = predictions;
    }
    cells.push_back(std::move(cell));
  }
  if (cells.empty()) throw UsageError("no score CSVs in " + dir.string());
  return cells;
}

void cmd_eval(const EvalArgs& a, const fs::path& out_dir) {
  if (a.scores.empty()) throw UsageError("missing --scores");
  if (!(a.target_rejection > 0.0 && a.target_rejection <= 1.0) ||
      !(a.target_tpr > 0.0 && a.target_tpr <= 1.0)) {
    throw UsageError("targets must lie in (0, 1]");
  }
  std::vector<Cell> cells;
  for (const std::string& dir : a.scores) {
    auto more = load_cells(dir);
    for (auto& c : more) cells.push_back(std::move(c));
  }
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& x, const Cell& y) {
    if (x.backbone != y.backbone) return x.backbone < y.backbone;
    return static_cast<int>(x.kind) < static_cast<int>(y.kind);
  });
  for (std::size_t i = 1; i < cells.size(); ++i) {
    if (cells[i].backbone == cells[i - 1].backbone && cells[i].kind == cells[i - 1].kind) {
      throw UsageError("duplicate scores for " + cells[i].backbone + "/" + to_string(cells[i].kind));
    }
  }

  const int tpr_label = static_cast<int>(std::lround(a.target_tpr * 100.0));
  std::string report = "backbone,method,auroc,aupr,fpr_at_" + std::to_string(tpr_label) +
                       ",oscr_area\n";
  std::string decisions =
      "backbone,method,target_rejection,threshold,fpr_id,id_kept,id_total,retention_rate,"
      "ood_rejection_rate\n";
  json doc = {{"target_tpr", a.target_tpr},
              {"target_rejection", a.target_rejection},
              {"cells", json::array()}};

  const fs::path dir = prepare_out_dir(out_dir.string());
  io::StagedOutputs out;
  for (const Cell& c : cells) {
    const std::string kind = to_string(c.kind);
    const double au = auroc(c.id, c.ood);
    const double ap = aupr(c.id, c.ood);
    const OperatingPoint op = fpr_at_tpr(c.id, c.ood, a.target_tpr);
    const DecisionStats ds = decision_stats(c.id, c.ood, a.target_rejection);
    const RocCurve curve = roc(c.id, c.ood);
    std::optional<OscrCurve> oc;
    if (c.predictions) oc = oscr(c.id, c.predictions->second, c.predictions->first, c.ood);

    report += c.backbone + "," + kind + "," + io::fixed6(au) + "," + io::fixed6(ap) + "," +
              io::fixed6(op.fpr_percent) + "," + (oc ? io::fixed6(oc->area) : std::string()) +
              "\n";
    decisions += c.backbone + "," + kind + "," + io::fixed6(a.target_rejection) + "," +
                 io::fixed6(ds.threshold) + "," + io::fixed6(ds.fpr_id) + "," +
                 std::to_string(ds.id_kept) + "," + std::to_string(ds.id_total) + "," +
                 io::fixed6(ds.retention_rate) + "," + io::fixed6(ds.ood_rejection_rate) + "\n";

    const std::string stem = safe_name(c.backbone) + "_" + kind;
    std::string roc_csv = "threshold,fpr,tpr\n";
    for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
      roc_csv += io::fixed6(curve.thresholds[i]) + "," + io::fixed6(curve.fpr[i]) + "," +
                 io::fixed6(curve.tpr[i]) + "\n";
    }
    out.stage(dir / ("roc_" + stem + ".csv"), roc_csv);
    if (oc) {
      std::string oscr_csv = "threshold,fpr_ood,ccr\n";
      for (const OscrPoint& p : oc->points) {
        oscr_csv += io::fixed6(p.threshold) + "," + io::fixed6(p.fpr_ood) + "," +
                    io::fixed6(p.ccr) + "\n";
      }
      out.stage(dir / ("oscr_" + stem + ".csv"), oscr_csv);
    } else {
      std::cerr << "warning: no id_predictions.csv for " << c.backbone
                << "; OSCR left empty\n";
    }

    // Infinite thresholds are not representable in JSON; they appear as null.
    auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    doc["cells"].push_back({{"backbone", c.backbone},
                            {"method", kind},
                            {"auroc", au},
                            {"aupr", ap},
                            {"fpr_at_tpr", op.fpr_percent},
                            {"fpr_threshold", finite_or_null(op.threshold)},
                            {"oscr_area", oc ? json(oc->area) : json(nullptr)},
                            {"decision",
                             {{"threshold", finite_or_null(ds.threshold)},
                              {"fpr_id", ds.fpr_id},
                              {"id_kept", ds.id_kept},
                              {"id_total", ds.id_total},
                              {"retention_rate", ds.retention_rate},
                              {"ood_rejection_rate", ds.ood_rejection_rate}}}});
  }
  out.stage(dir / "eval_report.csv", report);
  out.stage(dir / "decision_stats.csv", decisions);
  out.stage(dir / "eval_report.json", doc.dump(2) + "\n");
  out.commit();
}

// ---- fscil ----

struct FscilArgs {
  std::string train;
  std::string test;
  std::vector<std::string> methods = {"baseline", "sppr", "orco", "concm"};
  std::vector<std::size_t> shots = {1, 5, 10};
  std::string sessions = "7;8;9";
  fscil::SessionConfig config;
};

void cmd_fscil(const FscilArgs& a, const fs::path& out_dir) {
  fscil::ProtocolData data{load_features(a.train, "train"), load_features(a.test, "test")};

  std::vector<fscil::Method> methods;
  for (const std::string& name : a.methods) {
    const fscil::Method m = fscil::method_from_string(name);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }
  const std::set<std::size_t> shot_set(a.shots.begin(), a.shots.end());
  if (methods.empty() || shot_set.empty()) throw UsageError("no methods or shot counts requested");

  fscil::SessionConfig base = a.config;
  base.sessions = parse_sessions(a.sessions);

  std::set<std::size_t> columns = {1, 5, 10};
  columns.insert(shot_set.begin(), shot_set.end());
  std::string summary = "method,base_acc";
  for (std::size_t s : columns) summary += ",overall_" + std::to_string(s) + "shot";
  summary += "\n";
  std::string sessions_csv = "method,shots,session,classes_seen,overall_accuracy\n";
  std::string recall_csv = "method,shots,session,class_id,recall\n";
  json doc = {{"seed", base.seed},
              {"base_class_count", base.base_class_count},
              {"sessions", base.sessions},
              {"test_sample_count", base.test_sample_count},
              {"runs", json::array()}};

  const fs::path dir = prepare_out_dir(out_dir.string());
  io::StagedOutputs out;
  std::vector<std::size_t> test_indices;
  for (fscil::Method m : methods) {
    const std::string mname = fscil::to_string(m);
    std::map<std::size_t, double> overall;
    double base_acc = 0.0;
    for (std::size_t s : shot_set) {
      fscil::SessionConfig cfg = base;
      cfg.method = m;
      cfg.shots = s;
      const fscil::ProtocolResult r = fscil::run_protocol(cfg, data);
      test_indices = r.test_indices;
      base_acc = r.summary.base_accuracy;
      overall[s] = r.summary.overall_accuracy;
      json run = {{"method", mname},
                  {"shots", s},
                  {"base_accuracy", r.summary.base_accuracy},
                  {"overall_accuracy", r.summary.overall_accuracy},
                  {"base_class_ids", r.base_class_ids},
                  {"sessions", json::array()}};
      for (const fscil::SessionResult& sr : r.sessions) {
        const std::string idx = std::to_string(sr.session_index);
        sessions_csv += mname + "," + std::to_string(s) + "," + idx + "," +
                        std::to_string(sr.class_ids.size()) + "," +
                        io::fixed6(sr.overall_accuracy) + "\n";
        std::string confusion = "true_class";
        for (std::int64_t id : sr.class_ids) confusion += "," + std::to_string(id);
        confusion += "\n";
        for (std::size_t i = 0; i < sr.class_ids.size(); ++i) {
          confusion += std::to_string(sr.class_ids[i]);
          for (std::size_t count : sr.confusion[i]) confusion += "," + std::to_string(count);
          confusion += "\n";
          recall_csv += mname + "," + std::to_string(s) + "," + idx + "," +
                        std::to_string(sr.class_ids[i]) + "," +
                        io::fixed6(sr.per_class_recall[i]) + "\n";
        }
        out.stage(dir / ("confusion_" + mname + "_" + std::to_string(s) + "shot_session" + idx +
                         ".csv"),
                  confusion);
        run["sessions"].push_back({{"session", sr.session_index},
                                   {"class_ids", sr.class_ids},
                                   {"overall_accuracy", sr.overall_accuracy},
                                   {"per_class_recall", sr.per_class_recall},
                                   {"confusion", sr.confusion}});
      }
      doc["runs"].push_back(run);
    }
    summary += mname + "," + io::fixed6(base_acc);
    for (std::size_t s : columns) {
      summary += ",";
      if (overall.contains(s)) summary += io::fixed6(overall[s]);
    }
    summary += "\n";
  }
  std::string indices = "row_index\n";
  for (std::size_t i : test_indices) indices += std::to_string(i) + "\n";
  doc["test_indices"] = test_indices;

  out.stage(dir / "fscil_summary.csv", summary);
  out.stage(dir / "sessions.csv", sessions_csv);
  out.stage(dir / "recall.csv", recall_csv);
  out.stage(dir / "test_indices.csv", indices);
  out.stage(dir / "fscil_summary.json", doc.dump(2) + "\n");
  out.commit();
}

// ---- report ----

struct ReportArgs {
  std::string eval;
  std::string fscil;
};

std::string markdown_table(const fs::path& csv) {
  std::istringstream in(io::read_file(csv));
  std::string line;
  std::string md;
  bool header = true;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = io::split_csv_line(line);
    if (header) width = fields.size();
    if (fields.size() != width) throw IoError("malformed CSV row in " + csv.string());
    md += "|";
    for (const auto& f : fields) md += " " + f + " |";
    md += "\n";
    if (header) {
      md += "|";
      for (std::size_t i = 0; i < width; ++i) md += "---|";
      md += "\n";
      header = false;
    }
  }
  return md;
}

void cmd_report(const ReportArgs& a, const fs::path& out_dir) {
  if (a.eval.empty() && a.fscil.empty()) throw UsageError("report needs --eval and/or --fscil");
  struct Section {
    std::string title;
    fs::path csv;
  };
  std::vector<Section> sections;
  if (!a.eval.empty()) {
    sections.push_back({"Open-set recognition", fs::path(a.eval) / "eval_report.csv"});
    sections.push_back({"Decision statistics", fs::path(a.eval) / "decision_stats.csv"});
  }
  if (!a.fscil.empty()) {
    sections.push_back({"Few-shot class-incremental learning",
                        fs::path(a.fscil) / "fscil_summary.csv"});
  }
  std::string md = "# Evaluation report\n";
  for (const Section& s : sections) {
    if (!fs::exists(s.csv)) throw IoError("report input not found: " + s.csv.string());
    md += "\n## " + s.title + "\n\n" + markdown_table(s.csv);
  }
  const fs::path dir = prepare_out_dir(out_dir.string());
  io::write_file_atomic(dir / "report.md", md);
}

int exit_code_for(const Error& e) {
  return e.category() == Error::Category::compute ? kExitCompute : kExitUsage;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::string section;
  for (const std::string& arg : args) {
    if (std::find(kSubcommands.begin(), kSubcommands.end(), arg) != kSubcommands.end()) {
      section = arg;
      break;
    }
  }

  CLI::App app{"Open-world evaluation on frozen feature files"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>(section));
  app.set_config("--config", "", "JSON file supplying any flag; flags on the command line win");
  std::string out = ".";
  app.add_option("--out", out, "Output directory (OHZ_OUT overrides all but this flag)");

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "Write id_train/id_test/ood_test files");
  split->add_option("--train", split_args.train, "Training OHFS file");
  split->add_option("--test", split_args.test, "Test OHFS file");
  auto* kc = split->add_option("--known-count", split_args.known_count,
                               "Known classes: the K smallest ids (default 6)");
  auto* ki = split->add_option("--known-ids", split_args.known_ids, "Explicit known class ids")
                 ->delimiter(',');
  kc->excludes(ki);

  ProbeArgs probe_args;
  auto* probe = app.add_subcommand("probe-train", "Train the linear probe and class statistics");
  probe->add_option("--train", probe_args.train, "id_train OHFS file");
  probe->add_option("--epochs", probe_args.config.epochs)->capture_default_str();
  probe->add_option("--batch-size", probe_args.config.batch_size)->capture_default_str();
  probe->add_option("--lr,--learning-rate", probe_args.config.learning_rate)->capture_default_str();
  probe->add_option("--momentum", probe_args.config.momentum)->capture_default_str();
  probe->add_option("--seed", probe_args.config.seed, "Global seed")->capture_default_str();
  probe->add_flag("--shuffle,!--no-shuffle", probe_args.config.shuffle, "Shuffle each epoch");
  probe->add_option("--classes", probe_args.classes, "Class count (0: max label + 1)");
  probe->add_option("--precision-floor", probe_args.precision_floor)->capture_default_str();

  ScoreArgs score_args;
  auto* score = app.add_subcommand("score", "Write OOD scores for the id and ood test files");
  score->add_option("--checkpoint", score_args.checkpoint, "probe.ckpt (msp, energy)");
  score->add_option("--stats", score_args.stats, "stats.ckpt (mahalanobis, knn)");
  score->add_option("--train", score_args.train, "id_train OHFS file (knn)");
  score->add_option("--id", score_args.id, "id_test OHFS file");
  score->add_option("--ood", score_args.ood, "ood_test OHFS file");
  score->add_option("--kinds", score_args.kinds)->delimiter(',')->capture_default_str();
  score->add_option("--temperature", score_args.params.temperature)->capture_default_str();
  score->add_option("--k", score_args.params.k)->capture_default_str();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Metrics, curves and decision statistics");
  eval->add_option("--scores", eval_args.scores, "Score directories")->delimiter(',');
  eval->add_option("--target-rejection", eval_args.target_rejection)->capture_default_str();
  eval->add_option("--target-tpr", eval_args.target_tpr)->capture_default_str();

  FscilArgs fscil_args;
  auto* fs_cmd = app.add_subcommand("fscil", "Few-shot class-incremental protocol");
  fs_cmd->add_option("--train", fscil_args.train, "Training OHFS file, original labels");
  fs_cmd->add_option("--test", fscil_args.test, "Test OHFS file, original labels");
  fs_cmd->add_option("--methods,--method", fscil_args.methods)->delimiter(',')
      ->capture_default_str();
  fs_cmd->add_option("--shots", fscil_args.shots)->delimiter(',')->capture_default_str();
  fs_cmd->add_option("--sessions", fscil_args.sessions, "Novel ids per session, e.g. 7;8;9")
      ->capture_default_str();
  fscil::SessionConfig& sc = fscil_args.config;
  fs_cmd->add_option("--base-class-count,--base-classes", sc.base_class_count)
      ->capture_default_str();
  fs_cmd->add_option("--seed", sc.seed)->capture_default_str();
  fs_cmd->add_option("--test-sample-count,--test-samples", sc.test_sample_count)
      ->capture_default_str();
  fs_cmd->add_option("--sppr-gamma", sc.sppr.gamma)->capture_default_str();
  fs_cmd->add_option("--sppr-temperature", sc.sppr.temperature)->capture_default_str();
  fs_cmd->add_option("--orco-steps", sc.orco.steps)->capture_default_str();
  fs_cmd->add_option("--orco-step-size", sc.orco.step_size)->capture_default_str();
  fs_cmd->add_option("--orco-lambda-orth", sc.orco.lambda_orth)->capture_default_str();
  fs_cmd->add_option("--orco-perturb-sigma", sc.orco.perturb_sigma)->capture_default_str();
  fs_cmd->add_option("--concm-alpha", sc.concm.alpha)->capture_default_str();
  fs_cmd->add_option("--concm-aug-count", sc.concm.aug_count)->capture_default_str();
  fs_cmd->add_option("--concm-aug-sigma", sc.concm.aug_sigma)->capture_default_str();

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Collect CSV results into report.md");
  report->add_option("--eval", report_args.eval, "eval output directory");
  report->add_option("--fscil", report_args.fscil, "fscil output directory");

  // Every subcommand also accepts --out after its name.
  for (CLI::App* sub : {split, probe, score, eval, fs_cmd, report}) {
    sub->add_option("--out", out, "Output directory");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  // Output directory: command-line flag, then OHZ_OUT, then config/default.
  const bool out_on_command_line = std::any_of(args.begin(), args.end(), [](const std::string& s) {
    return s == "--out" || s.rfind("--out=", 0) == 0;
  });
  if (!out_on_command_line) {
    if (const char* env = std::getenv("OHZ_OUT"); env != nullptr && *env != '\0') out = env;
  }

  try {
    if (*split) cmd_split(split_args, out);
    else if (*probe) cmd_probe_train(probe_args, out);
    else if (*score) cmd_score(score_args, out);
    else if (*eval) cmd_eval(eval_args, out);
    else if (*fs_cmd) cmd_fscil(fscil_args, out);
    else if (*report) cmd_report(report_args, out);
  } catch (const Error& e) {
    std::cerr << "ohz: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "ohz: " << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    std::cerr << "ohz: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "ohz: " << e.what() << "\n";
    return kExitCompute;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace ohz::cli
