#include "bcfnet/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "bcfnet/evaluator.hpp"

namespace fs = std::filesystem;

namespace bcfnet {

std::string resolve_data_path(const std::string& path) {
  if (path.empty()) throw ConfigError("no dataset path given (--data)");
  if (fs::exists(path)) return path;
  if (const char* root = std::getenv("BCFNET_DATA_DIR")) {
    fs::path candidate = fs::path(root) / path;
    if (fs::exists(candidate)) return candidate.string();
  }
  throw ConfigError("dataset not found: " + path +
                    " (also tried under BCFNET_DATA_DIR)");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  if (out.empty()) throw ConfigError("empty integer list: '" + s + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

void apply_key(ExperimentConfig& cfg, const std::string& key,
               const std::string& value) {
  if (key == "kind") cfg.kind = value;
  else if (key == "data") cfg.data_path = value;
  else if (key == "format") cfg.format = value;
  else if (key == "out") cfg.out_dir = value;
  else if (key == "checkpoint") cfg.checkpoint = value;
  else if (key == "rho") cfg.rho = std::stoi(value);
  else if (key == "factors") cfg.factors = std::stoi(value);
  else if (key == "rl-encoding") cfg.rl_encoding = std::stoi(value);
  else if (key == "ml-embedding") cfg.ml_embedding = std::stoi(value);
  else if (key == "bm-embedding") cfg.bm_embedding = std::stoi(value);
  else if (key == "attention") cfg.attention = parse_bool(value);
  else if (key == "balance") cfg.balance = parse_bool(value);
  else if (key == "pretrain") cfg.pretrain = parse_bool(value);
  else if (key == "epochs") cfg.epochs = std::stoi(value);
  else if (key == "pretrain-epochs") cfg.pretrain_epochs = std::stoi(value);
  else if (key == "pretrain-epochs-bm") cfg.pretrain_epochs_bm = std::stoi(value);
  else if (key == "lr") cfg.lr = std::stod(value);
  else if (key == "finetune-lr") cfg.finetune_lr = std::stod(value);
  else if (key == "batch-size") cfg.batch_size = std::stoi(value);
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "eval-every") cfg.eval_every = std::stoi(value);
  else if (key == "eval-k") cfg.eval_k = std::stoi(value);
  else if (key == "negatives") cfg.num_test_negatives = std::stoi(value);
  else if (key == "min-user-ratings") cfg.min_user_ratings = std::stoi(value);
  else if (key == "min-item-raters") cfg.min_item_raters = std::stoi(value);
  else if (key == "levels") cfg.popularity_levels = std::stoi(value);
  else if (key == "rho-grid") cfg.rho_grid = parse_int_list(value);
  else if (key == "factor-grid") cfg.factor_grid = parse_int_list(value);
  else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig to_train_config(const ExperimentConfig& cfg, std::ostream& log) {
  TrainConfig t;
  t.rho = cfg.rho;
  t.batch_size = cfg.batch_size;
  t.lr = cfg.lr;
  t.finetune_lr = cfg.finetune_lr;
  t.epochs = cfg.epochs;
  t.pretrain_epochs = cfg.pretrain_epochs;
  t.pretrain_epochs_bm = cfg.pretrain_epochs_bm;
  t.seed = cfg.seed;
  t.eval_every = cfg.eval_every;
  t.eval_k = cfg.eval_k;
  t.out_dir = cfg.out_dir;
  t.log = &log;
  return t;
}

ModelConfig to_model_config(const ExperimentConfig& cfg,
                            const SplitDataset& split) {
  ModelConfig m;
  m.num_users = split.train.num_users;
  m.num_items = split.train.num_items;
  m.factors = cfg.factors;
  m.rl_encoding = cfg.rl_encoding;
  m.ml_embedding = cfg.ml_embedding;
  m.bm_embedding = cfg.bm_embedding;
  m.attention = cfg.attention;
  m.balance = cfg.balance;
  return m;
}

struct Prepared {
  RawRatings raw;
  InteractionMatrix matrix;
  SplitDataset split;
};

Prepared prepare_split(const ExperimentConfig& cfg, std::ostream& log) {
  Prepared p;
  const std::string path = resolve_data_path(cfg.data_path);
  p.raw = load_ratings(path, ratings_format_from_string(cfg.format));
  log << "loaded " << p.raw.size() << " ratings from " << path << "\n";
  p.raw = k_core_filter(p.raw, cfg.min_user_ratings, cfg.min_item_raters);
  if (p.raw.empty())
    throw DataError("k-core filter removed every record (thresholds " +
                    std::to_string(cfg.min_user_ratings) + "/" +
                    std::to_string(cfg.min_item_raters) + ")");
  p.matrix = binarize(p.raw);
  log << "matrix: " << p.matrix.num_users << " users x " << p.matrix.num_items
      << " items, " << p.matrix.interaction_count() << " interactions, sparsity "
      << std::setprecision(6) << p.matrix.sparsity() << "\n";
  p.split = leave_one_out_split(p.matrix, p.raw, cfg.num_test_negatives, cfg.seed);
  return p;
}

void write_dataset_stats(const Prepared& p, const std::string& path) {
  std::ofstream os(path);
  os << "users " << p.matrix.num_users << "\n"
     << "items " << p.matrix.num_items << "\n"
     << "interactions " << p.matrix.interaction_count() << "\n"
     << "sparsity " << std::setprecision(8) << p.matrix.sparsity() << "\n";
}

void emit_run_artifacts(const TrainRun& run, const EvalReport& report,
                        const std::string& out_dir, const std::string& tag) {
  write_train_csv(run, out_dir + "/" + tag + ".curve.csv");
  write_train_summary(run, out_dir + "/" + tag + ".summary.txt");
  write_report_csv(report, out_dir + "/" + tag + ".eval.csv");
  write_report_summary(report, out_dir + "/" + tag + ".eval.json");
}

// Trains per cfg (pre-trained pipeline or plain Adam) and returns the best
// checkpoint's evaluation.
std::pair<TrainRun, EvalReport> run_training(const ExperimentConfig& cfg,
                                             const SplitDataset& split,
                                             bool with_pretraining,
                                             const std::string& tag,
                                             std::ostream& log) {
  TrainConfig tc = to_train_config(cfg, log);
  tc.tag = tag;
  ModelConfig mc = to_model_config(cfg, split);
  BCFNetModel model;
  TrainRun run;
  if (with_pretraining) {
    run = train_with_pretraining(model, split, mc, tc);
  } else {
    model.config = mc;
    model.init(mix64(cfg.seed, 2024));
    run = train(model, ModelKind::Fused, split, tc);
  }
  load_checkpoint_into(model, ModelKind::Fused, run.checkpoint_path);
  EvalReport report = evaluate_model(model, ModelKind::Fused, split, cfg.eval_k, tag);
  std::ostringstream echo;
  echo << "kind=" << cfg.kind << " factors=" << cfg.factors << " rho=" << cfg.rho
       << " attention=" << cfg.attention << " balance=" << cfg.balance
       << " pretrain=" << (with_pretraining ? 1 : 0) << " epochs=" << cfg.epochs
       << " seed=" << cfg.seed;
  report.config_echo = echo.str();
  return {std::move(run), std::move(report)};
}

void write_markdown_table(const std::string& path, const std::string& title,
                          const std::vector<std::string>& row_names,
                          const std::vector<EvalReport>& reports, int k) {
  std::ofstream os(path);
  os << "# " << title << "\n\n";
  os << "| configuration | HR@" << k << " | NDCG@" << k << " |\n";
  os << "|---|---|---|\n";
  for (size_t i = 0; i < reports.size(); ++i)
    os << "| " << row_names[i] << " | " << std::fixed << std::setprecision(4)
       << reports[i].hr << " | " << reports[i].ndcg << " |\n";
}

int kind_prepare(const ExperimentConfig& cfg, std::ostream& log) {
  auto p = prepare_split(cfg, log);
  save_split(p.split, cfg.out_dir + "/split.txt");
  write_dataset_stats(p, cfg.out_dir + "/dataset_stats.txt");
  auto pop = itempop_baseline(p.split, cfg.eval_k);
  write_report_summary(pop, cfg.out_dir + "/itempop.eval.json");
  log << "split written: " << p.matrix.num_users << " user lines; itempop hr@"
      << cfg.eval_k << " " << pop.hr << " ndcg@" << cfg.eval_k << " "
      << pop.ndcg << "\n";
  return 0;
}

int kind_train(const ExperimentConfig& cfg, bool pretrained, std::ostream& log) {
  auto p = prepare_split(cfg, log);
  save_split(p.split, cfg.out_dir + "/split.txt");
  auto [run, report] =
      run_training(cfg, p.split, pretrained, pretrained ? "bcfnet" : "bcfnet-p0", log);
  emit_run_artifacts(run, report, cfg.out_dir, report.model_tag);
  log << "best hr@" << cfg.eval_k << " " << run.best_hr << " (epoch "
      << run.best_epoch << "), checkpoint " << run.checkpoint_path << "\n";
  return 0;
}

int kind_pretrain(const ExperimentConfig& cfg, std::ostream& log) {
  auto p = prepare_split(cfg, log);
  save_split(p.split, cfg.out_dir + "/split.txt");
  TrainConfig tc = to_train_config(cfg, log);
  tc.tag = "pretrain";
  auto ckpts = pretrain_all(p.split, to_model_config(cfg, p.split), tc);
  log << "pretrained checkpoints:\n  rl " << ckpts.rl << "\n  ml " << ckpts.ml
      << "\n";
  if (!ckpts.bm.empty()) log << "  bm " << ckpts.bm << "\n";
  write_train_csv(ckpts.rl_run, cfg.out_dir + "/pretrain.rl.curve.csv");
  write_train_csv(ckpts.ml_run, cfg.out_dir + "/pretrain.ml.curve.csv");
  if (!ckpts.bm.empty())
    write_train_csv(ckpts.bm_run, cfg.out_dir + "/pretrain.bm.curve.csv");
  return 0;
}

int kind_evaluate(const ExperimentConfig& cfg, std::ostream& log) {
  auto p = prepare_split(cfg, log);
  auto pop = itempop_baseline(p.split, cfg.eval_k);
  write_report_csv(pop, cfg.out_dir + "/itempop.eval.csv");
  write_report_summary(pop, cfg.out_dir + "/itempop.eval.json");
  log << "itempop: hr@" << cfg.eval_k << " " << pop.hr << " ndcg@" << cfg.eval_k
      << " " << pop.ndcg << "\n";
  if (!cfg.checkpoint.empty()) {
    ModelKind kind;
    BCFNetModel model = load_checkpoint(cfg.checkpoint, &kind);
    if (model.config.num_users != p.split.train.num_users ||
        model.config.num_items != p.split.train.num_items)
      throw CheckpointError("checkpoint " + cfg.checkpoint +
                            " does not match the prepared dataset dimensions");
    auto report = evaluate_model(model, kind, p.split, cfg.eval_k, "checkpoint");
    write_report_csv(report, cfg.out_dir + "/checkpoint.eval.csv");
    write_report_summary(report, cfg.out_dir + "/checkpoint.eval.json");
    log << "checkpoint (" << to_string(kind) << "): hr@" << cfg.eval_k << " "
        << report.hr << " ndcg@" << cfg.eval_k << " " << report.ndcg << "\n";
  }
  return 0;
}

int kind_sweep(const ExperimentConfig& cfg, bool over_rho, std::ostream& log) {
  auto p = prepare_split(cfg, log);
  save_split(p.split, cfg.out_dir + "/split.txt");
  const auto& grid = over_rho ? cfg.rho_grid : cfg.factor_grid;
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  std::vector<EvalReport> reports;
  std::vector<std::string> names;
  for (int v : grid) {
    ExperimentConfig point = cfg;
    if (over_rho) point.rho = v;
    else point.factors = v;
    const std::string tag =
        std::string(over_rho ? "rho" : "factors") + std::to_string(v);
    point.out_dir = cfg.out_dir + "/" + tag;
    fs::create_directories(point.out_dir);
    write_config_echo(point, point.out_dir + "/config.echo");
    log << "--- sweep point " << tag << "\n";
    auto [run, report] = run_training(point, p.split, cfg.pretrain, tag, log);
    emit_run_artifacts(run, report, point.out_dir, tag);
    reports.push_back(std::move(report));
    names.push_back(tag);
  }
  write_markdown_table(cfg.out_dir + "/summary.md",
                       over_rho ? "Negative sampling ratio sweep"
                                : "Predictive factors sweep",
                       names, reports, cfg.eval_k);
  return 0;
}

int kind_ablation(const ExperimentConfig& cfg, std::ostream& log) {
  auto p = prepare_split(cfg, log);
  save_split(p.split, cfg.out_dir + "/split.txt");
  struct Variant {
    const char* name;
    bool attention, balance;
  };
  const Variant variants[] = {
      {"bcfnet", true, true},
      {"bcfnet-without-a", false, true},
      {"bcfnet-without-b", true, false},
      {"bcfnet-without-ab", false, false},
  };
  std::vector<EvalReport> reports;
  std::vector<std::string> names;
  for (const auto& v : variants) {
    ExperimentConfig point = cfg;
    point.attention = v.attention;
    point.balance = v.balance;
    point.out_dir = cfg.out_dir + "/" + v.name;
    fs::create_directories(point.out_dir);
    write_config_echo(point, point.out_dir + "/config.echo");
    log << "--- ablation " << v.name << "\n";
    auto [run, report] = run_training(point, p.split, cfg.pretrain, v.name, log);
    emit_run_artifacts(run, report, point.out_dir, v.name);
    reports.push_back(std::move(report));
    names.push_back(v.name);
  }
  write_markdown_table(cfg.out_dir + "/summary.md", "Ablation suite", names,
                       reports, cfg.eval_k);
  return 0;
}

int kind_popularity(const ExperimentConfig& cfg, std::ostream& log) {
  const std::string path = resolve_data_path(cfg.data_path);
  auto raw = load_ratings(path, ratings_format_from_string(cfg.format));
  raw = k_core_filter(raw, cfg.min_user_ratings, cfg.min_item_raters);
  if (raw.empty()) throw DataError("k-core filter removed every record");
  auto matrix = binarize(raw);
  auto bands = popularity_partition(matrix, cfg.popularity_levels);

  std::vector<EvalReport> reports;
  std::vector<std::string> names;
  for (size_t lvl = 0; lvl < bands.size(); ++lvl) {
    const auto& band = bands[lvl];
    log << "--- popularity level " << (lvl + 1) << ": " << band.num_users
        << " users x " << band.num_items << " items, "
        << band.interaction_count() << " interactions\n";
    // keep only this band's raw records so the split sees its timestamps
    RawRatings band_raw;
    for (const auto& r : raw.records)
      if (band.user_index.count(r.user) && band.item_index.count(r.item))
        band_raw.records.push_back(r);
    if (band_raw.empty()) {
      log << "level " << (lvl + 1) << " skipped entirely: no interactions\n";
      continue;
    }
    int skipped = 0;
    SplitDataset split;
    try {
      split = leave_one_out_split_lenient(binarize(band_raw), band_raw,
                                          cfg.num_test_negatives, cfg.seed,
                                          &skipped);
    } catch (const SplitError& e) {
      log << "level " << (lvl + 1) << " skipped entirely: " << e.what() << "\n";
      continue;
    }
    log << "level " << (lvl + 1) << ": " << skipped
        << " users dropped by the leave-one-out preconditions, "
        << split.train.num_users << " kept\n";
    for (const char* variant : {"bcfnet", "bcfnet-without-b"}) {
      ExperimentConfig point = cfg;
      point.balance = std::string(variant) == "bcfnet";
      const std::string tag = "level" + std::to_string(lvl + 1) + "-" + variant;
      point.out_dir = cfg.out_dir + "/" + tag;
      fs::create_directories(point.out_dir);
      write_config_echo(point, point.out_dir + "/config.echo");
      auto [run, report] = run_training(point, split, cfg.pretrain, tag, log);
      emit_run_artifacts(run, report, point.out_dir, tag);
      reports.push_back(std::move(report));
      names.push_back(tag);
    }
  }
  if (reports.empty())
    throw DataError("no popularity level satisfied the evaluation protocol");
  write_markdown_table(cfg.out_dir + "/summary.md",
                       "Item-popularity partition experiment", names, reports,
                       cfg.eval_k);
  return 0;
}

}  // namespace

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    apply_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void write_config_echo(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write config echo: " + path);
  os << "kind = " << cfg.kind << "\n"
     << "data = " << cfg.data_path << "\n"
     << "format = " << cfg.format << "\n"
     << "out = " << cfg.out_dir << "\n"
     << "checkpoint = " << cfg.checkpoint << "\n"
     << "rho = " << cfg.rho << "\n"
     << "factors = " << cfg.factors << "\n"
     << "rl-encoding = " << cfg.rl_encoding << "\n"
     << "ml-embedding = " << cfg.ml_embedding << "\n"
     << "bm-embedding = " << cfg.bm_embedding << "\n"
     << "attention = " << (cfg.attention ? 1 : 0) << "\n"
     << "balance = " << (cfg.balance ? 1 : 0) << "\n"
     << "pretrain = " << (cfg.pretrain ? 1 : 0) << "\n"
     << "epochs = " << cfg.epochs << "\n"
     << "pretrain-epochs = " << cfg.pretrain_epochs << "\n"
     << "pretrain-epochs-bm = " << cfg.pretrain_epochs_bm << "\n"
     << "lr = " << cfg.lr << "\n"
     << "finetune-lr = " << cfg.finetune_lr << "\n"
     << "batch-size = " << cfg.batch_size << "\n"
     << "seed = " << cfg.seed << "\n"
     << "eval-every = " << cfg.eval_every << "\n"
     << "eval-k = " << cfg.eval_k << "\n"
     << "negatives = " << cfg.num_test_negatives << "\n"
     << "min-user-ratings = " << cfg.min_user_ratings << "\n"
     << "min-item-raters = " << cfg.min_item_raters << "\n"
     << "levels = " << cfg.popularity_levels << "\n";
  os << "rho-grid = ";
  for (size_t i = 0; i < cfg.rho_grid.size(); ++i)
    os << (i ? "," : "") << cfg.rho_grid[i];
  os << "\nfactor-grid = ";
  for (size_t i = 0; i < cfg.factor_grid.size(); ++i)
    os << (i ? "," : "") << cfg.factor_grid[i];
  os << "\n";
}

int run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  try {
    fs::create_directories(cfg.out_dir);
    write_config_echo(cfg, cfg.out_dir + "/config.echo");
    if (cfg.kind == "prepare") return kind_prepare(cfg, log);
    if (cfg.kind == "train") return kind_train(cfg, cfg.pretrain, log);
    if (cfg.kind == "train-pretrained") return kind_train(cfg, true, log);
    if (cfg.kind == "pretrain") return kind_pretrain(cfg, log);
    if (cfg.kind == "evaluate") return kind_evaluate(cfg, log);
    if (cfg.kind == "sweep-rho") return kind_sweep(cfg, true, log);
    if (cfg.kind == "sweep-factors") return kind_sweep(cfg, false, log);
    if (cfg.kind == "ablation-suite") return kind_ablation(cfg, log);
    if (cfg.kind == "popularity-experiment") return kind_popularity(cfg, log);
    log << "error: unknown experiment kind '" << cfg.kind << "'\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace bcfnet
