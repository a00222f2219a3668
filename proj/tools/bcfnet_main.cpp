#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "bcfnet/cli.hpp"

namespace {

std::vector<int> parse_grid(const std::string& s) {
  std::vector<int> out;
  for (size_t pos = 0; pos < s.size();) {
    size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stoi(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  bcfnet::ExperimentConfig cfg;

  // Apply the config file first so command-line flags override it.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        bcfnet::apply_config_file(cfg, argv[i + 1]);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
      }
    }
  }

  CLI::App app{"BCFNet: balanced collaborative filtering on implicit feedback"};
  std::string config_file, rho_grid, factor_grid;
  app.add_option("--config", config_file, "key = value config file");
  app.add_option("--kind", cfg.kind,
                 "prepare | pretrain | train | train-pretrained | evaluate | "
                 "sweep-rho | sweep-factors | popularity-experiment | "
                 "ablation-suite")
      ->capture_default_str();
  app.add_option("--data", cfg.data_path,
                 "ratings file (BCFNET_DATA_DIR is used as a fallback root)");
  app.add_option("--format", cfg.format,
                 "movielens-tab | movielens-double-colon | csv | auto")
      ->capture_default_str();
  app.add_option("--out", cfg.out_dir, "output directory")->capture_default_str();
  app.add_option("--checkpoint", cfg.checkpoint, "checkpoint to evaluate");
  app.add_option("--rho", cfg.rho, "negative samples per positive")
      ->capture_default_str();
  app.add_option("--factors", cfg.factors, "predictive factors")
      ->capture_default_str();
  app.add_option("--rl-encoding", cfg.rl_encoding,
                 "rl encoder size (0 = factors)");
  app.add_option("--ml-embedding", cfg.ml_embedding,
                 "ml embedding size (0 = factors)");
  app.add_option("--bm-embedding", cfg.bm_embedding,
                 "bm embedding size (0 = factors)");
  app.add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  app.add_option("--pretrain-epochs", cfg.pretrain_epochs,
                 "epochs per pre-trained sub-model")
      ->capture_default_str();
  app.add_option("--pretrain-epochs-bm", cfg.pretrain_epochs_bm,
                 "balance-module pre-training epochs (0 = follow)")
      ->capture_default_str();
  app.add_option("--lr", cfg.lr, "learning rate")->capture_default_str();
  app.add_option("--finetune-lr", cfg.finetune_lr, "SGD fine-tuning rate")
      ->capture_default_str();
  app.add_option("--batch-size", cfg.batch_size, "mini-batch size")
      ->capture_default_str();
  app.add_option("--seed", cfg.seed, "master RNG seed")->capture_default_str();
  app.add_option("--eval-every", cfg.eval_every, "evaluate every N epochs")
      ->capture_default_str();
  app.add_option("--eval-k", cfg.eval_k, "ranking cutoff")->capture_default_str();
  app.add_option("--negatives", cfg.num_test_negatives,
                 "held-out negatives per user")
      ->capture_default_str();
  app.add_option("--min-user-ratings", cfg.min_user_ratings,
                 "k-core user threshold")
      ->capture_default_str();
  app.add_option("--min-item-raters", cfg.min_item_raters,
                 "k-core item threshold")
      ->capture_default_str();
  app.add_option("--levels", cfg.popularity_levels, "popularity bands")
      ->capture_default_str();
  app.add_option("--rho-grid", rho_grid, "comma list for sweep-rho");
  app.add_option("--factor-grid", factor_grid, "comma list for sweep-factors");
  app.add_flag_callback(
      "--no-attention", [&] { cfg.attention = false; },
      "disable the feed-forward attention layers");
  app.add_flag_callback(
      "--no-balance", [&] { cfg.balance = false; },
      "disable the balance module");
  app.add_flag("--pretrain", cfg.pretrain,
               "pre-train the towers and fine-tune with SGD");

  CLI11_PARSE(app, argc, argv);
  try {
    if (!rho_grid.empty()) cfg.rho_grid = parse_grid(rho_grid);
    if (!factor_grid.empty()) cfg.factor_grid = parse_grid(factor_grid);
  } catch (const std::exception&) {
    std::cerr << "error: malformed grid list\n";
    return 1;
  }

  return bcfnet::run_experiment(cfg, std::cout);
}
