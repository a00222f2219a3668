#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bcfnet/dataset.hpp"
#include "bcfnet/trainer.hpp"

namespace bcfnet {

// Fully resolved experiment description. The CLI front end fills this from
// flags and an optional key=value config file; tests construct it directly.
struct ExperimentConfig {
  std::string kind = "train";  // prepare | pretrain | train | train-pretrained |
                               // evaluate | sweep-rho | sweep-factors |
                               // popularity-experiment | ablation-suite
  std::string data_path;
  std::string format = "auto";
  std::string out_dir = "out";
  std::string checkpoint;  // for `evaluate`

  int rho = 4;
  int factors = 128;
  int rl_encoding = 0;   // 0 = follow factors
  int ml_embedding = 0;
  int bm_embedding = 0;
  bool attention = true;
  bool balance = true;
  bool pretrain = false;  // `train` runs the pre-trained pipeline when set

  int epochs = 24;
  int pretrain_epochs = 16;
  int pretrain_epochs_bm = 48;  // 0 = follow pretrain_epochs
  double lr = 1e-5;
  double finetune_lr = 1e-5;
  int batch_size = 256;
  uint64_t seed = 1;
  int eval_every = 1;
  int eval_k = 10;

  int num_test_negatives = 100;
  int min_user_ratings = 20;
  int min_item_raters = 5;
  int popularity_levels = 3;
  std::vector<int> rho_grid = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> factor_grid = {16, 32, 64, 128};
};

// Uses BCFNET_DATA_DIR as a fallback root when `path` does not exist.
std::string resolve_data_path(const std::string& path);

// Applies `key = value` lines (# comments allowed). Unknown keys raise.
void apply_config_file(ExperimentConfig& cfg, const std::string& path);

void write_config_echo(const ExperimentConfig& cfg, const std::string& path);

// Executes the experiment, writing artifacts under cfg.out_dir.
// Returns a process exit status (0 on success).
int run_experiment(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace bcfnet
