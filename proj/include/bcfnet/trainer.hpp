#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bcfnet/dataset.hpp"
#include "bcfnet/evaluator.hpp"
#include "bcfnet/models.hpp"

namespace bcfnet {

enum class Optimizer { Adam, Sgd };

const char* to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& s);

struct TrainConfig {
  int rho = 4;
  int batch_size = 256;
  double lr = 1e-5;          // Adam phases
  double finetune_lr = 1e-5; // SGD phase after pre-training
  int epochs = 24;             // fused model (with or without pre-training)
  int pretrain_epochs = 16;    // rl and ml sub-models
  int pretrain_epochs_bm = 48; // the balance module trains ~10x faster;
                               // 0 = follow pretrain_epochs
  Optimizer optimizer = Optimizer::Adam;
  uint64_t seed = 1;
  int eval_every = 1;
  int eval_k = 10;
  std::string out_dir = ".";
  std::string tag;           // prefix for emitted files
  std::ostream* log = nullptr;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (lr <= 0 || finetune_lr <= 0) throw ConfigError("train config: lr must be > 0");
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (pretrain_epochs < 1)
      throw ConfigError("train config: pretrain_epochs must be >= 1");
    if (pretrain_epochs_bm < 0)
      throw ConfigError("train config: pretrain_epochs_bm must be >= 0");
    if (rho < 1) throw ConfigError("train config: rho must be >= 1");
    if (eval_every < 1) throw ConfigError("train config: eval_every must be >= 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  double mean_bce = 0.0;
  double hr = -1.0;   // -1 when the epoch was not evaluated
  double ndcg = -1.0;
  double seconds = 0.0;
};

struct TrainRun {
  std::vector<EpochRecord> records;
  int best_epoch = -1;
  double best_hr = 0.0;
  double best_ndcg = 0.0;
  std::string checkpoint_path;
};

// Trains `model` (kind selects the objective head) on the split: each epoch
// resamples rho negatives per positive, shuffles, and steps the optimizer
// over fixed-size mini-batches of the summed BCE. Evaluation runs every
// eval_every epochs; the checkpoint with the best HR (ties: higher NDCG,
// then earlier epoch) is kept.
TrainRun train(BCFNetModel& model, ModelKind kind, const SplitDataset& split,
               const TrainConfig& cfg);

struct PretrainedCheckpoints {
  std::string rl, ml, bm;
  TrainRun rl_run, ml_run, bm_run;
};

// Trains the three sub-models independently with Adam and saves their best
// checkpoints. The bm slot stays empty when the balance module is disabled.
PretrainedCheckpoints pretrain_all(const SplitDataset& split,
                                   const ModelConfig& model_cfg,
                                   const TrainConfig& cfg);

// Full pipeline: pre-train, initialize the fused model from the pre-trained
// towers, then fine-tune with vanilla SGD.
TrainRun train_with_pretraining(BCFNetModel& model, const SplitDataset& split,
                                const ModelConfig& model_cfg,
                                const TrainConfig& cfg,
                                PretrainedCheckpoints* pretrained = nullptr);

void write_train_csv(const TrainRun& run, const std::string& path);
void write_train_summary(const TrainRun& run, const std::string& path);

}  // namespace bcfnet
