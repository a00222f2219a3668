#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bcfnet/attention.hpp"
#include "bcfnet/diffcore.hpp"

namespace bcfnet {

enum class ModelKind { Rl, Ml, Bm, Fused };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

// Shape configuration shared by all towers. `factors` is the predictive
// vector dimension f; the encoder/embedding sizes default to f when left 0.
struct ModelConfig {
  int num_users = 0;  // M
  int num_items = 0;  // N
  int factors = 128;
  int rl_encoding = 0;   // l
  int ml_embedding = 0;  // h
  int bm_embedding = 0;  // r; must equal factors when balance is enabled
  bool attention = true;
  bool balance = true;

  int l() const { return rl_encoding > 0 ? rl_encoding : factors; }
  int h() const { return ml_embedding > 0 ? ml_embedding : factors; }
  int r() const { return bm_embedding > 0 ? bm_embedding : factors; }
  int fusion_dim() const { return balance ? 3 * factors : 2 * factors; }

  void validate() const {
    if (num_users <= 0 || num_items <= 0)
      throw ConfigError("model config: user/item counts must be positive");
    if (factors <= 0) throw ConfigError("model config: factors must be positive");
    if (balance && r() != factors)
      throw ConfigError(
          "model config: balance-module embedding size must equal the "
          "predictive factor count (got " +
          std::to_string(r()) + " vs " + std::to_string(factors) + ")");
  }
};

// Representation-learning tower (two per-side MLP pathways with a
// feed-forward attention layer after the linear encoder).
template <typename T>
struct RlTowerT {
  ParameterT<T> user_encoder;  // [N x l]
  ParameterT<T> item_encoder;  // [M x l]
  FeedForwardAttentionT<T> user_attention, item_attention;
  ParameterT<T> user_w1, user_b1, user_w2, user_b2;
  ParameterT<T> item_w1, item_b1, item_w2, item_b2;
  ParameterT<T> out_weights;  // [f x 1], used when trained stand-alone
};

// Matching-function tower (linear embeddings, attention over the
// concatenated pair, three hidden layers).
template <typename T>
struct MlTowerT {
  ParameterT<T> user_embedding;  // [N x h]
  ParameterT<T> item_embedding;  // [M x h]
  FeedForwardAttentionT<T> attention;
  ParameterT<T> w1, b1, w2, b2, w3, b3;
  ParameterT<T> out_weights;  // [f x 1]
};

// Balance module: GMF on history-summed embeddings.
template <typename T>
struct BmModuleT {
  ParameterT<T> user_embedding;  // [N x r]
  ParameterT<T> item_embedding;  // [M x r]
  ParameterT<T> out_weights;     // [r x 1]
};

template <typename T>
struct BCFNetModelT {
  ModelConfig config;
  RlTowerT<T> rl;
  MlTowerT<T> ml;
  BmModuleT<T> bm;
  ParameterT<T> fusion_out;  // [fusion_dim x 1]

  void init(uint64_t seed);

  // Trainable parameters for a given training target. The fused model does
  // not train the per-tower output weights (the fusion layer replaces them).
  std::vector<ParameterT<T>*> parameters(ModelKind kind);

  // Parameters persisted in a checkpoint of `kind`, in manifest order.
  std::vector<ParameterT<T>*> checkpoint_parameters(ModelKind kind);
};

using BCFNetModel = BCFNetModelT<float>;

// A built computation graph for one model kind, with handles to the nodes
// the trainer and evaluator need.
template <typename T>
struct ModelGraphT {
  GraphT<T> graph;
  int user_indices = -1;
  int item_indices = -1;
  int a_rl = -1, a_ml = -1, a_bm = -1;
  int logit = -1;
  int yhat = -1;
};

template <typename T>
ModelGraphT<T> build_model_graph(BCFNetModelT<T>& model, ModelKind kind,
                                 bool with_bce_loss);

// Single-pair forward passes over sparse histories (the nonzero positions
// of the train-matrix row y_u* and column y_*i).
template <typename T>
struct TowerOutput {
  std::vector<T> predictive;
  T y_hat = T(0);
};

template <typename T>
struct FusedOutput {
  std::vector<T> a_rl, a_ml, a_bm;
  T y_hat = T(0);
};

template <typename T>
TowerOutput<T> forward_rl(BCFNetModelT<T>& model, std::span<const int> user_hist,
                          std::span<const int> item_hist);
template <typename T>
TowerOutput<T> forward_ml(BCFNetModelT<T>& model, std::span<const int> user_hist,
                          std::span<const int> item_hist);
template <typename T>
TowerOutput<T> forward_bm(BCFNetModelT<T>& model, std::span<const int> user_hist,
                          std::span<const int> item_hist);
template <typename T>
FusedOutput<T> forward_fused(BCFNetModelT<T>& model,
                             std::span<const int> user_hist,
                             std::span<const int> item_hist);

// Checkpoint I/O: text manifest followed by raw little-endian float32
// arrays in manifest order. Round trips are byte-exact.
void save_checkpoint(BCFNetModel& model, ModelKind kind,
                     const std::string& path);
BCFNetModel load_checkpoint(const std::string& path, ModelKind* kind_out = nullptr);
void load_checkpoint_into(BCFNetModel& model, ModelKind kind,
                          const std::string& path);

// Copies pre-trained tower parameters into `model` and seeds the fusion
// weights with the scaled per-tower output weights.
void init_from_pretrained(BCFNetModel& model, const std::string& rl_ckpt,
                          const std::string& ml_ckpt, const std::string& bm_ckpt,
                          double alpha = 1.0 / 3.0);

}  // namespace bcfnet
