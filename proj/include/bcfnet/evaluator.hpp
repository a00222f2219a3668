#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bcfnet/dataset.hpp"
#include "bcfnet/models.hpp"

namespace bcfnet {

// One user's ranked candidate list: the held-out positive plus the fixed
// negatives, in descending score order. test_position is 1-based.
struct RankedList {
  int user = -1;
  std::vector<int> items;
  int test_position = 0;
};

struct UserRankRow {
  int user = -1;
  int test_item = -1;
  int rank = 0;
};

struct EvalReport {
  std::string model_tag;
  double hr = 0.0;
  double ndcg = 0.0;
  int k = 10;
  std::vector<UserRankRow> rows;
  std::string config_echo;
};

// Scores a batch of candidate items for one user; must return one score per
// candidate. Both the model scorer and the popularity baseline fit this.
using ScoreFn =
    std::function<std::vector<float>(int user, std::span<const int> candidates)>;

RankedList rank_candidates(const ScoreFn& score, const SplitDataset& split,
                           int user);

double hr_at_k(std::span<const RankedList> lists, int k = 10);
double ndcg_at_k(std::span<const RankedList> lists, int k = 10);

// Frozen-model scorer: one graph instance reused across users, candidates
// batched per user. Histories come from the split's train matrix.
class ModelScorer {
 public:
  ModelScorer(BCFNetModel& model, ModelKind kind);
  std::vector<float> score(const SplitDataset& split, int user,
                           std::span<const int> candidates);
  ScoreFn bind(const SplitDataset& split);

 private:
  ModelGraphT<float> graph_;
  IndexBatch user_batch_, item_batch_;
};

EvalReport evaluate_model(BCFNetModel& model, ModelKind kind,
                          const SplitDataset& split, int k = 10,
                          const std::string& tag = "");

// Non-personalized baseline: candidates ranked by train interaction count.
EvalReport itempop_baseline(const SplitDataset& split, int k = 10);

void write_report_csv(const EvalReport& report, const std::string& path);
void write_report_summary(const EvalReport& report, const std::string& path);

}  // namespace bcfnet
