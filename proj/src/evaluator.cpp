#include "bcfnet/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace bcfnet {

RankedList rank_candidates(const ScoreFn& score, const SplitDataset& split,
                           int user) {
  if (user < 0 || user >= split.train.num_users ||
      split.test_items.size() != static_cast<size_t>(split.train.num_users))
    throw EvalError("rank_candidates: user " + std::to_string(user) +
                    " has no test entry");
  const int test_item = split.test_items[static_cast<size_t>(user)];
  const auto& negatives = split.test_negatives[static_cast<size_t>(user)];

  std::vector<int> candidates;
  candidates.reserve(negatives.size() + 1);
  candidates.push_back(test_item);
  candidates.insert(candidates.end(), negatives.begin(), negatives.end());

  std::vector<float> scores = score(user, candidates);
  if (scores.size() != candidates.size())
    throw EvalError("rank_candidates: scorer returned " +
                    std::to_string(scores.size()) + " scores for " +
                    std::to_string(candidates.size()) + " candidates");

  std::vector<int> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  // Descending score; equal scores fall back to ascending item index so the
  // ranking is deterministic.
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return candidates[static_cast<size_t>(a)] < candidates[static_cast<size_t>(b)];
  });

  RankedList out;
  out.user = user;
  out.items.reserve(candidates.size());
  for (size_t pos = 0; pos < order.size(); ++pos) {
    int item = candidates[static_cast<size_t>(order[pos])];
    out.items.push_back(item);
    if (item == test_item) out.test_position = static_cast<int>(pos) + 1;
  }
  return out;
}

double hr_at_k(std::span<const RankedList> lists, int k) {
  if (lists.empty()) throw EvalError("hr_at_k: no users to evaluate");
  int64_t hits = 0;
  for (const auto& l : lists)
    if (l.test_position >= 1 && l.test_position <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(lists.size());
}

double ndcg_at_k(std::span<const RankedList> lists, int k) {
  if (lists.empty()) throw EvalError("ndcg_at_k: no users to evaluate");
  double total = 0.0;
  for (const auto& l : lists) {
    if (l.test_position >= 1 && l.test_position <= k)
      total += 1.0 / std::log2(static_cast<double>(l.test_position) + 1.0);
  }
  return total / static_cast<double>(lists.size());
}

ModelScorer::ModelScorer(BCFNetModel& model, ModelKind kind)
    : graph_(build_model_graph(model, kind, false)) {}

std::vector<float> ModelScorer::score(const SplitDataset& split, int user,
                                      std::span<const int> candidates) {
  const InteractionMatrix& train = split.train;
  user_batch_.clear();
  item_batch_.clear();
  auto user_row = train.row(user);
  for (int i : candidates) {
    user_batch_.push(user_row);
    item_batch_.push(train.col(i));
  }
  graph_.graph.bind_indices(graph_.user_indices, &user_batch_);
  graph_.graph.bind_indices(graph_.item_indices, &item_batch_);
  graph_.graph.forward(static_cast<int>(candidates.size()));
  auto yhat = graph_.graph.activations(graph_.yhat);
  for (float v : yhat)
    if (!std::isfinite(v))
      throw EvalError("model produced a non-finite score for user " +
                      std::to_string(user));
  return {yhat.begin(), yhat.end()};
}

ScoreFn ModelScorer::bind(const SplitDataset& split) {
  return [this, &split](int user, std::span<const int> candidates) {
    return score(split, user, candidates);
  };
}

static EvalReport report_from_lists(std::vector<RankedList> lists, int k,
                                    const std::string& tag,
                                    const SplitDataset& split) {
  EvalReport report;
  report.model_tag = tag;
  report.k = k;
  report.hr = hr_at_k(lists, k);
  report.ndcg = ndcg_at_k(lists, k);
  // each hit contributes at most 1 to the gain, misses contribute 0 to both
  if (report.ndcg > report.hr + 1e-9)
    throw EvalError("ndcg@" + std::to_string(k) + " exceeds hr@" +
                    std::to_string(k) + ": metric computation is broken");
  report.rows.reserve(lists.size());
  for (const auto& l : lists)
    report.rows.push_back(
        {l.user, split.test_items[static_cast<size_t>(l.user)], l.test_position});
  return report;
}

EvalReport evaluate_model(BCFNetModel& model, ModelKind kind,
                          const SplitDataset& split, int k,
                          const std::string& tag) {
  ModelScorer scorer(model, kind);
  ScoreFn fn = scorer.bind(split);
  std::vector<RankedList> lists;
  lists.reserve(static_cast<size_t>(split.train.num_users));
  for (int u = 0; u < split.train.num_users; ++u)
    lists.push_back(rank_candidates(fn, split, u));
  return report_from_lists(std::move(lists), k,
                           tag.empty() ? to_string(kind) : tag, split);
}

EvalReport itempop_baseline(const SplitDataset& split, int k) {
  const InteractionMatrix& train = split.train;
  ScoreFn fn = [&train](int, std::span<const int> candidates) {
    std::vector<float> scores;
    scores.reserve(candidates.size());
    for (int i : candidates)
      scores.push_back(static_cast<float>(train.col_ptr[i + 1] - train.col_ptr[i]));
    return scores;
  };
  std::vector<RankedList> lists;
  lists.reserve(static_cast<size_t>(train.num_users));
  for (int u = 0; u < train.num_users; ++u)
    lists.push_back(rank_candidates(fn, split, u));
  return report_from_lists(std::move(lists), k, "itempop", split);
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw EvalError("cannot write report: " + path);
  os << "user,test_item,rank\n";
  for (const auto& r : report.rows)
    os << r.user << "," << r.test_item << "," << r.rank << "\n";
}

void write_report_summary(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw EvalError("cannot write report summary: " + path);
  os << "{\n"
     << "  \"model\": \"" << report.model_tag << "\",\n"
     << "  \"hr" << report.k << "\": " << report.hr << ",\n"
     << "  \"ndcg" << report.k << "\": " << report.ndcg << ",\n"
     << "  \"users\": " << report.rows.size();
  if (!report.config_echo.empty())
    os << ",\n  \"config\": \"" << report.config_echo << "\"";
  os << "\n}\n";
}

}  // namespace bcfnet
