#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "bcfnet/evaluator.hpp"
#include "synthetic.hpp"

using namespace bcfnet;

namespace {

SplitDataset make_split(int users = 16, int items = 60, uint64_t seed = 3) {
  auto raw = testgen::make_synthetic_ratings(users, items, 8, 4, seed);
  auto m = binarize(raw);
  return leave_one_out_split(m, raw, 20, seed + 1);
}

std::vector<RankedList> lists_with_positions(const std::vector<int>& positions) {
  std::vector<RankedList> lists;
  for (size_t i = 0; i < positions.size(); ++i) {
    RankedList l;
    l.user = static_cast<int>(i);
    l.test_position = positions[i];
    lists.push_back(l);
  }
  return lists;
}

}  // namespace

TEST_CASE("hr_at_k counts hits inside the cutoff") {
  auto lists = lists_with_positions({1, 2, 3, 4, 5, 11, 12, 13, 14, 15});
  CHECK(hr_at_k(lists, 10) == doctest::Approx(0.5));
  CHECK(hr_at_k(lists_with_positions({1, 1, 1}), 10) == 1.0);
  CHECK(hr_at_k(lists_with_positions({11, 40, 101}), 10) == 0.0);
  CHECK_THROWS_AS(hr_at_k({}, 10), EvalError);
}

TEST_CASE("ndcg_at_k uses the log2 position discount") {
  CHECK(ndcg_at_k(lists_with_positions({1}), 10) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ndcg_at_k(lists_with_positions({3}), 10) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ndcg_at_k(lists_with_positions({1, 12}), 10) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(ndcg_at_k({}, 10), EvalError);
}

TEST_CASE("ndcg never exceeds hr") {
  Pcg32 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> positions;
    for (int u = 0; u < 25; ++u)
      positions.push_back(1 + static_cast<int>(rng.bounded(101)));
    auto lists = lists_with_positions(positions);
    CHECK(ndcg_at_k(lists, 10) <= hr_at_k(lists, 10) + 1e-9);
  }
}

TEST_CASE("rank_candidates") {
  auto split = make_split();
  const int user = 2;
  const int test_item = split.test_items[static_cast<size_t>(user)];

  SUBCASE("constant scores rank by ascending item index") {
    ScoreFn constant = [](int, std::span<const int> c) {
      return std::vector<float>(c.size(), 0.5f);
    };
    auto list = rank_candidates(constant, split, user);
    for (size_t i = 1; i < list.items.size(); ++i)
      CHECK(list.items[i - 1] < list.items[i]);
  }
  SUBCASE("scoring the test item highest yields rank 1") {
    ScoreFn oracle_score = [&](int, std::span<const int> c) {
      std::vector<float> s;
      for (int i : c) s.push_back(i == test_item ? 1.0f : 0.0f);
      return s;
    };
    auto list = rank_candidates(oracle_score, split, user);
    CHECK(list.test_position == 1);
    CHECK(list.items[0] == test_item);
  }
  SUBCASE("the ranked list is a permutation of the candidate set") {
    ScoreFn noisy = [](int, std::span<const int> c) {
      std::vector<float> s;
      for (int i : c) s.push_back(static_cast<float>((i * 2654435761u) % 97));
      return s;
    };
    auto list = rank_candidates(noisy, split, user);
    std::set<int> expected(split.test_negatives[static_cast<size_t>(user)].begin(),
                           split.test_negatives[static_cast<size_t>(user)].end());
    expected.insert(test_item);
    std::set<int> got(list.items.begin(), list.items.end());
    CHECK(got == expected);
    CHECK(list.items.size() == expected.size());
  }
  SUBCASE("missing test entry raises") {
    ScoreFn constant = [](int, std::span<const int> c) {
      return std::vector<float>(c.size(), 0.0f);
    };
    CHECK_THROWS_AS(rank_candidates(constant, split, split.train.num_users),
                    EvalError);
  }
}

TEST_CASE("metrics are invariant under strictly increasing score transforms") {
  auto split = make_split(20, 70, 9);
  ScoreFn base = [](int u, std::span<const int> c) {
    std::vector<float> s;
    for (int i : c)
      s.push_back(std::sin(static_cast<float>(i * 37 + u)) * 0.4f);
    return s;
  };
  auto with = [&](auto f) {
    std::vector<RankedList> lists;
    for (int u = 0; u < split.train.num_users; ++u) {
      ScoreFn tf = [&](int uu, std::span<const int> c) {
        auto s = base(uu, c);
        for (auto& v : s) v = f(v);
        return s;
      };
      lists.push_back(rank_candidates(tf, split, u));
    }
    return std::pair{hr_at_k(lists, 10), ndcg_at_k(lists, 10)};
  };
  auto [hr0, ndcg0] = with([](float v) { return v; });
  auto [hr1, ndcg1] = with([](float v) { return 2.0f * v + 1.0f; });
  auto [hr2, ndcg2] = with([](float v) { return std::exp(v); });
  CHECK(hr0 == hr1);
  CHECK(hr0 == hr2);
  CHECK(ndcg0 == doctest::Approx(ndcg1).epsilon(1e-12));
  CHECK(ndcg0 == doctest::Approx(ndcg2).epsilon(1e-12));
}

TEST_CASE("forcing the test item to the top maxes both metrics for that user") {
  auto split = make_split(10, 50, 21);
  std::vector<RankedList> lists;
  for (int u = 0; u < split.train.num_users; ++u) {
    const int test_item = split.test_items[static_cast<size_t>(u)];
    ScoreFn fn = [&](int, std::span<const int> c) {
      std::vector<float> s;
      for (int i : c)
        s.push_back(i == test_item ? std::numeric_limits<float>::infinity()
                                   : static_cast<float>(i % 7));
      return s;
    };
    lists.push_back(rank_candidates(fn, split, u));
  }
  CHECK(hr_at_k(lists, 10) == 1.0);
  CHECK(ndcg_at_k(lists, 10) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("batched model scoring matches single-pair forwards") {
  auto split = make_split(12, 55, 31);
  ModelConfig cfg;
  cfg.num_users = split.train.num_users;
  cfg.num_items = split.train.num_items;
  cfg.factors = 4;
  cfg.rl_encoding = 4;
  cfg.ml_embedding = 4;
  BCFNetModel model;
  model.config = cfg;
  model.init(77);
  // widen the weights so scores separate
  Pcg32 rng(5);
  for (auto* p : model.parameters(ModelKind::Fused))
    for (auto& v : p->value.data)
      v = static_cast<float>(0.3 * (2.0 * rng.next_double() - 1.0));

  ModelScorer scorer(model, ModelKind::Fused);
  for (int u = 0; u < 3; ++u) {
    std::vector<int> candidates{split.test_items[static_cast<size_t>(u)]};
    const auto& negs = split.test_negatives[static_cast<size_t>(u)];
    candidates.insert(candidates.end(), negs.begin(), negs.begin() + 10);
    auto batched = scorer.score(split, u, candidates);
    for (size_t c = 0; c < candidates.size(); ++c) {
      auto single = forward_fused(model, split.train.row(u),
                                  split.train.col(candidates[c]));
      CHECK(std::fabs(batched[c] - single.y_hat) < 1e-7);
    }
  }
}

TEST_CASE("itempop ranks by train interaction count") {
  SUBCASE("more popular test item wins") {
    RawRatings raw;
    // two candidate items; "pop" has three train interactions, "rare" none
    raw.records.push_back({"u", "x", 1.0, 1});
    raw.records.push_back({"u", "pop", 1.0, 9});
    for (int k = 0; k < 3; ++k)
      raw.records.push_back({"v" + std::to_string(k), "pop", 1.0, 1});
    for (int k = 0; k < 3; ++k)
      raw.records.push_back({"v" + std::to_string(k), "x", 1.0, 2});
    for (int i = 0; i < 20; ++i)
      raw.records.push_back({"w" + std::to_string(i / 5),
                             "pad" + std::to_string(i), 1.0, i});
    auto m = binarize(raw);
    auto split = leave_one_out_split(m, raw, 5, 2);
    auto report = itempop_baseline(split, 10);
    const int u = m.user_index.at("u");
    // u's held-out item is "pop" with 3 train raters; negatives are pads
    for (const auto& row : report.rows)
      if (row.user == u) CHECK(row.rank == 1);
  }
  SUBCASE("deterministic across calls") {
    auto split = make_split(14, 48, 12);
    auto a = itempop_baseline(split, 10);
    auto b = itempop_baseline(split, 10);
    CHECK(a.hr == b.hr);
    CHECK(a.ndcg == b.ndcg);
    for (size_t i = 0; i < a.rows.size(); ++i)
      CHECK(a.rows[i].rank == b.rows[i].rank);
  }
}

TEST_CASE("report files are written") {
  namespace fs = std::filesystem;
  auto split = make_split(8, 40, 5);
  auto report = itempop_baseline(split, 10);
  auto dir = fs::temp_directory_path() / "bcfnet_eval_test";
  fs::create_directories(dir);
  auto csv = (dir / "report.csv").string();
  auto summary = (dir / "report.json").string();
  write_report_csv(report, csv);
  write_report_summary(report, summary);

  std::ifstream is(csv);
  std::string header;
  std::getline(is, header);
  CHECK(header == "user,test_item,rank");
  int lines = 0;
  std::string line;
  while (std::getline(is, line)) ++lines;
  CHECK(lines == split.train.num_users);

  std::ifstream js(summary);
  std::string all((std::istreambuf_iterator<char>(js)), {});
  CHECK(all.find("\"model\": \"itempop\"") != std::string::npos);
}
