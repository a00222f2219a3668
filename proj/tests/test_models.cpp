#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bcfnet/models.hpp"
#include "fd_check.hpp"
#include "oracles.hpp"

using namespace bcfnet;

namespace {

ModelConfig tiny_config(int users = 4, int items = 6, int f = 2,
                        bool attention = true, bool balance = true) {
  ModelConfig c;
  c.num_users = users;
  c.num_items = items;
  c.factors = f;
  c.rl_encoding = 3;
  c.ml_embedding = 2;
  c.attention = attention;
  c.balance = balance;
  if (balance) c.bm_embedding = f;
  return c;
}

template <typename T>
void randomize_params(BCFNetModelT<T>& m, uint64_t seed, double spread) {
  Pcg32 rng(seed);
  for (auto* p : m.parameters(ModelKind::Fused))
    for (auto& v : p->value.data)
      v = static_cast<T>(spread * (2.0 * rng.next_double() - 1.0));
  for (auto* p : {&m.rl.out_weights, &m.ml.out_weights})
    for (auto& v : p->value.data)
      v = static_cast<T>(spread * (2.0 * rng.next_double() - 1.0));
  if (m.config.balance)
    for (auto& v : m.bm.out_weights.value.data)
      v = static_cast<T>(spread * (2.0 * rng.next_double() - 1.0));
}

std::vector<int> random_history(Pcg32& rng, int max_index, bool allow_empty) {
  int len = static_cast<int>(rng.bounded(static_cast<uint32_t>(max_index)));
  if (!allow_empty && len == 0) len = 1;
  std::vector<int> out;
  std::vector<char> used(static_cast<size_t>(max_index), 0);
  while (static_cast<int>(out.size()) < len) {
    int j = static_cast<int>(rng.bounded(static_cast<uint32_t>(max_index)));
    if (used[static_cast<size_t>(j)]) continue;
    used[static_cast<size_t>(j)] = 1;
    out.push_back(j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double logit_of(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("tower outputs match the scalar-loop references") {
  for (uint64_t seed = 1; seed <= 12; ++seed) {
    auto cfg = tiny_config(4 + seed % 3, 5 + seed % 4, 2 + seed % 3,
                           seed % 2 == 0, true);
    BCFNetModelT<float> m;
    m.config = cfg;
    m.init(seed);
    randomize_params(m, seed * 31, 0.4);
    Pcg32 rng(seed * 7 + 1);
    auto uh = random_history(rng, cfg.num_items, false);
    auto ih = random_history(rng, cfg.num_users, false);

    auto rl = forward_rl(m, uh, ih);
    auto rl_ref = oracle::rl_predictive(m, uh, ih);
    REQUIRE(rl.predictive.size() == rl_ref.size());
    for (size_t i = 0; i < rl_ref.size(); ++i)
      CHECK(rl.predictive[i] == doctest::Approx(rl_ref[i]).epsilon(1e-5));
    CHECK(rl.y_hat ==
          doctest::Approx(oracle::head(rl_ref, m.rl.out_weights)).epsilon(1e-5));

    auto ml = forward_ml(m, uh, ih);
    auto ml_ref = oracle::ml_predictive(m, uh, ih);
    for (size_t i = 0; i < ml_ref.size(); ++i)
      CHECK(ml.predictive[i] == doctest::Approx(ml_ref[i]).epsilon(1e-5));

    auto bm = forward_bm(m, uh, ih);
    auto bm_ref = oracle::bm_predictive(m, uh, ih);
    for (size_t i = 0; i < bm_ref.size(); ++i)
      CHECK(bm.predictive[i] == doctest::Approx(bm_ref[i]).epsilon(1e-5));

    auto fused = forward_fused(m, uh, ih);
    CHECK(fused.y_hat ==
          doctest::Approx(oracle::fused_yhat(m, uh, ih)).epsilon(1e-5));
    CHECK(fused.y_hat > 0.0f);
    CHECK(fused.y_hat < 1.0f);
  }
}

TEST_CASE("empty histories behave like all-zero inputs") {
  auto cfg = tiny_config();
  BCFNetModelT<float> m;
  m.config = cfg;
  m.init(3);
  randomize_params(m, 5, 0.4);
  std::vector<int> empty, ih{1, 2};

  // bm: zero user side zeroes the predictive vector, so yhat = 0.5 exactly
  auto bm = forward_bm(m, empty, ih);
  for (float v : bm.predictive) CHECK(v == 0.0f);
  CHECK(bm.y_hat == doctest::Approx(0.5));

  // rl: encoder output zero, so p_u is produced purely by the MLP biases
  auto rl = forward_rl(m, empty, ih);
  auto rl_ref = oracle::rl_predictive(m, empty, ih);
  for (size_t i = 0; i < rl_ref.size(); ++i)
    CHECK(rl.predictive[i] == doctest::Approx(rl_ref[i]).epsilon(1e-5));
}

TEST_CASE("zero output weights give yhat = 0.5") {
  auto cfg = tiny_config();
  BCFNetModelT<float> m;
  m.config = cfg;
  m.init(9);
  randomize_params(m, 4, 0.4);
  m.rl.out_weights.value.fill(0.0f);
  m.fusion_out.value.fill(0.0f);
  std::vector<int> uh{0, 2}, ih{1};
  CHECK(forward_rl(m, uh, ih).y_hat == doctest::Approx(0.5));
  CHECK(forward_fused(m, uh, ih).y_hat == doctest::Approx(0.5));
}

TEST_CASE("one-hot histories select embedding rows") {
  auto cfg = tiny_config(5, 7, 3, false, true);
  BCFNetModelT<float> m;
  m.config = cfg;
  m.init(21);
  randomize_params(m, 22, 0.5);
  const int j = 4, k = 2;
  std::vector<int> uh{j}, ih{k};

  auto bm = forward_bm(m, uh, ih);
  const int r = cfg.r();
  for (int d = 0; d < r; ++d) {
    float pj = m.bm.user_embedding.value.data[static_cast<size_t>(j) * r + d];
    float qk = m.bm.item_embedding.value.data[static_cast<size_t>(k) * r + d];
    CHECK(bm.predictive[static_cast<size_t>(d)] == doctest::Approx(pj * qk));
  }
}

TEST_CASE("ablation flags remove blocks and shrink shapes") {
  SUBCASE("without balance the fusion weights hold 2f entries") {
    auto cfg = tiny_config(4, 6, 3, true, false);
    BCFNetModelT<float> m;
    m.config = cfg;
    m.init(2);
    CHECK(m.fusion_out.value.shape[0] == 2 * cfg.factors);
    CHECK_THROWS_AS(m.parameters(ModelKind::Bm), ConfigError);

    randomize_params(m, 6, 0.4);
    std::vector<int> uh{1}, ih{0, 3};
    auto fused = forward_fused(m, uh, ih);
    CHECK(fused.a_bm.empty());
    CHECK(fused.y_hat ==
          doctest::Approx(oracle::fused_yhat(m, uh, ih)).epsilon(1e-5));
  }
  SUBCASE("without attention the first MLP layers take a_0 directly") {
    auto cfg = tiny_config(4, 6, 2, false, true);
    BCFNetModelT<float> m;
    m.config = cfg;
    m.init(2);
    CHECK(m.rl.user_w1.value.shape[0] == cfg.l());
    CHECK(m.ml.w1.value.shape[0] == 2 * cfg.h());
    // CFNet ablation = both disabled
    auto cf_cfg = tiny_config(4, 6, 2, false, false);
    BCFNetModelT<float> cf;
    cf.config = cf_cfg;
    cf.init(3);
    randomize_params(cf, 8, 0.4);
    std::vector<int> uh{1, 2}, ih{3};
    auto fused = forward_fused(cf, uh, ih);
    CHECK(fused.y_hat ==
          doctest::Approx(oracle::fused_yhat(cf, uh, ih)).epsilon(1e-5));
  }
}

TEST_CASE("every enabled parameter block receives gradient") {
  auto cfg = tiny_config(5, 6, 2, true, true);
  BCFNetModelT<float> m;
  m.config = cfg;
  m.init(11);
  randomize_params(m, 17, 0.5);
  // keep the ReLU units alive so every block has a live path to the loss
  for (auto* b : {&m.rl.user_b1, &m.rl.user_b2, &m.rl.item_b1, &m.rl.item_b2,
                  &m.ml.b1, &m.ml.b2, &m.ml.b3})
    for (auto& v : b->value.data) v = 0.4f + std::fabs(v);

  auto mg = build_model_graph(m, ModelKind::Fused, true);
  IndexBatch ub, ib;
  ub.push(std::vector<int>{0, 2, 4});
  ib.push(std::vector<int>{1, 3});
  float target = 1.0f;
  mg.graph.bind_indices(mg.user_indices, &ub);
  mg.graph.bind_indices(mg.item_indices, &ib);
  mg.graph.bind_targets(&target);
  mg.graph.forward(1);
  mg.graph.loss();
  mg.graph.backward();

  for (auto* p : m.parameters(ModelKind::Fused)) {
    double sum = 0.0;
    for (float v : p->grad.data) sum += std::fabs(v);
    INFO("parameter ", p->name);
    CHECK(sum > 0.0);
  }
}

TEST_CASE("tower gradients pass finite differences") {
  for (ModelKind kind :
       {ModelKind::Rl, ModelKind::Ml, ModelKind::Bm, ModelKind::Fused}) {
    uint64_t seed = 100 + static_cast<uint64_t>(kind);
    for (int attempt = 0; attempt < 50; ++attempt, ++seed) {
      auto cfg = tiny_config(4, 5, 2, true, true);
      BCFNetModelT<double> m;
      m.config = cfg;
      m.init(seed);
      randomize_params(m, seed * 13, 0.6);
      auto mg = build_model_graph(m, kind, true);
      IndexBatch ub, ib;
      Pcg32 rng(seed);
      ub.push(random_history(rng, cfg.num_items, false));
      ib.push(random_history(rng, cfg.num_users, false));
      std::vector<double> targets{static_cast<double>(rng.bounded(2))};
      mg.graph.bind_indices(mg.user_indices, &ub);
      mg.graph.bind_indices(mg.item_indices, &ib);
      mg.graph.bind_targets(targets.data());

      auto run = [&] {
        mg.graph.forward(1);
        return mg.graph.loss();
      };
      run();
      if (mg.graph.min_relu_input_magnitude() < 8e-3) continue;  // kink redraw
      auto res = fdcheck::check(mg.graph, m.parameters(kind), run);
      INFO("kind ", to_string(kind), " worst ", res.worst, " rel ",
           res.max_rel_diff);
      CHECK(res.pass(1e-4));
      break;
    }
  }
}

TEST_CASE("checkpoint round trip is byte-identical") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "bcfnet_ckpt_test";
  fs::create_directories(dir);
  auto cfg = tiny_config(4, 6, 2, true, true);
  BCFNetModel m;
  m.config = cfg;
  m.init(5);
  randomize_params(m, 77, 0.3);

  auto p1 = (dir / "a.ckpt").string();
  auto p2 = (dir / "b.ckpt").string();
  save_checkpoint(m, ModelKind::Fused, p1);
  ModelKind kind;
  BCFNetModel loaded = load_checkpoint(p1, &kind);
  CHECK(kind == ModelKind::Fused);
  save_checkpoint(loaded, ModelKind::Fused, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), {});
  std::string c2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(c1 == c2);
  CHECK(!c1.empty());

  SUBCASE("truncated data is rejected and leaves the model untouched") {
    auto p3 = (dir / "trunc.ckpt").string();
    std::ofstream out(p3, std::ios::binary);
    out.write(c1.data(), static_cast<std::streamsize>(c1.size() - 10));
    out.close();
    BCFNetModel victim;
    victim.config = cfg;
    victim.init(6);
    auto before = victim.fusion_out.value.data;
    CHECK_THROWS_AS(load_checkpoint_into(victim, ModelKind::Fused, p3),
                    CheckpointError);
    CHECK(victim.fusion_out.value.data == before);
  }

  SUBCASE("cross-config load names the offending parameter") {
    BCFNetModel big;
    big.config = tiny_config(4, 6, 4, true, true);
    big.init(7);
    try {
      load_checkpoint_into(big, ModelKind::Fused, p1);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      // the first factor-dependent parameter is named in the message
      CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
      CHECK(std::string(e.what()).find("rl.user_w1") != std::string::npos);
    }
  }
}

TEST_CASE("pretrained initialization averages the tower logits") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "bcfnet_pretrain_test";
  fs::create_directories(dir);
  auto cfg = tiny_config(5, 7, 3, true, true);

  auto make_and_save = [&](ModelKind kind, uint64_t seed, const std::string& name) {
    BCFNetModel m;
    m.config = cfg;
    m.init(seed);
    randomize_params(m, seed * 3, 0.4);
    auto path = (dir / name).string();
    save_checkpoint(m, kind, path);
    return std::pair{m, path};
  };
  auto [rl_model, rl_path] = make_and_save(ModelKind::Rl, 31, "rl.ckpt");
  auto [ml_model, ml_path] = make_and_save(ModelKind::Ml, 32, "ml.ckpt");
  auto [bm_model, bm_path] = make_and_save(ModelKind::Bm, 33, "bm.ckpt");

  BCFNetModel fused;
  fused.config = cfg;
  fused.init(99);
  init_from_pretrained(fused, rl_path, ml_path, bm_path);

  std::vector<int> uh{0, 4, 6}, ih{2, 3};
  double zrl = logit_of(forward_rl(rl_model, uh, ih).y_hat);
  double zml = logit_of(forward_ml(ml_model, uh, ih).y_hat);
  double zbm = logit_of(forward_bm(bm_model, uh, ih).y_hat);
  double zf = logit_of(forward_fused(fused, uh, ih).y_hat);
  CHECK(zf == doctest::Approx((zrl + zml + zbm) / 3.0).epsilon(1e-4));

  SUBCASE("with alpha=1 and the other blocks zeroed, fusion reproduces bm") {
    init_from_pretrained(fused, rl_path, ml_path, bm_path, 1.0);
    const int f = cfg.factors;
    for (int i = 0; i < f; ++i) {
      fused.fusion_out.value.data[static_cast<size_t>(i)] = 0.0f;          // rl
      fused.fusion_out.value.data[static_cast<size_t>(2 * f + i)] = 0.0f;  // ml
    }
    float got = forward_fused(fused, uh, ih).y_hat;
    float want = forward_bm(bm_model, uh, ih).y_hat;
    CHECK(got == want);
  }
}
