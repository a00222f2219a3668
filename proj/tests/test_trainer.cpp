#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "bcfnet/trainer.hpp"
#include "synthetic.hpp"

using namespace bcfnet;
namespace fs = std::filesystem;

namespace {

std::string work_dir(const std::string& leaf) {
  auto dir = fs::temp_directory_path() / "bcfnet_trainer_test" / leaf;
  fs::create_directories(dir);
  return dir.string();
}

SplitDataset small_split(uint64_t seed = 4) {
  auto raw = testgen::make_synthetic_ratings(24, 64, 8, 4, seed);
  auto m = binarize(raw);
  return leave_one_out_split(m, raw, 20, seed);
}

ModelConfig small_config(const SplitDataset& split, int f = 4) {
  ModelConfig cfg;
  cfg.num_users = split.train.num_users;
  cfg.num_items = split.train.num_items;
  cfg.factors = f;
  return cfg;
}

}  // namespace

TEST_CASE("bm overfits a tiny dataset") {
  // Two mirrored users over two items: each keeps one train positive and
  // rho=1 forces the held-out item as the negative every epoch. (A single
  // 1x2 user cannot work here: its lone negative has an empty train column,
  // so the balance module is pinned at 0.5 and mean BCE bottoms out at
  // (0 + log 2)/2 = 0.347.)
  RawRatings raw;
  raw.records.push_back({"u0", "a", 1.0, 1});
  raw.records.push_back({"u0", "b", 1.0, 9});
  raw.records.push_back({"u1", "b", 1.0, 1});
  raw.records.push_back({"u1", "a", 1.0, 9});
  auto m = binarize(raw);
  auto split = leave_one_out_split(m, raw, 0, 1);
  REQUIRE(split.train.interaction_count() == 2);

  BCFNetModel model;
  model.config = small_config(split, 4);
  model.init(2);

  TrainConfig cfg;
  cfg.rho = 1;
  cfg.lr = 0.01;
  cfg.epochs = 500;
  cfg.eval_every = 1000;  // metrics only on the final epoch
  cfg.out_dir = work_dir("overfit");
  auto run = train(model, ModelKind::Bm, split, cfg);

  REQUIRE(run.records.size() == 500);
  CHECK(run.records.back().mean_bce < 0.2);
  for (size_t e = 50; e < run.records.size(); e += 50)
    CHECK(run.records[e].mean_bce < run.records[e - 50].mean_bce);

  // the forced negative really is the only unobserved candidate
  auto inst = sample_training_instances(split, 1, 12345);
  REQUIRE(inst.size() == 4);
  const int u0 = split.train.user_index.at("u0");
  for (size_t k = 0; k < inst.size(); ++k)
    if (inst.labels[k] == 0.0f && inst.users[k] == u0)
      CHECK(inst.items[k] == split.test_items[static_cast<size_t>(u0)]);
}

TEST_CASE("config validation") {
  auto split = small_split();
  BCFNetModel model;
  model.config = small_config(split);
  model.init(3);
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(model, ModelKind::Bm, split, cfg), ConfigError);
  cfg.epochs = 1;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(train(model, ModelKind::Bm, split, cfg), ConfigError);
  cfg.lr = 0.1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(model, ModelKind::Bm, split, cfg), ConfigError);

  // model/split size mismatch
  TrainConfig ok;
  ok.out_dir = work_dir("mismatch");
  BCFNetModel wrong;
  wrong.config = small_config(split);
  wrong.config.num_items += 1;
  wrong.init(4);
  CHECK_THROWS_AS(train(wrong, ModelKind::Bm, split, ok), ConfigError);
}

TEST_CASE("poisoned parameters abort with a diagnostic") {
  auto split = small_split();
  BCFNetModel model;
  model.config = small_config(split);
  model.init(5);
  model.bm.out_weights.value.data[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.out_dir = work_dir("nan");
  CHECK_THROWS(train(model, ModelKind::Bm, split, cfg));
}

TEST_CASE("training is deterministic given the seed") {
  auto split = small_split(11);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.05;
  cfg.rho = 2;
  cfg.seed = 1234;
  cfg.out_dir = work_dir("determinism");

  auto run_once = [&] {
    BCFNetModel model;
    model.config = small_config(split);
    model.init(99);
    return train(model, ModelKind::Fused, split, cfg);
  };
  auto a = run_once();
  auto b = run_once();
  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].mean_bce == b.records[i].mean_bce);  // bitwise
    CHECK(a.records[i].hr == b.records[i].hr);
    CHECK(a.records[i].ndcg == b.records[i].ndcg);
  }
  auto different_seed = cfg;
  different_seed.seed = 4321;
  BCFNetModel model;
  model.config = small_config(split);
  model.init(99);
  auto c = train(model, ModelKind::Fused, split, different_seed);
  CHECK(a.records[0].mean_bce != c.records[0].mean_bce);
}

TEST_CASE("best checkpoint tracks the maximum HR") {
  auto split = small_split(7);
  BCFNetModel model;
  model.config = small_config(split);
  model.init(6);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.lr = 0.02;
  cfg.out_dir = work_dir("best");
  auto run = train(model, ModelKind::Bm, split, cfg);

  double max_hr = -1.0;
  for (const auto& r : run.records)
    if (r.hr >= 0) max_hr = std::max(max_hr, r.hr);
  CHECK(run.best_hr == max_hr);
  CHECK(fs::exists(run.checkpoint_path));

  // the stored checkpoint reloads into a model of the same shape
  BCFNetModel reload;
  reload.config = model.config;
  reload.init(123);
  load_checkpoint_into(reload, ModelKind::Bm, run.checkpoint_path);
}

TEST_CASE("pretrain_all emits reloadable checkpoints for each tower") {
  auto split = small_split(15);
  auto mcfg = small_config(split);
  TrainConfig cfg;
  cfg.pretrain_epochs = 2;
  cfg.lr = 0.02;
  cfg.eval_every = 5;
  cfg.out_dir = work_dir("pretrain");
  auto ckpts = pretrain_all(split, mcfg, cfg);
  CHECK(fs::exists(ckpts.rl));
  CHECK(fs::exists(ckpts.ml));
  CHECK(fs::exists(ckpts.bm));

  // bitwise round trip through the fused model's towers
  BCFNetModel fused;
  fused.config = mcfg;
  fused.init(9);
  init_from_pretrained(fused, ckpts.rl, ckpts.ml, ckpts.bm);
  ModelKind kind;
  auto rl = load_checkpoint(ckpts.rl, &kind);
  CHECK(kind == ModelKind::Rl);
  CHECK(fused.rl.user_encoder.value.data == rl.rl.user_encoder.value.data);
  CHECK(fused.rl.item_w2.value.data == rl.rl.item_w2.value.data);

  SUBCASE("disabled balance module leaves the slot empty") {
    auto no_bm = mcfg;
    no_bm.balance = false;
    TrainConfig cfg2 = cfg;
    cfg2.out_dir = work_dir("pretrain_nobm");
    auto c2 = pretrain_all(split, no_bm, cfg2);
    CHECK(c2.bm.empty());
    CHECK(fs::exists(c2.rl));
  }
}

TEST_CASE("pretraining pipeline is reproducible end to end") {
  auto split = small_split(20);
  auto mcfg = small_config(split);
  TrainConfig cfg;
  cfg.pretrain_epochs = 2;
  cfg.epochs = 2;
  cfg.lr = 0.02;
  cfg.finetune_lr = 0.02;
  cfg.seed = 555;
  cfg.out_dir = work_dir("pipeline_a");

  BCFNetModel m1;
  auto r1 = train_with_pretraining(m1, split, mcfg, cfg);
  cfg.out_dir = work_dir("pipeline_b");
  BCFNetModel m2;
  auto r2 = train_with_pretraining(m2, split, mcfg, cfg);

  REQUIRE(r1.records.size() == r2.records.size());
  for (size_t i = 0; i < r1.records.size(); ++i) {
    CHECK(r1.records[i].mean_bce == r2.records[i].mean_bce);
    CHECK(r1.records[i].hr == r2.records[i].hr);
  }
  CHECK(m1.fusion_out.value.data == m2.fusion_out.value.data);
}

TEST_CASE("train curves serialize") {
  auto split = small_split(31);
  BCFNetModel model;
  model.config = small_config(split);
  model.init(41);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 0.01;
  cfg.out_dir = work_dir("serialize");
  auto run = train(model, ModelKind::Ml, split, cfg);
  auto csv = cfg.out_dir + "/curve.csv";
  auto summary = cfg.out_dir + "/summary.txt";
  write_train_csv(run, csv);
  write_train_summary(run, summary);
  std::ifstream is(csv);
  std::string header;
  std::getline(is, header);
  CHECK(header == "epoch,loss,hr10,ndcg10,seconds");
  int rows = 0;
  std::string line;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 2);
}
