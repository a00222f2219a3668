#include "bcfnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include "bcfnet/rng.hpp"

namespace bcfnet {

const char* to_string(Optimizer o) {
  return o == Optimizer::Adam ? "adam" : "sgd";
}

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return Optimizer::Adam;
  if (s == "sgd") return Optimizer::Sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

namespace {

constexpr uint64_t kShuffleSalt = 0x9c0ffee1;

void shuffle_indices(std::vector<size_t>& idx, uint64_t seed) {
  Pcg32 rng(seed);
  for (size_t i = idx.size(); i > 1; --i) {
    uint32_t j = rng.bounded(static_cast<uint32_t>(i));
    std::swap(idx[i - 1], idx[static_cast<size_t>(j)]);
  }
}

std::string checkpoint_name(const TrainConfig& cfg, ModelKind kind) {
  std::string base = cfg.tag.empty() ? "model" : cfg.tag;
  return cfg.out_dir + "/" + base + "." + to_string(kind) + ".best.ckpt";
}

}  // namespace

TrainRun train(BCFNetModel& model, ModelKind kind, const SplitDataset& split,
               const TrainConfig& cfg) {
  cfg.validate();
  if (model.config.num_users != split.train.num_users ||
      model.config.num_items != split.train.num_items)
    throw ConfigError("train: model is sized " +
                      std::to_string(model.config.num_users) + "x" +
                      std::to_string(model.config.num_items) +
                      " but the split is " +
                      std::to_string(split.train.num_users) + "x" +
                      std::to_string(split.train.num_items));

  ModelGraphT<float> mg = build_model_graph(model, kind, true);
  auto params = model.parameters(kind);
  const InteractionMatrix& train_m = split.train;

  TrainRun run;
  run.checkpoint_path = checkpoint_name(cfg, kind);
  int64_t adam_t = 0;
  IndexBatch user_batch, item_batch;
  std::vector<float> labels;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    TrainingInstances inst =
        sample_training_instances(split, cfg.rho, mix64(cfg.seed, epoch), cfg.log);
    std::vector<size_t> order(inst.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_indices(order, mix64(mix64(cfg.seed, kShuffleSalt), epoch));

    double loss_sum = 0.0;
    size_t done = 0;
    while (done < order.size()) {
      const size_t take =
          std::min(static_cast<size_t>(cfg.batch_size), order.size() - done);
      user_batch.clear();
      item_batch.clear();
      labels.clear();
      for (size_t b = 0; b < take; ++b) {
        const size_t at = order[done + b];
        user_batch.push(train_m.row(inst.users[at]));
        item_batch.push(train_m.col(inst.items[at]));
        labels.push_back(inst.labels[at]);
      }
      mg.graph.bind_indices(mg.user_indices, &user_batch);
      mg.graph.bind_indices(mg.item_indices, &item_batch);
      mg.graph.bind_targets(labels.data());
      mg.graph.forward(static_cast<int>(take));
      double batch_loss = mg.graph.loss();
      if (!std::isfinite(batch_loss))
        throw StateError("training diverged: non-finite loss in epoch " +
                         std::to_string(epoch) + " after " +
                         std::to_string(done) + " instances");
      loss_sum += batch_loss;
      mg.graph.backward();
      if (cfg.optimizer == Optimizer::Adam) {
        adam_step<float>(params, cfg.lr, 0.9, 0.999, 1e-8, ++adam_t);
      } else {
        sgd_step<float>(params, cfg.lr);
      }
      done += take;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_bce = loss_sum / static_cast<double>(inst.size());

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      EvalReport report = evaluate_model(model, kind, split, cfg.eval_k);
      rec.hr = report.hr;
      rec.ndcg = report.ndcg;
      const bool better =
          run.best_epoch < 0 || rec.hr > run.best_hr ||
          (rec.hr == run.best_hr && rec.ndcg > run.best_ndcg);
      if (better) {
        run.best_epoch = epoch;
        run.best_hr = rec.hr;
        run.best_ndcg = rec.ndcg;
        save_checkpoint(model, kind, run.checkpoint_path);
      }
    }

    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
    run.records.push_back(rec);
    if (cfg.log) {
      *cfg.log << "[" << to_string(kind) << "] epoch " << epoch << "/"
               << cfg.epochs << "  bce " << rec.mean_bce;
      if (rec.hr >= 0)
        *cfg.log << "  hr@" << cfg.eval_k << " " << rec.hr << "  ndcg@"
                 << cfg.eval_k << " " << rec.ndcg;
      *cfg.log << "  (" << rec.seconds << "s)\n";
      cfg.log->flush();
    }
  }
  return run;
}

PretrainedCheckpoints pretrain_all(const SplitDataset& split,
                                   const ModelConfig& model_cfg,
                                   const TrainConfig& cfg) {
  cfg.validate();
  PretrainedCheckpoints out;
  auto pretrain_one = [&](ModelKind kind, std::string& path, TrainRun& run) {
    BCFNetModel model;
    model.config = model_cfg;
    model.init(mix64(cfg.seed, 1000 + static_cast<uint64_t>(kind)));
    TrainConfig sub = cfg;
    sub.optimizer = Optimizer::Adam;
    sub.epochs = cfg.pretrain_epochs;
    if (kind == ModelKind::Bm && cfg.pretrain_epochs_bm > 0)
      sub.epochs = cfg.pretrain_epochs_bm;
    run = train(model, kind, split, sub);
    path = run.checkpoint_path;
  };
  pretrain_one(ModelKind::Rl, out.rl, out.rl_run);
  pretrain_one(ModelKind::Ml, out.ml, out.ml_run);
  if (model_cfg.balance) pretrain_one(ModelKind::Bm, out.bm, out.bm_run);
  return out;
}

TrainRun train_with_pretraining(BCFNetModel& model, const SplitDataset& split,
                                const ModelConfig& model_cfg,
                                const TrainConfig& cfg,
                                PretrainedCheckpoints* pretrained) {
  PretrainedCheckpoints ckpts = pretrain_all(split, model_cfg, cfg);
  model.config = model_cfg;
  model.init(mix64(cfg.seed, 2024));
  init_from_pretrained(model, ckpts.rl, ckpts.ml, ckpts.bm);
  if (pretrained) *pretrained = std::move(ckpts);

  TrainConfig fine = cfg;
  fine.optimizer = Optimizer::Sgd;
  fine.lr = cfg.finetune_lr;
  return train(model, ModelKind::Fused, split, fine);
}

void write_train_csv(const TrainRun& run, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write training curve: " + path);
  os << "epoch,loss,hr10,ndcg10,seconds\n";
  for (const auto& r : run.records) {
    os << r.epoch << "," << r.mean_bce << ",";
    if (r.hr >= 0) os << r.hr;
    os << ",";
    if (r.ndcg >= 0) os << r.ndcg;
    os << "," << r.seconds << "\n";
  }
}

void write_train_summary(const TrainRun& run, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write training summary: " + path);
  os << "epochs " << run.records.size() << "\n"
     << "best_epoch " << run.best_epoch << "\n"
     << "best_hr10 " << run.best_hr << "\n"
     << "best_ndcg10 " << run.best_ndcg << "\n"
     << "checkpoint " << run.checkpoint_path << "\n";
}

}  // namespace bcfnet
