#include "bcfnet/models.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bcfnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Rl: return "rl";
    case ModelKind::Ml: return "ml";
    case ModelKind::Bm: return "bm";
    case ModelKind::Fused: return "fused";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "rl") return ModelKind::Rl;
  if (s == "ml") return ModelKind::Ml;
  if (s == "bm") return ModelKind::Bm;
  if (s == "fused") return ModelKind::Fused;
  throw ConfigError("unknown model kind '" + s + "'");
}

template <typename T>
void BCFNetModelT<T>::init(uint64_t seed) {
  config.validate();
  const int M = config.num_users, N = config.num_items;
  const int f = config.factors, l = config.l(), h = config.h(), r = config.r();
  uint64_t ordinal = 0;
  auto next_seed = [&] { return mix64(seed, ++ordinal); };
  // Embedding/encoder tables and the attention layers start at N(0, 0.01).
  // The deep layers use fan-in-scaled Gaussians: with 0.01 everywhere the
  // product of the two MLP pathways starts around 1e-6 and the towers sit
  // at the base-rate equilibrium without ever receiving usable gradient.
  auto mk = [&](ParameterT<T>& p, const char* name, std::vector<int> shape,
                double std = 0.01) {
    p.name = name;
    p.init_gaussian(std::move(shape), next_seed(), 0.0, std);
  };
  auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  auto xavier = [](int fan_in) { return std::sqrt(1.0 / fan_in); };

  mk(rl.user_encoder, "rl.user_encoder", {N, l});
  mk(rl.item_encoder, "rl.item_encoder", {M, l});
  if (config.attention) {
    rl.user_attention.init(l, "rl.user_attention", next_seed());
    rl.item_attention.init(l, "rl.item_attention", next_seed());
  }
  const int rl_in = config.attention ? 2 * l : l;
  mk(rl.user_w1, "rl.user_w1", {rl_in, 2 * f}, he(rl_in));
  mk(rl.user_b1, "rl.user_b1", {2 * f});
  mk(rl.user_w2, "rl.user_w2", {2 * f, f}, he(2 * f));
  mk(rl.user_b2, "rl.user_b2", {f});
  mk(rl.item_w1, "rl.item_w1", {rl_in, 2 * f}, he(rl_in));
  mk(rl.item_b1, "rl.item_b1", {2 * f});
  mk(rl.item_w2, "rl.item_w2", {2 * f, f}, he(2 * f));
  mk(rl.item_b2, "rl.item_b2", {f});
  mk(rl.out_weights, "rl.out_weights", {f, 1}, xavier(f));

  mk(ml.user_embedding, "ml.user_embedding", {N, h});
  mk(ml.item_embedding, "ml.item_embedding", {M, h});
  if (config.attention) ml.attention.init(2 * h, "ml.attention", next_seed());
  const int ml_in = config.attention ? 4 * h : 2 * h;
  mk(ml.w1, "ml.w1", {ml_in, 4 * f}, he(ml_in));
  mk(ml.b1, "ml.b1", {4 * f});
  mk(ml.w2, "ml.w2", {4 * f, 2 * f}, he(4 * f));
  mk(ml.b2, "ml.b2", {2 * f});
  mk(ml.w3, "ml.w3", {2 * f, f}, he(2 * f));
  mk(ml.b3, "ml.b3", {f});
  mk(ml.out_weights, "ml.out_weights", {f, 1}, xavier(f));

  if (config.balance) {
    mk(bm.user_embedding, "bm.user_embedding", {N, r});
    mk(bm.item_embedding, "bm.item_embedding", {M, r});
    mk(bm.out_weights, "bm.out_weights", {r, 1}, xavier(r));
  }

  mk(fusion_out, "fusion.out", {config.fusion_dim(), 1}, xavier(config.fusion_dim()));
}

template <typename T>
static void append_rl(BCFNetModelT<T>& m, bool with_out,
                      std::vector<ParameterT<T>*>& out) {
  out.push_back(&m.rl.user_encoder);
  out.push_back(&m.rl.item_encoder);
  if (m.config.attention) {
    out.push_back(&m.rl.user_attention.W);
    out.push_back(&m.rl.user_attention.b);
    out.push_back(&m.rl.item_attention.W);
    out.push_back(&m.rl.item_attention.b);
  }
  for (auto* p : {&m.rl.user_w1, &m.rl.user_b1, &m.rl.user_w2, &m.rl.user_b2,
                  &m.rl.item_w1, &m.rl.item_b1, &m.rl.item_w2, &m.rl.item_b2})
    out.push_back(p);
  if (with_out) out.push_back(&m.rl.out_weights);
}

template <typename T>
static void append_ml(BCFNetModelT<T>& m, bool with_out,
                      std::vector<ParameterT<T>*>& out) {
  out.push_back(&m.ml.user_embedding);
  out.push_back(&m.ml.item_embedding);
  if (m.config.attention) {
    out.push_back(&m.ml.attention.W);
    out.push_back(&m.ml.attention.b);
  }
  for (auto* p : {&m.ml.w1, &m.ml.b1, &m.ml.w2, &m.ml.b2, &m.ml.w3, &m.ml.b3})
    out.push_back(p);
  if (with_out) out.push_back(&m.ml.out_weights);
}

template <typename T>
static void append_bm(BCFNetModelT<T>& m, bool with_out,
                      std::vector<ParameterT<T>*>& out) {
  if (!m.config.balance)
    throw ConfigError("balance module is disabled in this configuration");
  out.push_back(&m.bm.user_embedding);
  out.push_back(&m.bm.item_embedding);
  if (with_out) out.push_back(&m.bm.out_weights);
}

template <typename T>
std::vector<ParameterT<T>*> BCFNetModelT<T>::parameters(ModelKind kind) {
  std::vector<ParameterT<T>*> out;
  switch (kind) {
    case ModelKind::Rl: append_rl(*this, true, out); break;
    case ModelKind::Ml: append_ml(*this, true, out); break;
    case ModelKind::Bm: append_bm(*this, true, out); break;
    case ModelKind::Fused:
      append_rl(*this, false, out);
      if (config.balance) append_bm(*this, false, out);
      append_ml(*this, false, out);
      out.push_back(&fusion_out);
      break;
  }
  return out;
}

template <typename T>
std::vector<ParameterT<T>*> BCFNetModelT<T>::checkpoint_parameters(ModelKind kind) {
  if (kind == ModelKind::Fused) return parameters(ModelKind::Fused);
  return parameters(kind);
}

template <typename T>
ModelGraphT<T> build_model_graph(BCFNetModelT<T>& m, ModelKind kind,
                                 bool with_bce_loss) {
  m.config.validate();
  ModelGraphT<T> mg;
  GraphT<T>& g = mg.graph;
  mg.user_indices = g.add_index_input("user_history");
  mg.item_indices = g.add_index_input("item_history");

  auto rl_branch = [&] {
    auto side = [&](ParameterT<T>& enc, FeedForwardAttentionT<T>& att,
                    ParameterT<T>& w1, ParameterT<T>& b1, ParameterT<T>& w2,
                    ParameterT<T>& b2, int idx_node, const std::string& tag) {
      int a0 = g.add_embedding_sum(idx_node, &enc, tag + ".encoder");
      int x = a0;
      if (m.config.attention) {
        auto att_nodes = add_feed_forward_attention(g, a0, att, tag + ".attention");
        x = g.add_concat(a0, att_nodes.decoded, tag + ".concat");
      }
      int h1 = g.add_relu(g.add_dense(x, &w1, &b1, tag + ".w1"), tag + ".h1");
      return g.add_relu(g.add_dense(h1, &w2, &b2, tag + ".w2"), tag + ".h2");
    };
    int pu = side(m.rl.user_encoder, m.rl.user_attention, m.rl.user_w1,
                  m.rl.user_b1, m.rl.user_w2, m.rl.user_b2, mg.user_indices,
                  "rl.user");
    int qi = side(m.rl.item_encoder, m.rl.item_attention, m.rl.item_w1,
                  m.rl.item_b1, m.rl.item_w2, m.rl.item_b2, mg.item_indices,
                  "rl.item");
    mg.a_rl = g.add_mul(pu, qi, "rl.predictive");
    return mg.a_rl;
  };

  auto ml_branch = [&] {
    int pu = g.add_embedding_sum(mg.user_indices, &m.ml.user_embedding,
                                 "ml.user_embedding");
    int qi = g.add_embedding_sum(mg.item_indices, &m.ml.item_embedding,
                                 "ml.item_embedding");
    int a0 = g.add_concat(pu, qi, "ml.pair");
    int x = a0;
    if (m.config.attention) {
      auto att_nodes = add_feed_forward_attention(g, a0, m.ml.attention, "ml.attention");
      x = g.add_concat(a0, att_nodes.decoded, "ml.concat");
    }
    int h1 = g.add_relu(g.add_dense(x, &m.ml.w1, &m.ml.b1, "ml.w1"), "ml.h1");
    int h2 = g.add_relu(g.add_dense(h1, &m.ml.w2, &m.ml.b2, "ml.w2"), "ml.h2");
    mg.a_ml = g.add_relu(g.add_dense(h2, &m.ml.w3, &m.ml.b3, "ml.w3"), "ml.h3");
    return mg.a_ml;
  };

  auto bm_branch = [&] {
    int pu = g.add_embedding_sum(mg.user_indices, &m.bm.user_embedding,
                                 "bm.user_embedding");
    int qi = g.add_embedding_sum(mg.item_indices, &m.bm.item_embedding,
                                 "bm.item_embedding");
    mg.a_bm = g.add_mul(pu, qi, "bm.predictive");
    return mg.a_bm;
  };

  int predictive = -1;
  ParameterT<T>* out_w = nullptr;
  switch (kind) {
    case ModelKind::Rl:
      predictive = rl_branch();
      out_w = &m.rl.out_weights;
      break;
    case ModelKind::Ml:
      predictive = ml_branch();
      out_w = &m.ml.out_weights;
      break;
    case ModelKind::Bm:
      if (!m.config.balance)
        throw ConfigError("balance module is disabled in this configuration");
      predictive = bm_branch();
      out_w = &m.bm.out_weights;
      break;
    case ModelKind::Fused: {
      int a_rl = rl_branch();
      int joint = a_rl;
      if (m.config.balance) joint = g.add_concat(joint, bm_branch(), "fusion.rl_bm");
      joint = g.add_concat(joint, ml_branch(), "fusion.joint");
      predictive = joint;
      out_w = &m.fusion_out;
      break;
    }
  }
  mg.logit = g.add_dense(predictive, out_w, nullptr, "output.logit");
  mg.yhat = g.add_sigmoid(mg.logit, "output.yhat");
  if (with_bce_loss) g.set_loss_bce(mg.yhat);
  return mg;
}

template <typename T>
static void run_single(ModelGraphT<T>& mg, std::span<const int> user_hist,
                       std::span<const int> item_hist, IndexBatch& ub,
                       IndexBatch& ib) {
  ub.clear();
  ib.clear();
  ub.push(user_hist);
  ib.push(item_hist);
  mg.graph.bind_indices(mg.user_indices, &ub);
  mg.graph.bind_indices(mg.item_indices, &ib);
  mg.graph.forward(1);
}

template <typename T>
static TowerOutput<T> forward_tower(BCFNetModelT<T>& model, ModelKind kind,
                                    std::span<const int> user_hist,
                                    std::span<const int> item_hist) {
  ModelGraphT<T> mg = build_model_graph(model, kind, false);
  IndexBatch ub, ib;
  run_single(mg, user_hist, item_hist, ub, ib);
  int pred_node = kind == ModelKind::Rl   ? mg.a_rl
                  : kind == ModelKind::Ml ? mg.a_ml
                                          : mg.a_bm;
  auto a = mg.graph.activations(pred_node);
  TowerOutput<T> out;
  out.predictive.assign(a.begin(), a.end());
  out.y_hat = mg.graph.activations(mg.yhat)[0];
  return out;
}

template <typename T>
TowerOutput<T> forward_rl(BCFNetModelT<T>& model, std::span<const int> user_hist,
                          std::span<const int> item_hist) {
  return forward_tower(model, ModelKind::Rl, user_hist, item_hist);
}
template <typename T>
TowerOutput<T> forward_ml(BCFNetModelT<T>& model, std::span<const int> user_hist,
                          std::span<const int> item_hist) {
  return forward_tower(model, ModelKind::Ml, user_hist, item_hist);
}
template <typename T>
TowerOutput<T> forward_bm(BCFNetModelT<T>& model, std::span<const int> user_hist,
                          std::span<const int> item_hist) {
  return forward_tower(model, ModelKind::Bm, user_hist, item_hist);
}

template <typename T>
FusedOutput<T> forward_fused(BCFNetModelT<T>& model,
                             std::span<const int> user_hist,
                             std::span<const int> item_hist) {
  ModelGraphT<T> mg = build_model_graph(model, ModelKind::Fused, false);
  IndexBatch ub, ib;
  run_single(mg, user_hist, item_hist, ub, ib);
  FusedOutput<T> out;
  auto rl = mg.graph.activations(mg.a_rl);
  out.a_rl.assign(rl.begin(), rl.end());
  auto ml = mg.graph.activations(mg.a_ml);
  out.a_ml.assign(ml.begin(), ml.end());
  if (model.config.balance) {
    auto bm = mg.graph.activations(mg.a_bm);
    out.a_bm.assign(bm.begin(), bm.end());
  }
  out.y_hat = mg.graph.activations(mg.yhat)[0];
  return out;
}

// ---------------------------------------------------------------------
// Checkpoints

static void write_config(std::ostream& os, const ModelConfig& c) {
  os << "users " << c.num_users << " items " << c.num_items << "\n"
     << "factors " << c.factors << "\n"
     << "rl_encoding " << c.l() << "\n"
     << "ml_embedding " << c.h() << "\n"
     << "bm_embedding " << c.r() << "\n"
     << "attention " << (c.attention ? 1 : 0) << "\n"
     << "balance " << (c.balance ? 1 : 0) << "\n";
}

void save_checkpoint(BCFNetModel& model, ModelKind kind,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  auto params = model.checkpoint_parameters(kind);
  os << "bcfnet-checkpoint 1\n";
  os << "kind " << to_string(kind) << "\n";
  write_config(os, model.config);
  os << "params " << params.size() << "\n";
  for (auto* p : params) {
    os << p->name << " " << p->value.shape.size();
    for (int d : p->value.shape) os << " " << d;
    os << "\n";
  }
  os << "data\n";
  for (auto* p : params) {
    os.write(reinterpret_cast<const char*>(p->value.ptr()),
             static_cast<std::streamsize>(p->size() * sizeof(float)));
  }
  if (!os) throw CheckpointError("failed writing checkpoint: " + path);
}

namespace {

struct CheckpointHeader {
  ModelKind kind;
  ModelConfig config;
  std::vector<std::pair<std::string, std::vector<int>>> entries;
  std::streampos data_start;
};

CheckpointHeader read_header(std::ifstream& is, const std::string& path) {
  CheckpointHeader h;
  std::string line;
  auto next = [&]() -> std::string& {
    if (!std::getline(is, line))
      throw CheckpointError("truncated checkpoint manifest: " + path);
    return line;
  };
  if (next() != "bcfnet-checkpoint 1")
    throw CheckpointError("not a bcfnet checkpoint: " + path);
  std::string tag, kind_name;
  {
    std::istringstream ls(next());
    ls >> tag >> kind_name;
    if (tag != "kind") throw CheckpointError("malformed checkpoint header: " + path);
    h.kind = model_kind_from_string(kind_name);
  }
  auto& c = h.config;
  auto read_kv = [&](const char* key, auto& slot) {
    std::istringstream ls(next());
    std::string k;
    ls >> k >> slot;
    if (k != key || !ls)
      throw CheckpointError(std::string("malformed checkpoint field '") + key +
                            "': " + path);
  };
  {
    std::istringstream ls(next());
    std::string k1, k2;
    ls >> k1 >> c.num_users >> k2 >> c.num_items;
    if (k1 != "users" || k2 != "items" || !ls)
      throw CheckpointError("malformed checkpoint dims: " + path);
  }
  read_kv("factors", c.factors);
  read_kv("rl_encoding", c.rl_encoding);
  read_kv("ml_embedding", c.ml_embedding);
  read_kv("bm_embedding", c.bm_embedding);
  int flag = 0;
  read_kv("attention", flag);
  c.attention = flag != 0;
  read_kv("balance", flag);
  c.balance = flag != 0;
  size_t count = 0;
  read_kv("params", count);
  for (size_t i = 0; i < count; ++i) {
    std::istringstream ls(next());
    std::string name;
    int ndim = 0;
    ls >> name >> ndim;
    std::vector<int> shape(static_cast<size_t>(ndim));
    for (int& d : shape) ls >> d;
    if (!ls || ndim <= 0)
      throw CheckpointError("malformed parameter entry in " + path);
    h.entries.emplace_back(std::move(name), std::move(shape));
  }
  if (next() != "data")
    throw CheckpointError("missing data section in " + path);
  h.data_start = is.tellg();
  return h;
}

// Validates names/shapes and reads every array before committing any of
// them, so a corrupt or truncated file never leaves a partially loaded model.
void read_arrays(std::ifstream& is, const CheckpointHeader& h,
                 std::vector<Parameter*>& params, const std::string& path) {
  if (params.size() != h.entries.size())
    throw CheckpointError("checkpoint " + path + " has " +
                          std::to_string(h.entries.size()) +
                          " parameters, model expects " +
                          std::to_string(params.size()));
  std::vector<std::vector<float>> staged(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, shape] = h.entries[i];
    Parameter* p = params[i];
    if (p->name != name)
      throw CheckpointError("checkpoint parameter '" + name +
                            "' does not match model parameter '" + p->name +
                            "' in " + path);
    if (p->value.shape != shape) {
      std::string got = "(", want = "(";
      for (int d : shape) got += std::to_string(d) + ",";
      for (int d : p->value.shape) want += std::to_string(d) + ",";
      throw CheckpointError("shape mismatch for parameter '" + name + "': " +
                            got + ") in checkpoint vs " + want + ") in model");
    }
    staged[i].resize(static_cast<size_t>(p->size()));
    is.read(reinterpret_cast<char*>(staged[i].data()),
            static_cast<std::streamsize>(staged[i].size() * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(staged[i].size() * sizeof(float)))
      throw CheckpointError("truncated checkpoint data for '" + name + "' in " +
                            path);
  }
  for (size_t i = 0; i < params.size(); ++i)
    params[i]->value.data = std::move(staged[i]);
}

}  // namespace

void load_checkpoint_into(BCFNetModel& model, ModelKind kind,
                          const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  CheckpointHeader h = read_header(is, path);
  if (h.kind != kind)
    throw CheckpointError("checkpoint " + path + " holds a '" +
                          to_string(h.kind) + "' model, expected '" +
                          to_string(kind) + "'");
  auto params = model.checkpoint_parameters(kind);
  read_arrays(is, h, params, path);
}

BCFNetModel load_checkpoint(const std::string& path, ModelKind* kind_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  CheckpointHeader h = read_header(is, path);
  BCFNetModel model;
  model.config = h.config;
  model.init(0);
  auto params = model.checkpoint_parameters(h.kind);
  read_arrays(is, h, params, path);
  if (kind_out) *kind_out = h.kind;
  return model;
}

void init_from_pretrained(BCFNetModel& model, const std::string& rl_ckpt,
                          const std::string& ml_ckpt, const std::string& bm_ckpt,
                          double alpha) {
  load_checkpoint_into(model, ModelKind::Rl, rl_ckpt);
  load_checkpoint_into(model, ModelKind::Ml, ml_ckpt);
  if (model.config.balance) load_checkpoint_into(model, ModelKind::Bm, bm_ckpt);

  // Fusion weights: the concatenation order is [rl; bm; ml].
  const int f = model.config.factors;
  const float a = static_cast<float>(alpha);
  float* w = model.fusion_out.value.ptr();
  const float* rl_w = model.rl.out_weights.value.ptr();
  const float* ml_w = model.ml.out_weights.value.ptr();
  int pos = 0;
  for (int i = 0; i < f; ++i) w[pos++] = a * rl_w[i];
  if (model.config.balance) {
    const float* bm_w = model.bm.out_weights.value.ptr();
    for (int i = 0; i < f; ++i) w[pos++] = a * bm_w[i];
  }
  for (int i = 0; i < f; ++i) w[pos++] = a * ml_w[i];
  model.fusion_out.zero_grad();
}

// Explicit instantiations: float for production, double for the
// finite-difference and oracle test paths.
template struct BCFNetModelT<float>;
template struct BCFNetModelT<double>;
template ModelGraphT<float> build_model_graph(BCFNetModelT<float>&, ModelKind, bool);
template ModelGraphT<double> build_model_graph(BCFNetModelT<double>&, ModelKind, bool);
template TowerOutput<float> forward_rl(BCFNetModelT<float>&, std::span<const int>, std::span<const int>);
template TowerOutput<double> forward_rl(BCFNetModelT<double>&, std::span<const int>, std::span<const int>);
template TowerOutput<float> forward_ml(BCFNetModelT<float>&, std::span<const int>, std::span<const int>);
template TowerOutput<double> forward_ml(BCFNetModelT<double>&, std::span<const int>, std::span<const int>);
template TowerOutput<float> forward_bm(BCFNetModelT<float>&, std::span<const int>, std::span<const int>);
template TowerOutput<double> forward_bm(BCFNetModelT<double>&, std::span<const int>, std::span<const int>);
template FusedOutput<float> forward_fused(BCFNetModelT<float>&, std::span<const int>, std::span<const int>);
template FusedOutput<double> forward_fused(BCFNetModelT<double>&, std::span<const int>, std::span<const int>);

}  // namespace bcfnet
