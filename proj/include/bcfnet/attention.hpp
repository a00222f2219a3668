#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bcfnet/diffcore.hpp"

namespace bcfnet {

// Feed-forward attention: alpha = softmax(W^T v_e + b), v_d = alpha (*) v_e.
// W is square over the encoder dimension m.
template <typename T>
struct FeedForwardAttentionT {
  ParameterT<T> W;
  ParameterT<T> b;
  int m = 0;

  void init(int dim, const std::string& name_prefix, uint64_t seed) {
    m = dim;
    W.name = name_prefix + ".W";
    W.init_gaussian({dim, dim}, mix64(seed, 1));
    b.name = name_prefix + ".b";
    b.init_gaussian({dim}, mix64(seed, 2));
  }
};

using FeedForwardAttention = FeedForwardAttentionT<float>;

struct AttentionNodes {
  int alpha = -1;
  int decoded = -1;  // v_d
};

template <typename T>
AttentionNodes add_feed_forward_attention(GraphT<T>& g, int v_e,
                                          FeedForwardAttentionT<T>& att,
                                          const std::string& label) {
  if (g.dim(v_e) != att.m)
    throw ShapeError(label + ": encoder dim " + std::to_string(g.dim(v_e)) +
                     " != attention dim " + std::to_string(att.m));
  AttentionNodes out;
  int logits = g.add_dense(v_e, &att.W, &att.b, label + ".logits");
  out.alpha = g.add_softmax(logits, label + ".alpha");
  out.decoded = g.add_mul(out.alpha, v_e, label + ".decoded");
  return out;
}

// Single-vector convenience evaluation of the layer; returns (v_d, alpha).
template <typename T>
std::pair<std::vector<T>, std::vector<T>> attend(
    FeedForwardAttentionT<T>& att, std::span<const T> v_e) {
  if (static_cast<int>(v_e.size()) != att.m)
    throw ShapeError("attend: input length " + std::to_string(v_e.size()) +
                     " != attention dim " + std::to_string(att.m));
  GraphT<T> g;
  int in = g.add_input(att.m, "v_e");
  AttentionNodes nodes = add_feed_forward_attention(g, in, att, "attention");
  g.bind_input(in, v_e.data());
  g.forward(1);
  auto vd = g.activations(nodes.decoded);
  auto alpha = g.activations(nodes.alpha);
  return {std::vector<T>(vd.begin(), vd.end()),
          std::vector<T>(alpha.begin(), alpha.end())};
}

}  // namespace bcfnet
