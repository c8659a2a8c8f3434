#pragma once

#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "medk2n/core/param_ctx.hpp"
#include "medk2n/data/types.hpp"

namespace medk2n::cmim {

struct VocabularyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CmimConfig {
  int embed_dim = 32;       // joint embedding dimension
  int text_dim = 16;        // token embedding dimension
  double temperature = 0.07;
  double margin = 0.2;
};

inline std::vector<std::string> tokenize(const std::string& text) {
  std::istringstream ss(text);
  std::vector<std::string> toks;
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

// Fixed small vocabulary built from the schema's modality templates.
class Vocabulary {
 public:
  explicit Vocabulary(const data::Schema& schema) {
    std::set<std::string> uniq;
    for (const auto& m : schema)
      for (const auto& t : tokenize(m.description_text)) uniq.insert(t);
    for (const auto& t : uniq) {
      index_[t] = static_cast<int>(words_.size());
      words_.push_back(t);
    }
  }

  int size() const { return static_cast<int>(words_.size()); }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) {
      auto it = index_.find(t);
      if (it == index_.end()) throw VocabularyError("unknown token: " + t);
      ids.push_back(it->second);
    }
    if (ids.empty()) throw VocabularyError("empty description");
    return ids;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

// Small conv encoder -> global pool -> projection -> L2 normalize.
template <class T>
typename Tape<T>::Var embed_image(ParamCtx<T>& ctx, typename Tape<T>::Var image,
                                  const CmimConfig& cfg) {
  auto& tape = ctx.tape;
  auto conv = [&](typename Tape<T>::Var x, const std::string& name, int ic, int oc) {
    auto w = ctx.get("cmim.vis." + name + ".w", {oc, ic, 3, 3}, ic * 9);
    auto b = ctx.get_zero("cmim.vis." + name + ".b", {oc});
    return tape.tanh_(tape.conv2d(x, w, b, 2, 1));
  };
  auto h1 = conv(image, "c0", 1, 8);
  auto h2 = conv(h1, "c1", 8, 16);
  auto pooled = tape.gap(h2);
  auto w = ctx.get("cmim.vis.proj.w", {cfg.embed_dim, 16}, 16);
  auto b = ctx.get_zero("cmim.vis.proj.b", {cfg.embed_dim});
  return tape.l2_normalize(tape.linear(w, b, pooled));
}

// Embedding-bag (mean of token embeddings) -> projection -> L2 normalize.
template <class T>
typename Tape<T>::Var embed_text(ParamCtx<T>& ctx, const Vocabulary& vocab,
                                 const std::vector<int>& token_ids, const CmimConfig& cfg) {
  auto& tape = ctx.tape;
  auto emb = ctx.get("cmim.txt.emb", {vocab.size(), cfg.text_dim}, cfg.text_dim);
  Tensor<T> hot({vocab.size()});
  for (int id : token_ids) hot.x[static_cast<std::size_t>(id)] += T(1) / T(token_ids.size());
  auto bag = tape.matvec_t(emb, tape.constant(std::move(hot)));
  auto w = ctx.get("cmim.txt.proj.w", {cfg.embed_dim, cfg.text_dim}, cfg.text_dim);
  auto b = ctx.get_zero("cmim.txt.proj.b", {cfg.embed_dim});
  return tape.l2_normalize(tape.linear(w, b, bag));
}

// InfoNCE over aligned (v_j, t_j) rows:
//   L = mean_j -log( exp(sim(v_j,t_j)/tau) / sum_k exp(sim(v_j,t_k)/tau) )
template <class T>
typename Tape<T>::Var contrastive_loss(Tape<T>& tape,
                                       const std::vector<typename Tape<T>::Var>& vision,
                                       const std::vector<typename Tape<T>::Var>& text,
                                       double temperature) {
  if (vision.empty() || vision.size() != text.size())
    throw data::ContractError("contrastive_loss: aligned nonempty rows required");
  T inv_tau = T(1.0 / temperature);
  auto total = tape.constant_scalar(T(0));
  for (std::size_t j = 0; j < vision.size(); ++j) {
    std::vector<typename Tape<T>::Var> sims;
    for (std::size_t k = 0; k < text.size(); ++k)
      sims.push_back(tape.scale(tape.dot(vision[j], text[k]), inv_tau));
    auto row = tape.concat(sims);
    auto loss_j = tape.sub(tape.logsumexp(row), sims[j]);
    total = tape.add(total, tape.scale(loss_j, T(1) / T(vision.size())));
  }
  return total;
}

template <class T>
typename Tape<T>::Var euclidean(Tape<T>& tape, typename Tape<T>::Var a,
                                typename Tape<T>::Var b) {
  auto d = tape.sub(a, b);
  return tape.sqrt_(tape.sum(tape.mul(d, d)));
}

// Triplet hinge: sum_j max(0, margin + d(gen_j, ref_j) - d(gen_j, neg_j)).
template <class T>
typename Tape<T>::Var metric_loss(Tape<T>& tape,
                                  const std::vector<typename Tape<T>::Var>& anchors,
                                  const std::vector<typename Tape<T>::Var>& positives,
                                  const std::vector<typename Tape<T>::Var>& negatives,
                                  double margin) {
  if (anchors.size() != positives.size() || anchors.size() != negatives.size())
    throw data::ContractError("metric_loss: length mismatch");
  auto total = tape.constant_scalar(T(0));
  for (std::size_t j = 0; j < anchors.size(); ++j) {
    auto d_pos = euclidean(tape, anchors[j], positives[j]);
    auto d_neg = euclidean(tape, anchors[j], negatives[j]);
    auto term = tape.relu(tape.add_const(tape.sub(d_pos, d_neg), T(margin)));
    total = tape.add(total, term);
  }
  return total;
}

}  // namespace medk2n::cmim
