#pragma once

// Time-series prompt generation: meta-tokens from decomposed patches, a shared
// linear projection into the backbone's embedding space, prototype vectors
// extracted from the backbone vocabulary, and similarity-ranked prefix selection.

#include "tsllm/autograd.hpp"
#include "tsllm/core.hpp"
#include "tsllm/decomposition.hpp"
#include "tsllm/nn.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

namespace tsllm {

enum class SimilarityMetric { Cosine, Euclidean };

inline std::string to_string(SimilarityMetric m) { return m == SimilarityMetric::Cosine ? "cosine" : "euclidean"; }

inline SimilarityMetric parse_metric(std::string_view s) {
  if (s == "cosine") return SimilarityMetric::Cosine;
  if (s == "euclidean") return SimilarityMetric::Euclidean;
  throw ConfigError("unknown similarity metric '" + std::string(s) + "'");
}

/// E = M W^T + b. One instance serves all three channel tasks in multi-task mode.
struct SharedProjection {
  ag::Var weight;  // d' x (3 * patch_len)
  ag::Var bias;    // 1 x d'

  SharedProjection() = default;
  SharedProjection(Index in_width, Index d_model, Rng& rng)
      : weight(make_parameter(init_uniform(d_model, in_width, in_width, rng))),
        bias(make_parameter(init_uniform(1, d_model, in_width, rng))) {}
  SharedProjection(Matrix w, Matrix b) : weight(make_parameter(std::move(w))), bias(make_parameter(std::move(b))) {}

  Index in_width() const { return weight.cols(); }
  Index out_width() const { return weight.rows(); }

  /// Independent copy with identical values.
  SharedProjection clone() const { return SharedProjection(weight.value(), bias.value()); }

  ag::Var forward(const ag::Var& meta) const {
    if (meta.cols() != in_width()) {
      throw ShapeError("shared projection expects width " + std::to_string(in_width()) + ", got " +
                       std::to_string(meta.cols()));
    }
    return ag::add_row(ag::matmul_nt(meta, weight), bias);
  }
};

/// Prototypes = W_t * vocabulary table: k_proto learned combinations of token embeddings.
struct PrototypeExtractor {
  ag::Var weight;  // k_proto x V

  PrototypeExtractor() = default;
  PrototypeExtractor(Index k_proto, Index vocab_size, Rng& rng)
      : weight(make_parameter(init_normal(k_proto, vocab_size, 1.0 / std::sqrt(static_cast<Scalar>(vocab_size)), rng))) {}
  explicit PrototypeExtractor(Matrix w) : weight(make_parameter(std::move(w))) {}

  ag::Var forward(const ag::Var& vocab_table) const {
    if (vocab_table.rows() != weight.cols()) {
      throw ShapeError("prototype extractor expects a vocabulary of " + std::to_string(weight.cols()) + " rows, got " +
                       std::to_string(vocab_table.rows()));
    }
    return ag::matmul(weight, vocab_table);
  }
};

struct PromptSequence {
  Matrix tokens;  // (prefix_len + n_p) x d'
  Index prefix_len = 0;
  int task_id = 0;

  Index length() const { return tokens.rows(); }
  Index body_len() const { return tokens.rows() - prefix_len; }
};

struct PrototypeSelection {
  std::vector<Index> indices;   // selected prototypes, best first
  RowVector scores;             // mean similarity of every prototype
  RowVector selected_scores;    // scores of `indices`, same order
};

/// Meta-token i = [trend patch i | seasonal patch i | residual patch i].
inline Matrix build_meta_tokens(const PatchSet& trend, const PatchSet& seasonal, const PatchSet& residual) {
  const bool same = trend.count == seasonal.count && trend.count == residual.count &&
                    trend.patch_len == seasonal.patch_len && trend.patch_len == residual.patch_len &&
                    trend.stride == seasonal.stride && trend.stride == residual.stride;
  if (!same) throw ShapeError("build_meta_tokens: patch sets disagree on geometry");
  Matrix meta(trend.count, 3 * trend.patch_len);
  meta << trend.patches, seasonal.patches, residual.patches;
  return meta;
}

inline Matrix shared_project(const Matrix& meta, const SharedProjection& proj) {
  if (meta.cols() != proj.in_width()) throw ShapeError("shared_project: meta-token width mismatch");
  return (meta * proj.weight.value().transpose()).rowwise() + proj.bias.value().row(0);
}

inline Matrix extract_prototypes(const Matrix& vocab_table, const PrototypeExtractor& ex) {
  if (vocab_table.rows() != ex.weight.cols()) throw ShapeError("extract_prototypes: vocabulary size mismatch");
  return ex.weight.value() * vocab_table;
}

/// Larger is more similar under both metrics: cosine in [-1, 1], euclidean as -||e - v||.
template <class A, class B>
Scalar similarity(const Eigen::MatrixBase<A>& e, const Eigen::MatrixBase<B>& v, SimilarityMetric metric) {
  if (e.size() != v.size()) throw ShapeError("similarity: dimension mismatch");
  if (metric == SimilarityMetric::Euclidean) return -(e.derived().array() - v.derived().array()).matrix().norm();
  const Scalar ne = e.norm();
  const Scalar nv = v.norm();
  if (ne <= 0 || nv <= 0) throw ZeroNormError("similarity: zero-norm vector under cosine");
  return e.dot(v) / (ne * nv);
}

/// Indices of the `m` largest scores, descending, ties to the lower index.
inline std::vector<Index> top_indices(const RowVector& scores, Index m) {
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) > scores(b); });
  order.resize(static_cast<std::size_t>(m));
  return order;
}

/// Scores every prototype by its mean similarity to the window's patch
/// embeddings and keeps the `m_prefix` best.
inline PrototypeSelection select_prototypes(const Matrix& body, const Matrix& prototypes, Index m_prefix,
                                            SimilarityMetric metric) {
  if (m_prefix < 0 || m_prefix > prototypes.rows()) throw ConfigError("select_prototypes: m_prefix exceeds k_proto");
  if (body.cols() != prototypes.cols()) throw ShapeError("select_prototypes: embedding width mismatch");
  ag::NoGradGuard guard;
  const ag::Var b = ag::constant(body);
  const ag::Var p = ag::constant(prototypes);
  const ag::Var sim = metric == SimilarityMetric::Cosine ? ag::cosine_rows(b, p) : ag::neg_euclidean_rows(b, p);
  PrototypeSelection sel;
  sel.scores = sim.value().colwise().mean();
  sel.indices = top_indices(sel.scores, m_prefix);
  sel.selected_scores.resize(m_prefix);
  for (Index i = 0; i < m_prefix; ++i) sel.selected_scores(i) = sel.scores(sel.indices[static_cast<std::size_t>(i)]);
  return sel;
}

inline PromptSequence build_prompt(const Matrix& prefix, const Matrix& body, int task_id) {
  if (prefix.rows() > 0 && prefix.cols() != body.cols()) throw ShapeError("build_prompt: prefix/body width mismatch");
  PromptSequence p;
  p.prefix_len = prefix.rows();
  p.task_id = task_id;
  p.tokens.resize(prefix.rows() + body.rows(), body.cols());
  if (prefix.rows() > 0) p.tokens.topRows(prefix.rows()) = prefix;
  p.tokens.bottomRows(body.rows()) = body;
  return p;
}

/// Differentiable selection result: the prefix rows and the selected scores
/// both carry gradients back to embeddings and prototypes.
struct SelectedPrefix {
  ag::Var prefix;           // m_prefix x d'
  ag::Var selected_scores;  // 1 x m_prefix
  ag::Var selected_distances;  // euclidean only: 1 x m_prefix of ||e - v|| means
  std::vector<Index> indices;
};

inline SelectedPrefix select_prefix(const ag::Var& body, const ag::Var& prototypes, Index m_prefix,
                                    SimilarityMetric metric) {
  if (m_prefix < 0 || m_prefix > prototypes.rows()) throw ConfigError("select_prefix: m_prefix exceeds k_proto");
  SelectedPrefix out;
  const ag::Var sim = metric == SimilarityMetric::Cosine ? ag::cosine_rows(body, prototypes)
                                                         : ag::neg_euclidean_rows(body, prototypes);
  const ag::Var scores = ag::mean_rows(sim);  // 1 x k
  out.indices = top_indices(scores.value(), m_prefix);
  if (m_prefix == 0) return out;
  out.prefix = ag::gather_rows(prototypes, out.indices);
  out.selected_scores = ag::transpose(ag::gather_rows(ag::transpose(scores), out.indices));
  if (metric == SimilarityMetric::Euclidean) out.selected_distances = ag::scale(out.selected_scores, -1.0);
  return out;
}

}  // namespace tsllm
