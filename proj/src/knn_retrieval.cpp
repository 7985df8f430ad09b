#include "ogen/knn_retrieval.hpp"

#include <algorithm>
#include <numeric>

namespace ogen {

Retrieval retrieve_knn(const Vec& query, const Mat& candidates, int k) {
  if (k <= 0) throw ValidationError("k must be positive");
  if (query.size() != candidates.rows()) throw ValidationError("query / candidate dimension mismatch");
  const int n = static_cast<int>(candidates.cols());
  if (n == 0) throw ValidationError("no candidate classes to retrieve from");

  Retrieval out;
  if (k > n) {
    k = n;
    out.clamped = true;
  }
  const double qn = query.norm();
  if (!(qn > 0.0)) throw ValidationError("zero-norm query");
  const Vec scores = candidates.transpose() * (query / qn);

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](int a, int b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), better);
  idx.resize(k);
  out.indices = std::move(idx);
  return out;
}

NeighborContext sample_support(const std::vector<int>& neighbors, const EmbeddingSet& set, Rng& rng) {
  NeighborContext ctx;
  const int K = static_cast<int>(neighbors.size());
  ctx.neighbors = neighbors;
  ctx.neighbor_embeddings.resize(set.dim, K);
  ctx.support_features.resize(set.dim, K);
  ctx.sample_ids.resize(K);
  for (int j = 0; j < K; ++j) {
    const int c = neighbors[j];
    if (c < 0 || c >= set.num_classes()) throw ValidationError("neighbor class " + std::to_string(c) + " out of range");
    const int n = set.num_features(c);
    if (n < 1) throw ValidationError("neighbor class " + std::to_string(c) + " has no image features");
    std::uniform_int_distribution<int> pick(0, n - 1);
    const int id = pick(rng);
    ctx.sample_ids[j] = id;
    ctx.neighbor_embeddings.col(j) = set.class_embedding(c);
    ctx.support_features.col(j) = set.image_feature(c, id);
  }
  return ctx;
}

NeighborContext permute_neighbors(const NeighborContext& ctx, const std::vector<int>& perm) {
  NeighborContext out = ctx;
  for (std::size_t j = 0; j < perm.size(); ++j) {
    const int src = perm[j];
    out.neighbors[j] = ctx.neighbors[src];
    out.sample_ids[j] = ctx.sample_ids[src];
    out.neighbor_embeddings.col(j) = ctx.neighbor_embeddings.col(src);
    out.support_features.col(j) = ctx.support_features.col(src);
  }
  return out;
}

}  // namespace ogen
