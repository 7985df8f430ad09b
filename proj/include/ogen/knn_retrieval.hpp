#pragma once

#include <vector>

#include "ogen/common.hpp"
#include "ogen/embedding_store.hpp"

namespace ogen {

struct Retrieval {
  // Column indices into the candidate matrix, most similar first.
  std::vector<int> indices;
  // True when the requested k exceeded the candidate count.
  bool clamped = false;
};

// Top-k columns of `candidates` (d x C_b, unit columns) by cosine similarity
// to `query`, descending; ties go to the smaller column index. k larger than
// C_b is clamped. Throws ValidationError for k <= 0.
Retrieval retrieve_knn(const Vec& query, const Mat& candidates, int k);

// Retrieved neighbors of one conditioning class together with one sampled
// support image feature per neighbor.
struct NeighborContext {
  Vec conditioning;           // w_n, dim d
  std::vector<int> neighbors;  // class indices R
  Mat neighbor_embeddings;     // d x K
  Mat support_features;        // d x K, column j drawn from class neighbors[j]
  std::vector<int> sample_ids;

  int k() const { return static_cast<int>(neighbors.size()); }
};

// Draws one image feature uniformly from each listed class. Neighbor
// embeddings are the set's class embeddings; callers training proxies
// overwrite them.
NeighborContext sample_support(const std::vector<int>& neighbors, const EmbeddingSet& set, Rng& rng);

// Permutes neighbor columns: output column j is input column perm[j].
NeighborContext permute_neighbors(const NeighborContext& ctx, const std::vector<int>& perm);

}  // namespace ogen
