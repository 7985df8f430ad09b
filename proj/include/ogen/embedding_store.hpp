#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ogen/common.hpp"

namespace ogen {

// Disjoint base (known) and new (unknown) class index lists.
struct ClassSplit {
  std::vector<int> base;
  std::vector<int> new_classes;

  bool operator==(const ClassSplit&) const = default;
};

// Labeled unit-norm image features plus one class (text) embedding per class.
// Storage is float32; every stored vector has unit L2 norm within 1e-6.
struct EmbeddingSet {
  int dim = 0;
  std::vector<std::string> class_names;
  // d x C, one unit column per class.
  Eigen::MatrixXf class_embeddings;
  // One d x n_c matrix per class, unit columns.
  std::vector<Eigen::MatrixXf> image_features;
  ClassSplit split;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int num_features(int c) const { return static_cast<int>(image_features.at(c).cols()); }

  Vec class_embedding(int c) const { return class_embeddings.col(c).cast<double>(); }
  Vec image_feature(int c, int i) const { return image_features.at(c).col(i).cast<double>(); }

  // Class embeddings of the listed classes as a d x n double matrix.
  Mat embeddings_of(const std::vector<int>& classes) const;

  // Exact equality of every stored value.
  bool operator==(const EmbeddingSet& other) const;
};

// Throws ValidationError describing the first violated invariant.
void validate(const EmbeddingSet& set);

struct SynthConfig {
  int num_classes = 50;
  int dim = 64;
  int per_class = 40;
  double image_noise = 0.15;
  double text_noise = 0.1;
  double base_fraction = 0.5;
  // Superclass structure: class directions are drawn around `groups` shared
  // centers with spread `group_spread`. groups == 0 draws every class
  // direction independently.
  int groups = 10;
  double group_spread = 0.1;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);

EmbeddingSet make_synthetic(const SynthConfig& cfg);

// OEF binary format, little-endian.
EmbeddingSet load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet decode_embeddings(const std::string& bytes);
std::string encode_embeddings(const EmbeddingSet& set);

// Cosine-softmax over the columns of `class_matrix` (assumed unit norm).
// `feature` is normalized internally, so any positive rescaling gives the
// same output.
Vec class_probabilities(const Vec& feature, const Mat& class_matrix, double tau);

// Fraction of image features whose nearest class centroid (normalized mean
// of that class's image features) by cosine is their own class.
double nearest_centroid_accuracy(const EmbeddingSet& set);

}  // namespace ogen
