#include "ogen/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace ogen {

static_assert(std::endian::native == std::endian::little,
              "OEF encoding assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'O', 'G', 'E', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr double kNormTolerance = 1e-6;

std::string fmt_class(const EmbeddingSet& set, int c) {
  std::ostringstream os;
  os << "class " << c;
  if (c < set.num_classes() && !set.class_names[c].empty()) os << " ('" << set.class_names[c] << "')";
  return os.str();
}

// Normalizes in double and stores back as float. Vectors already unit within
// tolerance are left untouched so save/load is bit-exact.
template <typename Col>
void normalize_column(Col&& col, const std::string& what) {
  const double norm = col.template cast<double>().norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw ValidationError(what + ": zero-norm or non-finite vector");
  if (std::abs(norm - 1.0) > kNormTolerance) col = (col.template cast<double>() / norm).template cast<float>();
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u16(std::uint16_t v) { bytes(&v, sizeof v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void floats(const float* p, std::size_t n) { bytes(p, n * sizeof(float)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }

  void bytes(void* p, std::size_t n, const std::string& what) {
    if (remaining() < n) {
      std::ostringstream os;
      os << "truncated file while reading " << what << " (need " << n << " bytes, have " << remaining() << ")";
      throw FormatError(os.str());
    }
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16(const std::string& what) {
    std::uint16_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::uint32_t u32(const std::string& what) {
    std::uint32_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  // Reads one d-float record, reporting a dimension mismatch when the file
  // ends partway through it.
  void record(float* dst, std::uint32_t d, const std::string& what) {
    const std::size_t need = std::size_t{d} * sizeof(float);
    if (remaining() < need) {
      std::ostringstream os;
      os << "dimension mismatch in " << what << ": expected " << d << " floats, found "
         << remaining() / sizeof(float);
      throw FormatError(os.str());
    }
    bytes(dst, need, what);
  }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

void validate_split(const ClassSplit& split, int num_classes) {
  if (split.base.empty()) throw ValidationError("split: base class list is empty");
  std::set<int> seen;
  auto check = [&](int c, const char* which) {
    if (c < 0 || c >= num_classes)
      throw ValidationError(std::string("split: ") + which + " index " + std::to_string(c) + " out of range");
    if (!seen.insert(c).second)
      throw ValidationError("split: class " + std::to_string(c) + " listed twice or in both base and new");
  };
  for (int c : split.base) check(c, "base");
  for (int c : split.new_classes) check(c, "new");
}

}  // namespace

Mat EmbeddingSet::embeddings_of(const std::vector<int>& classes) const {
  Mat out(dim, static_cast<Eigen::Index>(classes.size()));
  for (std::size_t j = 0; j < classes.size(); ++j) out.col(j) = class_embedding(classes[j]);
  return out;
}

bool EmbeddingSet::operator==(const EmbeddingSet& o) const {
  if (dim != o.dim || class_names != o.class_names || !(split == o.split)) return false;
  if (class_embeddings.rows() != o.class_embeddings.rows() || class_embeddings.cols() != o.class_embeddings.cols() ||
      class_embeddings != o.class_embeddings)
    return false;
  if (image_features.size() != o.image_features.size()) return false;
  for (std::size_t c = 0; c < image_features.size(); ++c) {
    const auto& a = image_features[c];
    const auto& b = o.image_features[c];
    if (a.rows() != b.rows() || a.cols() != b.cols() || a != b) return false;
  }
  return true;
}

void validate(const EmbeddingSet& set) {
  if (set.dim <= 0) throw ValidationError("dimension must be positive");
  const int C = set.num_classes();
  if (set.class_embeddings.rows() != set.dim || set.class_embeddings.cols() != C)
    throw ValidationError("class embedding matrix shape does not match (dim, classes)");
  if (static_cast<int>(set.image_features.size()) != C)
    throw ValidationError("image feature lists do not match class count");
  std::set<std::string> names;
  for (int c = 0; c < C; ++c) {
    if (set.class_names[c].empty()) throw ValidationError(fmt_class(set, c) + ": empty class name");
    if (!names.insert(set.class_names[c]).second)
      throw ValidationError(fmt_class(set, c) + ": duplicate class name");
    const double n = set.class_embeddings.col(c).cast<double>().norm();
    if (std::abs(n - 1.0) > kNormTolerance) throw ValidationError(fmt_class(set, c) + ": class embedding not unit norm");
    const auto& feats = set.image_features[c];
    if (feats.cols() < 1) throw ValidationError(fmt_class(set, c) + ": no image features");
    if (feats.rows() != set.dim) throw ValidationError(fmt_class(set, c) + ": image feature dimension mismatch");
    for (Eigen::Index i = 0; i < feats.cols(); ++i) {
      if (std::abs(feats.col(i).cast<double>().norm() - 1.0) > kNormTolerance)
        throw ValidationError(fmt_class(set, c) + " image " + std::to_string(i) + ": not unit norm");
    }
  }
  validate_split(set.split, C);
}

void validate(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw ValidationError("num_classes must be >= 2");
  if (cfg.dim < 2) throw ValidationError("dim must be >= 2");
  if (cfg.per_class < 1) throw ValidationError("per_class must be >= 1");
  if (!(cfg.image_noise >= 0.0)) throw ValidationError("image_noise must be non-negative");
  if (!(cfg.text_noise >= 0.0)) throw ValidationError("text_noise must be non-negative");
  if (!(cfg.base_fraction > 0.0 && cfg.base_fraction <= 1.0))
    throw ValidationError("base_fraction must lie in (0, 1]");
  if (cfg.groups < 0) throw ValidationError("groups must be non-negative");
  if (!(cfg.group_spread >= 0.0)) throw ValidationError("group_spread must be non-negative");
}

EmbeddingSet make_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int C = cfg.num_classes;
  const int d = cfg.dim;
  auto gaussian = [&] {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = normal(rng);
    return v;
  };
  // Normalization can only fail on an exactly-zero draw; redraw if it happens.
  auto unit = [&](auto make) {
    for (;;) {
      Vec v = make();
      const double n = v.norm();
      if (n > 0.0) return Vec(v / n);
    }
  };

  std::vector<Vec> centers;
  for (int g = 0; g < cfg.groups; ++g) centers.push_back(unit(gaussian));

  EmbeddingSet set;
  set.dim = d;
  set.class_embeddings.resize(d, C);
  set.image_features.resize(C);
  for (int c = 0; c < C; ++c) {
    set.class_names.push_back("class_" + std::to_string(c));
    Vec mu = centers.empty() ? unit(gaussian) : unit([&] { return Vec(centers[c % cfg.groups] + cfg.group_spread * gaussian()); });
    set.class_embeddings.col(c) = unit([&] { return Vec(mu + cfg.text_noise * gaussian()); }).cast<float>();
    auto& feats = set.image_features[c];
    feats.resize(d, cfg.per_class);
    for (int i = 0; i < cfg.per_class; ++i)
      feats.col(i) = unit([&] { return Vec(mu + cfg.image_noise * gaussian()); }).cast<float>();
  }

  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int num_base = static_cast<int>(std::ceil(cfg.base_fraction * C - 1e-9));
  set.split.base.assign(order.begin(), order.begin() + num_base);
  set.split.new_classes.assign(order.begin() + num_base, order.end());
  return set;
}

std::string encode_embeddings(const EmbeddingSet& set) {
  validate(set);
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(set.dim));
  w.u32(static_cast<std::uint32_t>(set.num_classes()));
  for (int c = 0; c < set.num_classes(); ++c) {
    const auto& name = set.class_names[c];
    if (name.size() > 0xFFFF) throw ValidationError(fmt_class(set, c) + ": name longer than 65535 bytes");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.floats(set.class_embeddings.col(c).data(), set.dim);
    const auto& feats = set.image_features[c];
    w.u32(static_cast<std::uint32_t>(feats.cols()));
    w.floats(feats.data(), static_cast<std::size_t>(feats.size()));
  }
  w.u32(static_cast<std::uint32_t>(set.split.base.size()));
  for (int c : set.split.base) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(set.split.new_classes.size()));
  for (int c : set.split.new_classes) w.u32(static_cast<std::uint32_t>(c));
  return w.take();
}

EmbeddingSet decode_embeddings(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4, "header magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("malformed header: bad magic bytes");
  const auto version = r.u32("header version");
  if (version != kVersion) throw FormatError("malformed header: unsupported version " + std::to_string(version));
  const auto d = r.u32("header dimension");
  const auto C = r.u32("header class count");
  if (d == 0) throw FormatError("malformed header: dimension is zero");
  if (C == 0) throw FormatError("malformed header: class count is zero");
  // Every class needs at least a name length, an embedding and a count.
  if (std::uint64_t{C} * (2 + 4 * std::uint64_t{d} + 4) > r.remaining())
    throw FormatError("malformed header: class count " + std::to_string(C) + " exceeds file size");

  EmbeddingSet set;
  set.dim = static_cast<int>(d);
  set.class_embeddings.resize(d, C);
  set.image_features.resize(C);
  for (std::uint32_t c = 0; c < C; ++c) {
    const std::string where = "class " + std::to_string(c);
    const auto len = r.u16(where + " name length");
    std::string name(len, '\0');
    r.bytes(name.data(), len, where + " name");
    set.class_names.push_back(name);
    r.record(set.class_embeddings.col(c).data(), d, where + " embedding");
    normalize_column(set.class_embeddings.col(c), where + " embedding");
    const auto count = r.u32(where + " image count");
    if (count == 0) throw ValidationError(where + ": no image features");
    auto& feats = set.image_features[c];
    feats.resize(d, count);
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string rec = where + " image record " + std::to_string(i);
      r.record(feats.col(i).data(), d, rec);
      normalize_column(feats.col(i), rec);
    }
  }
  auto read_list = [&](const char* which) {
    const auto n = r.u32(std::string("split ") + which + " count");
    if (n > C) throw FormatError(std::string("split ") + which + " count exceeds class count");
    std::vector<int> out(n);
    for (auto& v : out) v = static_cast<int>(r.u32(std::string("split ") + which + " index"));
    return out;
  };
  set.split.base = read_list("base");
  set.split.new_classes = read_list("new");
  if (r.remaining() != 0)
    throw FormatError("trailing " + std::to_string(r.remaining()) + " bytes after split section");
  validate(set);
  return set;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_embeddings(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  const std::string bytes = encode_embeddings(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write failed for " + path.string());
}

Vec class_probabilities(const Vec& feature, const Mat& class_matrix, double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  if (feature.size() != class_matrix.rows()) throw ValidationError("feature / class matrix dimension mismatch");
  const double norm = feature.norm();
  if (!(norm > 0.0)) throw ValidationError("zero-norm feature");
  Vec logits = class_matrix.transpose() * feature / (norm * tau);
  logits.array() -= logits.maxCoeff();
  Vec p = logits.array().exp();
  return p / p.sum();
}

double nearest_centroid_accuracy(const EmbeddingSet& set) {
  const int C = set.num_classes();
  Mat centroids(set.dim, C);
  for (int c = 0; c < C; ++c) {
    Vec m = set.image_features[c].cast<double>().rowwise().sum();
    centroids.col(c) = m / m.norm();
  }
  long correct = 0;
  long total = 0;
  for (int c = 0; c < C; ++c) {
    const Mat feats = set.image_features[c].cast<double>();
    const Mat scores = centroids.transpose() * feats;
    for (Eigen::Index i = 0; i < feats.cols(); ++i) {
      Eigen::Index best;
      scores.col(i).maxCoeff(&best);
      correct += (best == c);
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / total : 0.0;
}

}  // namespace ogen
