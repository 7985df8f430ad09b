#include "ogen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ogen {

namespace {

using nlohmann::json;

std::filesystem::path with_ext(std::filesystem::path stem, const char* ext) {
  stem += ext;
  return stem;
}

void append_floats(std::string& out, const Eigen::Map<const Mat>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    out.append(reinterpret_cast<const char*>(&f), sizeof f);
  }
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem) {
  static_assert(std::endian::native == std::endian::little);
  const GeneratorParams& p = ckpt.params;
  json manifest;
  manifest["format"] = "ogen-checkpoint";
  manifest["version"] = 1;
  manifest["heads"] = p.heads;
  manifest["dim"] = p.dim;
  manifest["ffn_dim"] = p.ffn_dim;
  manifest["scheme"] = ckpt.scheme;
  manifest["epoch"] = ckpt.epoch;

  std::string blob;
  json tensors = json::array();
  std::size_t offset = 0;
  auto add = [&](std::string_view name, const Eigen::Map<const Mat>& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    append_floats(blob, m);
    offset += static_cast<std::size_t>(m.size());
  };
  const auto views = p.views();
  for (int i = 0; i < kNumTensors; ++i) add(GeneratorTensors::names()[i], views[i]);
  if (ckpt.class_embeddings.size() > 0) {
    add("class_embeddings", Eigen::Map<const Mat>(ckpt.class_embeddings.data(), ckpt.class_embeddings.rows(),
                                                  ckpt.class_embeddings.cols()));
    manifest["embedding_classes"] = ckpt.embedding_classes;
  }
  manifest["tensors"] = tensors;
  manifest["num_floats"] = offset;

  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw ValidationError("cannot write " + with_ext(stem, ".bin").string());
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
  if (!js) throw ValidationError("cannot write " + with_ext(stem, ".json").string());
  js << manifest.dump(2) << '\n';
  if (!bin || !js) throw ValidationError("checkpoint write failed for " + stem.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  json manifest;
  try {
    manifest = json::parse(read_file(with_ext(stem, ".json")));
  } catch (const json::exception& e) {
    throw FormatError(with_ext(stem, ".json").string() + ": " + e.what());
  }
  const std::string blob = read_file(with_ext(stem, ".bin"));
  try {
    if (manifest.at("format") != "ogen-checkpoint") throw FormatError("not an ogen checkpoint manifest");
    const std::size_t total = manifest.at("num_floats");
    if (blob.size() != total * sizeof(float))
      throw FormatError("tensor dump holds " + std::to_string(blob.size()) + " bytes, manifest expects " +
                        std::to_string(total * sizeof(float)));

    Checkpoint ck;
    ck.scheme = manifest.at("scheme");
    ck.epoch = manifest.at("epoch");
    ck.params = init_params(manifest.at("heads"), manifest.at("dim"), manifest.at("ffn_dim"), 0);
    auto fill = [&](const json& entry, Eigen::Index rows, Eigen::Index cols, double* dst) {
      if (entry.at("rows") != rows || entry.at("cols") != cols)
        throw FormatError("tensor " + entry.at("name").get<std::string>() + " has unexpected shape");
      const std::size_t off = entry.at("offset");
      const std::size_t n = static_cast<std::size_t>(rows * cols);
      if (off + n > total) throw FormatError("tensor " + entry.at("name").get<std::string>() + " out of bounds");
      for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, blob.data() + (off + i) * sizeof(float), sizeof f);
        dst[i] = f;
      }
    };
    const auto& tensors = manifest.at("tensors");
    auto views = ck.params.views();
    for (int i = 0; i < kNumTensors; ++i) {
      const auto& entry = tensors.at(i);
      if (entry.at("name") != GeneratorTensors::names()[i]) throw FormatError("tensor order mismatch in manifest");
      fill(entry, views[i].rows(), views[i].cols(), views[i].data());
    }
    if (tensors.size() > kNumTensors) {
      const auto& entry = tensors.at(kNumTensors);
      const Eigen::Index rows = entry.at("rows");
      const Eigen::Index cols = entry.at("cols");
      ck.class_embeddings.resize(rows, cols);
      fill(entry, rows, cols, ck.class_embeddings.data());
      ck.embedding_classes = manifest.at("embedding_classes").get<std::vector<int>>();
      if (!ck.embedding_classes.empty() && static_cast<Eigen::Index>(ck.embedding_classes.size()) != cols)
        throw FormatError("embedding_classes length does not match class_embeddings");
    }
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(with_ext(stem, ".json").string() + ": " + e.what());
  }
}

}  // namespace ogen
