#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ogen/generator.hpp"

namespace ogen {

// Generator parameters plus the learnable class-embedding proxies, written as
// `<stem>.bin` (flat little-endian float32 dump, tensors in manifest order,
// column-major) and `<stem>.json` (manifest).
struct Checkpoint {
  GeneratorParams params;
  std::string scheme;
  int epoch = 0;
  Mat class_embeddings;              // d x C_b, may be empty
  std::vector<int> embedding_classes;  // class index of each column, or empty
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace ogen
