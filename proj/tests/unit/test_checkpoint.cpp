#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "../support/oracles.hpp"
#include "ogen/checkpoint.hpp"

using namespace ogen;
namespace fs = std::filesystem;

TEST_CASE("checkpoints round-trip bit-exactly") {
  const fs::path dir = fs::temp_directory_path() / "ogen_unit_ckpt";
  fs::create_directories(dir);
  Checkpoint c;
  c.params = oracle::random_params(4, 8, 16, 3);
  for (auto v : c.params.views()) round_to_float(v);
  c.scheme = "joint";
  c.epoch = 17;
  c.class_embeddings = Mat::Random(8, 3).cast<float>().cast<double>();
  c.embedding_classes = {4, 0, 9};
  save_checkpoint(c, dir / "a");
  const Checkpoint back = load_checkpoint(dir / "a");
  CHECK(back.params == c.params);
  CHECK(back.params.heads == 4);
  CHECK(back.params.ffn_dim == 16);
  CHECK(back.scheme == "joint");
  CHECK(back.epoch == 17);
  CHECK(back.class_embeddings == c.class_embeddings);
  CHECK(back.embedding_classes == c.embedding_classes);

  // Saving the loaded checkpoint reproduces the same bytes.
  save_checkpoint(back, dir / "b");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  fs::remove_all(dir);
}

TEST_CASE("damaged checkpoints are rejected") {
  const fs::path dir = fs::temp_directory_path() / "ogen_unit_ckpt_bad";
  fs::create_directories(dir);
  Checkpoint c;
  c.params = init_params(2, 4, 8, 0);
  c.scheme = "per_class";
  save_checkpoint(c, dir / "x");
  fs::resize_file(dir / "x.bin", fs::file_size(dir / "x.bin") - 4);
  CHECK_THROWS_AS(load_checkpoint(dir / "x"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), ValidationError);
  fs::remove_all(dir);
}
