#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "realmix/checksum.hpp"
#include "realmix/tensor_io.hpp"

using namespace realmix;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("realmix_io_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}
}  // namespace

TEST_CASE("fnv1a64 is stable") {
  REQUIRE(fnv1a64(std::string("")) == 0xcbf29ce484222325ull);
  REQUIRE(checksum_hex(fnv1a64(std::string("a"))) == "af63dc4c8601ec8c");
  REQUIRE(fnv1a64(std::string("abc")) != fnv1a64(std::string("abd")));
}

TEST_CASE("float32 tensor round trip") {
  auto dir = temp_dir("f32");
  TensorFile t;
  t.shape = {2, 3};
  t.data = {1.0f, -0.5f, 0.25f, 3.0f, 0.0f, -1.0f};
  const std::string path = (dir / "t.bin").string();
  save_tensor(t, path);
  TensorFile loaded = load_tensor(path);
  REQUIRE(loaded.shape == t.shape);
  REQUIRE(loaded.data == t.data);
}

TEST_CASE("corrupt tensor payload is rejected by checksum") {
  auto dir = temp_dir("corrupt");
  TensorFile t;
  t.shape = {4};
  t.data = {1.0f, 2.0f, 3.0f, 4.0f};
  const std::string path = (dir / "t.bin").string();
  save_tensor(t, path);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(2);
    char z = 0x7e;
    f.write(&z, 1);
  }
  REQUIRE_THROWS_AS(load_tensor(path), IoError);
}

TEST_CASE("truncated tensor file is rejected") {
  auto dir = temp_dir("trunc");
  TensorFile t;
  t.shape = {8};
  t.data.assign(8, 1.5f);
  const std::string path = (dir / "t.bin").string();
  save_tensor(t, path);
  fs::resize_file(path, 9);
  REQUIRE_THROWS_AS(load_tensor(path), IoError);
}

TEST_CASE("float64 tensor round trip preserves exact doubles") {
  auto dir = temp_dir("f64");
  std::vector<double> data = {1.0 / 3.0, -2.718281828459045, 1e-300, 0.1 + 0.2};
  const std::string path = (dir / "p.bin").string();
  save_tensor_f64({4}, data, path);
  auto loaded = load_tensor_f64(path);
  REQUIRE(loaded == data);
}

TEST_CASE("two saves of the same tensor are byte-identical") {
  auto dir = temp_dir("det");
  TensorFile t;
  t.shape = {3};
  t.data = {0.1f, 0.2f, 0.3f};
  save_tensor(t, (dir / "a.bin").string());
  save_tensor(t, (dir / "b.bin").string());
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  REQUIRE(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  REQUIRE(slurp(dir / "a.json") == slurp(dir / "b.json"));
}
