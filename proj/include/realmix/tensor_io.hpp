#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "realmix/checksum.hpp"
#include "realmix/error.hpp"

namespace realmix {

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes little-endian storage");

// On-disk tensor container: flat row-major float32 in `<name>.bin` plus a
// JSON sidecar `<name>.json` holding {shape, dtype, order, checksum}.
struct TensorFile {
  std::vector<int64_t> shape;
  std::vector<float> data;

  int64_t count() const {
    int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

namespace detail {
inline std::string sidecar_path(const std::string& bin_path) {
  std::string p = bin_path;
  if (p.size() >= 4 && p.substr(p.size() - 4) == ".bin") p.resize(p.size() - 4);
  return p + ".json";
}
}  // namespace detail

inline std::string tensor_checksum(const TensorFile& t) {
  return checksum_hex(t.data.data(), t.data.size() * sizeof(float));
}

inline void save_tensor(const TensorFile& t, const std::string& bin_path) {
  if (t.count() != static_cast<int64_t>(t.data.size()))
    throw ValidationError("save_tensor: shape does not match element count");
  std::ofstream f(bin_path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + bin_path);
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!f) throw IoError("short write: " + bin_path);

  nlohmann::json side;
  side["shape"] = t.shape;
  side["dtype"] = "float32";
  side["order"] = "row-major";
  side["checksum"] = "fnv1a64:" + tensor_checksum(t);
  std::ofstream s(detail::sidecar_path(bin_path), std::ios::trunc);
  if (!s) throw IoError("cannot open for write: " + detail::sidecar_path(bin_path));
  s << side.dump(2) << "\n";
}

// float64 variant of the same container, used by checkpoints where exact
// resume requires full double precision.
inline void save_tensor_f64(const std::vector<int64_t>& shape, const std::vector<double>& data,
                            const std::string& bin_path) {
  int64_t n = 1;
  for (auto s : shape) n *= s;
  if (n != static_cast<int64_t>(data.size()))
    throw ValidationError("save_tensor_f64: shape does not match element count");
  std::ofstream f(bin_path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + bin_path);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!f) throw IoError("short write: " + bin_path);
  nlohmann::json side;
  side["shape"] = shape;
  side["dtype"] = "float64";
  side["order"] = "row-major";
  side["checksum"] = "fnv1a64:" + checksum_hex(data.data(), data.size() * sizeof(double));
  std::ofstream s(detail::sidecar_path(bin_path), std::ios::trunc);
  if (!s) throw IoError("cannot open for write: " + detail::sidecar_path(bin_path));
  s << side.dump(2) << "\n";
}

inline std::vector<double> load_tensor_f64(const std::string& bin_path,
                                           std::vector<int64_t>* shape_out = nullptr) {
  std::ifstream s(detail::sidecar_path(bin_path));
  if (!s) throw IoError("missing tensor sidecar: " + detail::sidecar_path(bin_path));
  nlohmann::json side;
  try {
    s >> side;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unparsable tensor sidecar " + detail::sidecar_path(bin_path) + ": " + e.what());
  }
  if (side.value("dtype", "") != "float64")
    throw IoError("expected float64 tensor in " + bin_path);
  auto shape = side.at("shape").get<std::vector<int64_t>>();
  int64_t n = 1;
  for (auto v : shape) n *= v;
  std::ifstream f(bin_path, std::ios::binary);
  if (!f) throw IoError("missing tensor file: " + bin_path);
  std::vector<double> data(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double)))
    throw IoError("truncated tensor file: " + bin_path);
  std::string want = side.value("checksum", "");
  if (!want.empty() &&
      want != "fnv1a64:" + checksum_hex(data.data(), data.size() * sizeof(double)))
    throw IoError("tensor checksum mismatch for " + bin_path + " (corrupt file?)");
  if (shape_out) *shape_out = shape;
  return data;
}

inline TensorFile load_tensor(const std::string& bin_path) {
  std::ifstream s(detail::sidecar_path(bin_path));
  if (!s) throw IoError("missing tensor sidecar: " + detail::sidecar_path(bin_path));
  nlohmann::json side;
  try {
    s >> side;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unparsable tensor sidecar " + detail::sidecar_path(bin_path) + ": " + e.what());
  }
  if (side.value("dtype", "") != "float32")
    throw IoError("unsupported dtype in " + detail::sidecar_path(bin_path));

  TensorFile t;
  t.shape = side.at("shape").get<std::vector<int64_t>>();
  std::ifstream f(bin_path, std::ios::binary);
  if (!f) throw IoError("missing tensor file: " + bin_path);
  t.data.resize(static_cast<size_t>(t.count()));
  f.read(reinterpret_cast<char*>(t.data.data()),
         static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(float)))
    throw IoError("truncated tensor file: " + bin_path);

  std::string want = side.value("checksum", "");
  std::string got = "fnv1a64:" + tensor_checksum(t);
  if (!want.empty() && want != got)
    throw IoError("tensor checksum mismatch for " + bin_path + " (corrupt file?)");
  return t;
}

}  // namespace realmix
