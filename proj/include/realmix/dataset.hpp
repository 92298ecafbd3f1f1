#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "realmix/error.hpp"
#include "realmix/image.hpp"
#include "realmix/tensor_io.hpp"

namespace realmix {

struct Dataset {
  ImageBatch images;                    // N x C x H x W, values in [-1, 1]
  std::vector<int> labels;              // class ids in [0, K)
  std::vector<std::string> class_names;

  int size() const { return images.n; }
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

inline void validate_dataset(const Dataset& d) {
  if (d.images.n != static_cast<int>(d.labels.size()))
    throw ValidationError("dataset: image count != label count");
  const int k = d.num_classes();
  for (int y : d.labels)
    if (y < 0 || y >= k) throw ValidationError("dataset: label out of range [0, K)");
}

inline std::string dataset_checksum(const Dataset& d) {
  return checksum_hex(d.images.data.data(), d.images.data.size() * sizeof(float));
}

// A dataset directory: train + test tensors, manifest with class names and
// optional semantic class groups (used by the mismatch protocol).
struct DatasetBundle {
  Dataset train;
  Dataset test;
  std::map<std::string, std::vector<int>> groups;
};

namespace detail {

inline Dataset load_dataset_part(const std::filesystem::path& dir, const nlohmann::json& part,
                                 const std::vector<std::string>& class_names) {
  Dataset d;
  d.class_names = class_names;
  TensorFile imgs = load_tensor((dir / part.at("images").get<std::string>()).string());
  if (imgs.shape.size() != 4)
    throw IoError("dataset images tensor must have shape [N,C,H,W]");
  d.images.n = static_cast<int>(imgs.shape[0]);
  d.images.c = static_cast<int>(imgs.shape[1]);
  d.images.h = static_cast<int>(imgs.shape[2]);
  d.images.w = static_cast<int>(imgs.shape[3]);
  d.images.data = std::move(imgs.data);

  TensorFile labs = load_tensor((dir / part.at("labels").get<std::string>()).string());
  if (labs.shape.size() != 1 || labs.shape[0] != imgs.shape[0])
    throw IoError("dataset labels tensor must have shape [N] matching images");
  d.labels.reserve(labs.data.size());
  for (float v : labs.data) d.labels.push_back(static_cast<int>(v));
  validate_dataset(d);
  return d;
}

inline void save_dataset_part(const std::filesystem::path& dir, const std::string& stem,
                              const Dataset& d, nlohmann::json& part) {
  TensorFile imgs;
  imgs.shape = {d.images.n, d.images.c, d.images.h, d.images.w};
  imgs.data = d.images.data;
  save_tensor(imgs, (dir / (stem + "_images.bin")).string());

  TensorFile labs;
  labs.shape = {static_cast<int64_t>(d.labels.size())};
  labs.data.reserve(d.labels.size());
  for (int y : d.labels) labs.data.push_back(static_cast<float>(y));
  save_tensor(labs, (dir / (stem + "_labels.bin")).string());

  part = {{"images", stem + "_images.bin"}, {"labels", stem + "_labels.bin"}};
}

}  // namespace detail

inline void save_dataset(const DatasetBundle& b, const std::string& dir_path) {
  namespace fs = std::filesystem;
  fs::path dir(dir_path);
  fs::create_directories(dir);
  nlohmann::json m;
  m["format"] = "realmix-dataset/v1";
  m["class_names"] = b.train.class_names;
  if (!b.groups.empty()) m["groups"] = b.groups;
  detail::save_dataset_part(dir, "train", b.train, m["train"]);
  detail::save_dataset_part(dir, "test", b.test, m["test"]);
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw IoError("cannot write dataset manifest in " + dir_path);
  f << m.dump(2) << "\n";
}

inline DatasetBundle load_dataset(const std::string& dir_path) {
  namespace fs = std::filesystem;
  fs::path dir(dir_path);
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("missing dataset manifest: " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    f >> m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unparsable dataset manifest: " + std::string(e.what()));
  }
  DatasetBundle b;
  auto class_names = m.at("class_names").get<std::vector<std::string>>();
  b.train = detail::load_dataset_part(dir, m.at("train"), class_names);
  b.test = detail::load_dataset_part(dir, m.at("test"), class_names);
  if (m.contains("groups"))
    b.groups = m["groups"].get<std::map<std::string, std::vector<int>>>();
  return b;
}

// Restriction of a dataset to `classes`, with labels remapped to the index
// of each class within `classes`. Used for mismatch/transfer runs where the
// model's label space is a subset of the source classes.
inline Dataset subset_classes(const Dataset& d, const std::vector<int>& classes) {
  std::map<int, int> remap;
  for (size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || classes[i] >= d.num_classes())
      throw ValidationError("subset_classes: class id out of range");
    remap[classes[i]] = static_cast<int>(i);
  }
  if (remap.size() != classes.size())
    throw ValidationError("subset_classes: duplicate class id");

  Dataset out;
  out.images = ImageBatch(0, d.images.c, d.images.h, d.images.w);
  out.images.data.clear();
  for (int c : classes) out.class_names.push_back(d.class_names[static_cast<size_t>(c)]);
  for (int i = 0; i < d.size(); ++i) {
    auto it = remap.find(d.labels[static_cast<size_t>(i)]);
    if (it == remap.end()) continue;
    out.images.push_image(d.images.image(i));
    out.labels.push_back(it->second);
  }
  return out;
}

}  // namespace realmix
