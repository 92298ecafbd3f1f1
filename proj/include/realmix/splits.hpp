#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "realmix/dataset.hpp"
#include "realmix/error.hpp"
#include "realmix/rng.hpp"

namespace realmix {

struct SplitSpec {
  std::vector<int> labeled_indices;
  std::vector<int> unlabeled_indices;
  int64_t seed = 0;
  std::string source_checksum;  // dataset train-images checksum; empty = unchecked

  bool operator==(const SplitSpec& o) const {
    return labeled_indices == o.labeled_indices && unlabeled_indices == o.unlabeled_indices &&
           seed == o.seed && source_checksum == o.source_checksum;
  }
};

namespace detail {

inline std::vector<std::vector<int>> indices_by_class(const Dataset& d) {
  std::vector<std::vector<int>> by_class(static_cast<size_t>(d.num_classes()));
  for (int i = 0; i < d.size(); ++i)
    by_class[static_cast<size_t>(d.labels[static_cast<size_t>(i)])].push_back(i);
  return by_class;
}

}  // namespace detail

// Class-balanced label discard: keeps n_labels/K seeded picks per class as
// the labeled set, everything else becomes the unlabeled pool. Labels of
// unlabeled samples stay in the dataset but the trainer never reads them.
inline SplitSpec make_label_split(const Dataset& d, int n_labels, int64_t seed) {
  const int k = d.num_classes();
  if (n_labels <= 0 || n_labels > d.size())
    throw ValidationError("make_label_split: n_labels must be in [1, dataset size]");
  if (n_labels % k != 0)
    throw ValidationError("make_label_split: n_labels must be divisible by num_classes");
  const int per_class = n_labels / k;

  auto by_class = detail::indices_by_class(d);
  RngStream stream(static_cast<uint64_t>(seed), streams::kSplit);

  SplitSpec spec;
  spec.seed = seed;
  spec.source_checksum = dataset_checksum(d);
  std::vector<char> is_labeled(static_cast<size_t>(d.size()), 0);
  for (int c = 0; c < k; ++c) {
    auto& idx = by_class[static_cast<size_t>(c)];
    if (static_cast<int>(idx.size()) < per_class)
      throw ValidationError("make_label_split: class " + std::to_string(c) +
                            " has fewer than n_labels/K samples");
    Rng rng = stream.at(static_cast<uint64_t>(c));
    rng.shuffle(idx);
    for (int i = 0; i < per_class; ++i) is_labeled[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
  }
  for (int i = 0; i < d.size(); ++i)
    (is_labeled[static_cast<size_t>(i)] ? spec.labeled_indices : spec.unlabeled_indices).push_back(i);
  return spec;
}

// Distribution-mismatch split. The labeled set takes labels_per_class seeded
// picks from each labeled class (independent of the mismatch level, so all
// levels of a sweep share the same labeled data). The unlabeled pool draws
// from 4 classes, round(4*pct/100) of them outside the labeled set, with
// per-class counts equalized by truncation to the smallest available pool.
inline SplitSpec make_mismatch_split(const Dataset& d, const std::vector<int>& labeled_classes,
                                     int labels_per_class, int mismatch_pct, int64_t seed) {
  static const std::set<int> allowed = {0, 25, 50, 75, 100};
  if (!allowed.count(mismatch_pct))
    throw ValidationError("make_mismatch_split: mismatch_pct must be one of {0,25,50,75,100}");
  if (labeled_classes.empty())
    throw ValidationError("make_mismatch_split: labeled_classes must be non-empty");
  if (labels_per_class <= 0)
    throw ValidationError("make_mismatch_split: labels_per_class must be >= 1");

  const int k = d.num_classes();
  std::set<int> in_set(labeled_classes.begin(), labeled_classes.end());
  if (in_set.size() != labeled_classes.size())
    throw ValidationError("make_mismatch_split: duplicate labeled class");
  for (int c : labeled_classes)
    if (c < 0 || c >= k) throw ValidationError("make_mismatch_split: labeled class out of range");

  const int n_out = (4 * mismatch_pct + 50) / 100;  // round(4*pct/100)
  const int n_in = 4 - n_out;
  std::vector<int> out_candidates;
  for (int c = 0; c < k; ++c)
    if (!in_set.count(c)) out_candidates.push_back(c);
  if (static_cast<int>(out_candidates.size()) < n_out)
    throw ValidationError("make_mismatch_split: dataset lacks enough out-of-set classes");
  if (static_cast<int>(labeled_classes.size()) < n_in)
    throw ValidationError("make_mismatch_split: dataset lacks enough in-set classes");

  auto by_class = detail::indices_by_class(d);
  RngStream stream(static_cast<uint64_t>(seed), streams::kSplit);

  // Labeled picks first; keyed per class so they do not depend on pct.
  SplitSpec spec;
  spec.seed = seed;
  spec.source_checksum = dataset_checksum(d);
  std::vector<char> taken(static_cast<size_t>(d.size()), 0);
  for (int c : std::set<int>(in_set)) {
    auto idx = by_class[static_cast<size_t>(c)];
    if (static_cast<int>(idx.size()) < labels_per_class)
      throw ValidationError("make_mismatch_split: class " + std::to_string(c) +
                            " has fewer than labels_per_class samples");
    Rng rng = stream.at(1, static_cast<uint64_t>(c));
    rng.shuffle(idx);
    for (int i = 0; i < labels_per_class; ++i) {
      spec.labeled_indices.push_back(idx[static_cast<size_t>(i)]);
      taken[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
    }
  }
  std::sort(spec.labeled_indices.begin(), spec.labeled_indices.end());

  // Seeded choice of the 4 unlabeled classes.
  std::vector<int> in_sorted(labeled_classes);
  std::sort(in_sorted.begin(), in_sorted.end());
  Rng rin = stream.at(2, 0);
  rin.shuffle(in_sorted);
  Rng rout = stream.at(2, 1);
  rout.shuffle(out_candidates);
  std::vector<int> unl_classes(in_sorted.begin(), in_sorted.begin() + n_in);
  unl_classes.insert(unl_classes.end(), out_candidates.begin(), out_candidates.begin() + n_out);

  // Equalize class pools by truncation to the minimum available count.
  int avail = d.size();
  std::vector<std::vector<int>> pools;
  for (int c : unl_classes) {
    std::vector<int> pool;
    for (int i : by_class[static_cast<size_t>(c)])
      if (!taken[static_cast<size_t>(i)]) pool.push_back(i);
    Rng rng = stream.at(3, static_cast<uint64_t>(c));
    rng.shuffle(pool);
    avail = std::min(avail, static_cast<int>(pool.size()));
    pools.push_back(std::move(pool));
  }
  if (avail == 0) throw ValidationError("make_mismatch_split: an unlabeled class pool is empty");
  for (auto& pool : pools)
    spec.unlabeled_indices.insert(spec.unlabeled_indices.end(), pool.begin(), pool.begin() + avail);
  std::sort(spec.unlabeled_indices.begin(), spec.unlabeled_indices.end());
  return spec;
}

namespace detail {

inline std::string split_payload(const SplitSpec& s) {
  nlohmann::json j;
  j["labeled"] = s.labeled_indices;
  j["unlabeled"] = s.unlabeled_indices;
  j["seed"] = s.seed;
  j["source_checksum"] = s.source_checksum;
  return j.dump();
}

}  // namespace detail

inline void save_split(const SplitSpec& s, const std::string& path) {
  nlohmann::json j;
  j["format"] = "realmix-split/v1";
  j["labeled"] = s.labeled_indices;
  j["unlabeled"] = s.unlabeled_indices;
  j["seed"] = s.seed;
  j["source_checksum"] = s.source_checksum;
  j["checksum"] = "fnv1a64:" + checksum_hex(fnv1a64(detail::split_payload(s)));
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

inline SplitSpec load_split(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open split file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception&) {
    throw IoError("split file checksum/parse failure (corrupt or truncated): " + path);
  }
  SplitSpec s;
  try {
    s.labeled_indices = j.at("labeled").get<std::vector<int>>();
    s.unlabeled_indices = j.at("unlabeled").get<std::vector<int>>();
    s.seed = j.at("seed").get<int64_t>();
    s.source_checksum = j.value("source_checksum", "");
    std::string want = j.at("checksum").get<std::string>();
    if (want != "fnv1a64:" + checksum_hex(fnv1a64(detail::split_payload(s))))
      throw IoError("split file checksum mismatch (corrupt): " + path);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed split file " + path + ": " + e.what());
  }
  std::set<int> lab(s.labeled_indices.begin(), s.labeled_indices.end());
  for (int i : s.unlabeled_indices)
    if (lab.count(i)) throw ValidationError("split: labeled and unlabeled sets overlap");
  return s;
}

inline void validate_split_against(const SplitSpec& s, const Dataset& d) {
  for (int i : s.labeled_indices)
    if (i < 0 || i >= d.size()) throw ValidationError("split: labeled index out of range");
  for (int i : s.unlabeled_indices)
    if (i < 0 || i >= d.size()) throw ValidationError("split: unlabeled index out of range");
  if (!s.source_checksum.empty() && s.source_checksum != dataset_checksum(d))
    throw ValidationError("split: source_checksum does not match dataset");
}

}  // namespace realmix
