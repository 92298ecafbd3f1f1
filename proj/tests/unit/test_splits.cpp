#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "realmix/splits.hpp"
#include "realmix/synth.hpp"

using namespace realmix;
namespace fs = std::filesystem;

namespace {

DatasetBundle& tiny_data() {
  static DatasetBundle data = make_synthetic_dataset(40, 8, 1234);
  return data;
}

std::map<int, int> class_histogram(const Dataset& d, const std::vector<int>& indices) {
  std::map<int, int> hist;
  for (int i : indices) ++hist[d.labels[static_cast<size_t>(i)]];
  return hist;
}

void check_disjoint_and_in_range(const SplitSpec& s, int size) {
  std::set<int> lab(s.labeled_indices.begin(), s.labeled_indices.end());
  REQUIRE(lab.size() == s.labeled_indices.size());
  for (int i : s.unlabeled_indices) {
    REQUIRE(i >= 0);
    REQUIRE(i < size);
    REQUIRE(lab.count(i) == 0);
  }
  for (int i : s.labeled_indices) {
    REQUIRE(i >= 0);
    REQUIRE(i < size);
  }
}

}  // namespace

TEST_CASE("label split is exactly class-balanced") {
  const auto& d = tiny_data().train;  // 400 samples, 10 classes
  SplitSpec s = make_label_split(d, 250, 5);
  REQUIRE(s.labeled_indices.size() == 250);
  REQUIRE(s.unlabeled_indices.size() == 150);
  auto hist = class_histogram(d, s.labeled_indices);
  REQUIRE(hist.size() == 10);
  for (const auto& [cls, count] : hist) REQUIRE(count == 25);
  check_disjoint_and_in_range(s, d.size());
}

TEST_CASE("label split boundary: all labels kept") {
  const auto& d = tiny_data().train;
  SplitSpec s = make_label_split(d, d.size(), 3);
  REQUIRE(static_cast<int>(s.labeled_indices.size()) == d.size());
  REQUIRE(s.unlabeled_indices.empty());
}

TEST_CASE("label split is deterministic and seed-sensitive") {
  const auto& d = tiny_data().train;
  REQUIRE(make_label_split(d, 100, 7) == make_label_split(d, 100, 7));
  REQUIRE_FALSE(make_label_split(d, 100, 7) == make_label_split(d, 100, 8));
}

TEST_CASE("label split rejects infeasible requests") {
  const auto& d = tiny_data().train;
  REQUIRE_THROWS_AS(make_label_split(d, d.size() + 10, 1), ValidationError);
  REQUIRE_THROWS_AS(make_label_split(d, 25, 1), ValidationError);  // not divisible by 10
  REQUIRE_THROWS_AS(make_label_split(d, 0, 1), ValidationError);
}

TEST_CASE("property: random label splits stay disjoint, balanced, in range") {
  const auto& d = tiny_data().train;
  for (int64_t seed = 0; seed < 30; ++seed) {
    const int n = 10 * (1 + static_cast<int>(seed % 13));
    SplitSpec s = make_label_split(d, n, seed);
    check_disjoint_and_in_range(s, d.size());
    auto hist = class_histogram(d, s.labeled_indices);
    for (const auto& [cls, count] : hist) REQUIRE(count == n / 10);
  }
}

TEST_CASE("mismatch split: out-of-set class count follows the level") {
  const auto& data = tiny_data();
  const std::vector<int> shapes = data.groups.at("shapes");
  std::set<int> in_set(shapes.begin(), shapes.end());

  const std::map<int, int> expected_out = {{0, 0}, {25, 1}, {50, 2}, {75, 3}, {100, 4}};
  for (const auto& [pct, want_out] : expected_out) {
    SplitSpec s = make_mismatch_split(data.train, shapes, 30, pct, 11);
    auto hist = class_histogram(data.train, s.unlabeled_indices);
    REQUIRE(hist.size() == 4);
    int out_count = 0;
    int per_class = -1;
    for (const auto& [cls, count] : hist) {
      if (!in_set.count(cls)) ++out_count;
      if (per_class < 0) per_class = count;
      REQUIRE(count == per_class);  // equalized pools
    }
    REQUIRE(out_count == want_out);
    check_disjoint_and_in_range(s, data.train.size());

    // labeled part: 30 per labeled class, independent of pct
    auto lhist = class_histogram(data.train, s.labeled_indices);
    REQUIRE(lhist.size() == shapes.size());
    for (const auto& [cls, count] : lhist) {
      REQUIRE(in_set.count(cls) == 1);
      REQUIRE(count == 30);
    }
  }
}

TEST_CASE("mismatch split: labeled set is identical across levels for one seed") {
  const auto& data = tiny_data();
  const std::vector<int> shapes = data.groups.at("shapes");
  SplitSpec a = make_mismatch_split(data.train, shapes, 25, 0, 4);
  SplitSpec b = make_mismatch_split(data.train, shapes, 25, 100, 4);
  REQUIRE(a.labeled_indices == b.labeled_indices);
}

TEST_CASE("mismatch split input validation") {
  const auto& data = tiny_data();
  const std::vector<int> shapes = data.groups.at("shapes");
  REQUIRE_THROWS_AS(make_mismatch_split(data.train, shapes, 25, 30, 1), ValidationError);
  REQUIRE_THROWS_AS(make_mismatch_split(data.train, shapes, 100000, 0, 1), ValidationError);
  REQUIRE_THROWS_AS(make_mismatch_split(data.train, {}, 25, 0, 1), ValidationError);
  // 8 labeled classes leave only 2 out-of-set candidates; 100% needs 4
  REQUIRE_THROWS_AS(make_mismatch_split(data.train, {0, 1, 2, 3, 4, 5, 6, 7}, 10, 100, 1),
                    ValidationError);
}

TEST_CASE("split save/load round trip and determinism") {
  const auto& data = tiny_data();
  SplitSpec s = make_label_split(data.train, 50, 21);
  auto dir = fs::temp_directory_path() / "realmix_split_test";
  fs::create_directories(dir);

  save_split(s, (dir / "a.json").string());
  save_split(s, (dir / "b.json").string());
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  REQUIRE(slurp(dir / "a.json") == slurp(dir / "b.json"));

  SplitSpec loaded = load_split((dir / "a.json").string());
  REQUIRE(loaded == s);
  REQUIRE_NOTHROW(validate_split_against(loaded, data.train));
}

TEST_CASE("corrupted split files are rejected") {
  const auto& data = tiny_data();
  SplitSpec s = make_label_split(data.train, 50, 21);
  auto dir = fs::temp_directory_path() / "realmix_split_corrupt";
  fs::create_directories(dir);
  const std::string path = (dir / "s.json").string();
  save_split(s, path);

  // truncation
  fs::resize_file(path, fs::file_size(path) / 2);
  REQUIRE_THROWS_AS(load_split(path), IoError);

  // payload tamper with stale checksum
  save_split(s, path);
  {
    std::ifstream f(path);
    nlohmann::json j;
    f >> j;
    j["labeled"][0] = j["labeled"][0].get<int>() + 1;
    std::ofstream o(path, std::ios::trunc);
    o << j.dump(2);
  }
  REQUIRE_THROWS_AS(load_split(path), IoError);
}

TEST_CASE("split validation catches dataset mismatch") {
  const auto& data = tiny_data();
  SplitSpec s = make_label_split(data.train, 50, 2);
  s.source_checksum = "not-the-right-checksum";
  REQUIRE_THROWS_AS(validate_split_against(s, data.train), ValidationError);

  SplitSpec bad = make_label_split(data.train, 50, 2);
  bad.unlabeled_indices.push_back(data.train.size() + 5);
  REQUIRE_THROWS_AS(validate_split_against(bad, data.train), ValidationError);
}
