#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "realmix/config.hpp"

using namespace realmix;
namespace fs = std::filesystem;

namespace {
std::string write_temp(const std::string& name, const std::string& content) {
  fs::path p = fs::temp_directory_path() / name;
  std::ofstream f(p, std::ios::trunc);
  f << content;
  return p.string();
}
}  // namespace

TEST_CASE("minimal config file picks up documented defaults") {
  auto path = write_temp("cfg_min.json", R"({"num_classes": 10, "total_steps": 100})");
  Config c = load_config(path);
  REQUIRE(c.num_classes == 10);
  REQUIRE(c.total_steps == 100);
  REQUIRE(c.temperature == 0.5);
  REQUIRE(c.alpha == 0.75);
  REQUIRE(c.lambda_max == 75.0);
  REQUIRE(c.extend_copies == 50);
  REQUIRE(c.ema_decay == 0.999);
  REQUIRE(c.tsa_schedule == TsaSchedule::kLinear);
}

TEST_CASE("constraint violations name the offending field") {
  auto path = write_temp("cfg_bad.json", R"({"gamma": 1.5})");
  try {
    load_config(path);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    REQUIRE(std::string(e.what()).find("gamma") != std::string::npos);
  }

  REQUIRE_THROWS_AS(load_config(write_temp("cfg_bad2.json", R"({"alpha": 0})")), ValidationError);
  REQUIRE_THROWS_AS(load_config(write_temp("cfg_bad3.json", R"({"temperature": -1})")),
                    ValidationError);
  REQUIRE_THROWS_AS(load_config(write_temp("cfg_bad4.json", R"({"ema_decay": 1.2})")),
                    ValidationError);
  REQUIRE_THROWS_AS(load_config(write_temp("cfg_bad5.json", R"({"tsa_schedule": "cosine"})")),
                    ValidationError);
}

TEST_CASE("missing or unparsable files") {
  REQUIRE_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
  REQUIRE_THROWS_AS(load_config(write_temp("cfg_syntax.json", "{ not json")), ValidationError);
}

TEST_CASE("identical files produce identical config hashes") {
  const std::string body = R"({"num_classes": 6, "gamma": 0.4, "seed": 9})";
  Config a = load_config(write_temp("cfg_h1.json", body));
  Config b = load_config(write_temp("cfg_h2.json", body));
  REQUIRE(config_hash(a) == config_hash(b));

  Config c = b;
  c.gamma = 0.41;
  REQUIRE(config_hash(c) != config_hash(b));
}

TEST_CASE("unknown keys warn instead of failing") {
  std::vector<std::string> warnings;
  load_config(write_temp("cfg_unknown.json", R"({"num_classes": 4, "wobble": 3})"), &warnings);
  REQUIRE(warnings.size() == 1);
  REQUIRE(warnings[0].find("wobble") != std::string::npos);
}

TEST_CASE("nested policies parse and dotted file keys are accepted") {
  Config c = load_config(write_temp("cfg_pol.json",
      R"({"extend_policy": {"cutout_size": 6}, "augment_policy.translate_max": 2})"));
  REQUIRE(c.extend_policy.cutout_size == 6);
  REQUIRE(c.augment_policy.translate_max == 2);
}

TEST_CASE("overrides: dotted keys, scalars, schedules, arrays") {
  Config c;
  apply_override(c, "lambda_max=0");
  REQUIRE(c.lambda_max == 0.0);
  apply_override(c, "extend_policy.cutout_size=0");
  REQUIRE(c.extend_policy.cutout_size == 0);
  apply_override(c, "tsa_schedule=log");
  REQUIRE(c.tsa_schedule == TsaSchedule::kLog);
  apply_override(c, "num_classes=6");
  apply_override(c, "class_subset=[0,1,2,3,4,5]");
  REQUIRE(c.class_subset.size() == 6);

  REQUIRE_THROWS_AS(apply_override(c, "nonsense_key=1"), ValidationError);
  REQUIRE_THROWS_AS(apply_override(c, "gamma=2"), ValidationError);  // re-validated
  REQUIRE_THROWS_AS(apply_override(c, "no_equals"), ValidationError);
}

TEST_CASE("config round-trips through save/load") {
  Config c;
  c.gamma = 0.6;
  c.tsa_enabled = true;
  c.tsa_schedule = TsaSchedule::kExp;
  c.class_subset = {1, 3, 5};
  c.num_classes = 3;
  auto path = (fs::temp_directory_path() / "cfg_rt.json").string();
  save_config(c, path);
  Config back = load_config(path);
  REQUIRE(config_hash(back) == config_hash(c));
}
