#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "shwy/shwy.h"

namespace fs = std::filesystem;

namespace {

std::string settings_get(const shwy_settings* s, const char* key) {
  size_t needed = 0;
  REQUIRE(shwy_settings_get(s, key, nullptr, 0, &needed) == SHWY_ERR_BUFFER_TOO_SMALL);
  std::string out(needed, '\0');
  REQUIRE(shwy_settings_get(s, key, out.data(), out.size(), &needed) == SHWY_OK);
  out.resize(needed - 1);
  return out;
}

shwy_settings* quick_settings() {
  shwy_settings* s = nullptr;
  REQUIRE(shwy_settings_create(&s) == SHWY_OK);
  REQUIRE(shwy_settings_set(s, "dqn.total_steps", "300") == SHWY_OK);
  REQUIRE(shwy_settings_set(s, "dqn.learning_starts", "100") == SHWY_OK);
  REQUIRE(shwy_settings_set(s, "dqn.hidden", "16") == SHWY_OK);
  REQUIRE(shwy_settings_set(s, "dqn.batch_size", "8") == SHWY_OK);
  REQUIRE(shwy_settings_set(s, "eval.episodes", "4") == SHWY_OK);
  return s;
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "shwy_c_api_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("library basics") {
  CHECK(std::strcmp(shwy_version(), "1.0.0") == 0);
  CHECK(std::strcmp(shwy_status_name(SHWY_ERR_PARSE), "parse error") == 0);
  CHECK(shwy_settings_key_count() > 50);
  CHECK(shwy_settings_key_name(shwy_settings_key_count()) == nullptr);
  CHECK(std::strcmp(shwy_settings_key_name(0), "scenario.kind") == 0);
  shwy_set_log_level(SHWY_LOG_ERROR);
}

TEST_CASE("null arguments and error messages") {
  CHECK(shwy_settings_create(nullptr) == SHWY_ERR_INVALID_ARGUMENT);
  CHECK(std::strlen(shwy_last_error()) > 0);
  CHECK(shwy_model_load(nullptr, nullptr) == SHWY_ERR_INVALID_ARGUMENT);
  shwy_settings_destroy(nullptr);
  shwy_model_destroy(nullptr);
  shwy_report_destroy(nullptr);
  shwy_train_log_destroy(nullptr);
}

TEST_CASE("settings through the C API") {
  shwy_settings* s = nullptr;
  REQUIRE(shwy_settings_create(&s) == SHWY_OK);
  CHECK(settings_get(s, "dqn.total_steps") == "20000");
  CHECK(shwy_settings_set(s, "dqn.total_steps", "abc") == SHWY_ERR_INVALID_ARGUMENT);
  CHECK(std::string(shwy_last_error()).find("dqn.total_steps") != std::string::npos);
  CHECK(shwy_settings_set(s, "no.such", "1") == SHWY_ERR_INVALID_ARGUMENT);
  int is_set = -1;
  CHECK(shwy_settings_is_set(s, "dqn.seed", &is_set) == SHWY_OK);
  CHECK(is_set == 0);
  CHECK(shwy_settings_set(s, "dqn.seed", "43") == SHWY_OK);
  CHECK(shwy_settings_is_set(s, "dqn.seed", &is_set) == SHWY_OK);
  CHECK(is_set == 1);

  char small[4];
  size_t needed = 0;
  CHECK(shwy_settings_snapshot(s, small, sizeof small, &needed) == SHWY_ERR_BUFFER_TOO_SMALL);
  std::string snap(needed, '\0');
  REQUIRE(shwy_settings_snapshot(s, snap.data(), snap.size(), &needed) == SHWY_OK);
  snap.resize(needed - 1);
  shwy_settings* t = nullptr;
  REQUIRE(shwy_settings_create(&t) == SHWY_OK);
  CHECK(shwy_settings_apply_snapshot(t, snap.c_str()) == SHWY_OK);
  CHECK(settings_get(t, "dqn.seed") == "43");
  CHECK(shwy_settings_apply_snapshot(t, "{not json") == SHWY_ERR_FORMAT);

  CHECK(shwy_settings_load_file(s, "/nonexistent.ini") == SHWY_ERR_IO);
  CHECK(shwy_settings_set(s, "dqn.gamma", "2") == SHWY_OK);
  CHECK(shwy_settings_validate(s) == SHWY_ERR_INVALID_ARGUMENT);
  shwy_settings_destroy(s);
  shwy_settings_destroy(t);
}

TEST_CASE("train, save, load, decide, evaluate") {
  const fs::path dir = scratch_dir();
  shwy_settings* s = quick_settings();
  REQUIRE(shwy_settings_set(s, "shaping.scheme", "dense") == SHWY_OK);
  REQUIRE(shwy_settings_set(s, "llm.backend", "mock-conservative") == SHWY_OK);

  shwy_model* model = nullptr;
  shwy_train_log* log = nullptr;
  REQUIRE(shwy_train(s, 0, &model, &log) == SHWY_OK);
  shwy_train_counters c{};
  REQUIRE(shwy_train_log_counters(log, &c) == SHWY_OK);
  CHECK(c.env_steps == 300);
  CHECK(c.episodes > 0);
  CHECK(c.scorer_requests == 300);
  CHECK(c.scorer_cache_hits + c.scorer_cache_misses == 300);
  CHECK(shwy_train_log_write_csv(log, (dir / "log.csv").c_str()) == SHWY_OK);
  CHECK(fs::file_size(dir / "log.csv") > 0);

  CHECK(shwy_model_save(model, (dir / "m.shwy").c_str()) == SHWY_OK);
  shwy_model* loaded = nullptr;
  REQUIRE(shwy_model_load((dir / "m.shwy").c_str(), &loaded) == SHWY_OK);
  size_t needed = 0;
  char meta[512];
  REQUIRE(shwy_model_metadata(loaded, meta, sizeof meta, &needed) == SHWY_OK);
  CHECK(std::string(meta).find("\"mock-conservative\"") != std::string::npos);
  const double obs[4] = {25.0, 10.0, 3.0, 10.0};
  int a1 = -1, a2 = -2;
  CHECK(shwy_model_decide(model, obs, &a1) == SHWY_OK);
  CHECK(shwy_model_decide(loaded, obs, &a2) == SHWY_OK);
  CHECK(a1 == a2);
  CHECK(a1 >= 0);
  CHECK(a1 <= 4);

  shwy_report* hybrid = nullptr;
  REQUIRE(shwy_evaluate(s, SHWY_POLICY_HYBRID, loaded, &hybrid) == SHWY_OK);
  shwy_report* rl = nullptr;
  REQUIRE(shwy_evaluate(s, SHWY_POLICY_RL, loaded, &rl) == SHWY_OK);
  shwy_report* llm = nullptr;
  CHECK(shwy_evaluate(s, SHWY_POLICY_LLM, loaded, &llm) == SHWY_ERR_INVALID_ARGUMENT);
  REQUIRE(shwy_evaluate(s, SHWY_POLICY_LLM, nullptr, &llm) == SHWY_OK);
  CHECK(shwy_evaluate(s, SHWY_POLICY_RL, nullptr, &rl) == SHWY_ERR_INVALID_ARGUMENT);

  shwy_report_summary sum{};
  REQUIRE(shwy_report_summary_get(llm, &sum) == SHWY_OK);
  CHECK(sum.episodes == 4);
  CHECK(sum.lane_change_score <= 0.5);
  CHECK(sum.llm_fallbacks == 0);

  CHECK(shwy_report_write(hybrid, (dir / "h.json").c_str(), SHWY_REPORT_JSON) == SHWY_OK);
  CHECK(shwy_report_write(hybrid, (dir / "h.csv").c_str(), SHWY_REPORT_CSV) == SHWY_OK);
  shwy_report* back = nullptr;
  REQUIRE(shwy_report_load((dir / "h.json").c_str(), &back) == SHWY_OK);
  CHECK(shwy_report_load((dir / "h.csv").c_str(), &back) == SHWY_ERR_FORMAT);

  const shwy_report* all[] = {hybrid, rl, llm};
  CHECK(shwy_compare_write(all, 3, (dir / "cmp.txt").c_str(), (dir / "cmp.csv").c_str()) == SHWY_OK);
  CHECK(slurp(dir / "cmp.txt").find("hybrid dense") != std::string::npos);
  CHECK(shwy_compare_write(all, 1, (dir / "x.txt").c_str(), (dir / "x.csv").c_str()) ==
        SHWY_ERR_INVALID_ARGUMENT);

  // Unshaped model cannot back a hybrid policy.
  shwy_settings* plain = quick_settings();
  shwy_model* rl_model = nullptr;
  shwy_train_log* rl_log = nullptr;
  REQUIRE(shwy_train(plain, 0, &rl_model, &rl_log) == SHWY_OK);
  shwy_report* bad = nullptr;
  CHECK(shwy_evaluate(plain, SHWY_POLICY_HYBRID, rl_model, &bad) == SHWY_ERR_INVALID_ARGUMENT);

  for (shwy_report* r : {hybrid, rl, llm, back}) shwy_report_destroy(r);
  shwy_model_destroy(model);
  shwy_model_destroy(loaded);
  shwy_model_destroy(rl_model);
  shwy_train_log_destroy(log);
  shwy_train_log_destroy(rl_log);
  shwy_settings_destroy(s);
  shwy_settings_destroy(plain);
  fs::remove_all(dir);
}

TEST_CASE("corrupt model file") {
  const fs::path dir = scratch_dir();
  std::ofstream(dir / "junk.shwy") << "SHWY garbage";
  shwy_model* m = nullptr;
  CHECK(shwy_model_load((dir / "junk.shwy").c_str(), &m) == SHWY_ERR_FORMAT);
  CHECK(m == nullptr);
  CHECK(shwy_model_load((dir / "absent.shwy").c_str(), &m) == SHWY_ERR_IO);
  fs::remove_all(dir);
}

TEST_CASE("fixture recording with a mock backend") {
  const fs::path dir = scratch_dir();
  shwy_settings* s = nullptr;
  REQUIRE(shwy_settings_create(&s) == SHWY_OK);
  REQUIRE(shwy_settings_set(s, "llm.backend", "mock-balanced") == SHWY_OK);
  char path[1024];
  size_t needed = 0;
  shwy_fixture_summary sum{};
  REQUIRE(shwy_record_fixtures(s, dir.c_str(), path, sizeof path, &needed, &sum) == SHWY_OK);
  CHECK(fs::is_directory(path));
  CHECK(sum.items > 0);
  CHECK(sum.transport_errors == 0);
  CHECK(sum.parsed + sum.parse_errors == sum.items);
  shwy_settings_destroy(s);
  fs::remove_all(dir);
}
