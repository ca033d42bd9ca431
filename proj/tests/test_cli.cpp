#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "shwy_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int shwy(const std::string& args) {
  const std::string cmd = std::string("\"") + SHWY_CLI_PATH + "\" -q " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const std::string kQuick =
    " --steps 400 --set dqn.learning_starts=100 --set dqn.hidden=16 --set dqn.batch_size=8 --progress 0";

}  // namespace

TEST_CASE("exit codes") {
  CHECK(shwy("") == 2);
  CHECK(shwy("--help") == 0);
  CHECK(shwy("train --steps -3") == 2);
  CHECK(shwy("train --set dqn.bogus=1") == 2);
  CHECK(shwy("train --set dqn.gamma=7" + kQuick) == 2);
  CHECK(shwy("eval --policy rl") == 2);  // model file required
  const fs::path junk = work_dir() / "junk.shwy";
  std::ofstream(junk) << "not a model";
  CHECK(shwy("eval --policy rl --model-file \"" + junk.string() + "\"") == 1);
}

TEST_CASE("manifest reruns reproduce the model") {
  const fs::path a = work_dir() / "a.shwy";
  const fs::path b = work_dir() / "b.shwy";
  REQUIRE(shwy("train --seed 7 --out \"" + a.string() + "\"" + kQuick) == 0);
  const fs::path manifest = work_dir() / "a.manifest.json";
  REQUIRE(fs::exists(manifest));
  const auto m = nlohmann::json::parse(slurp(manifest));
  CHECK(m["schema"] == "shwy.manifest/1");
  CHECK(m["command"] == "train");
  CHECK(m["settings"]["dqn.seed"] == 7);
  CHECK(m["settings"]["scenario.kind"] == "highway-fast");
  REQUIRE(shwy("train --from-manifest \"" + manifest.string() + "\" --out \"" + b.string() + "\" --progress 0") == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(work_dir() / "a.trainlog.csv") == slurp(work_dir() / "b.trainlog.csv"));
}

TEST_CASE("eval and compare") {
  const fs::path model = work_dir() / "m.shwy";
  REQUIRE(shwy("train --out \"" + model.string() + "\"" + kQuick) == 0);
  const fs::path rl = work_dir() / "rl";
  const fs::path llm = work_dir() / "llm";
  REQUIRE(shwy("eval --policy rl --episodes 3 --model-file \"" + model.string() + "\" --report \"" +
               rl.string() + "\" --format both") == 0);
  REQUIRE(shwy("eval --policy llm --scorer mock-conservative --episodes 3 --report \"" + llm.string() + "\"") == 0);
  CHECK(fs::exists(rl.string() + ".csv"));
  CHECK(fs::exists(rl.string() + ".manifest.json"));
  CHECK(shwy("eval --policy hybrid --episodes 3 --model-file \"" + model.string() + "\"") == 2);
  const fs::path cmp = work_dir() / "cmp";
  REQUIRE(shwy("compare \"" + rl.string() + ".json\" \"" + llm.string() + ".json\" --out \"" + cmp.string() + "\"") ==
          0);
  const std::string table = slurp(cmp.string() + ".txt");
  CHECK(table.find("llm") != std::string::npos);
  CHECK(table.find("SR (%)") != std::string::npos);
  CHECK(shwy("compare \"" + rl.string() + ".json\"") != 0);
}
