// Command-line front end. Links only against the C API in shwy/shwy.h.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shwy/shwy.h"

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

constexpr const char* kManifestSchema = "shwy.manifest/1";
constexpr const char* kEndpointEnv = "SHWY_ENDPOINT";

// Carries the exit code out of nested helpers.
struct Exit {
  int code;
};

[[noreturn]] void die(int code, const std::string& message) {
  std::fprintf(stderr, "shwy: error: %s\n", message.c_str());
  throw Exit{code};
}

// Invalid arguments are usage errors; everything else is a runtime failure.
void check(shwy_status status, const std::string& context) {
  if (status == SHWY_OK) return;
  die(status == SHWY_ERR_INVALID_ARGUMENT ? 2 : 1,
      context + ": " + shwy_last_error() + " [" + shwy_status_name(status) + "]");
}

std::string read_string(const std::function<shwy_status(char*, size_t, size_t*)>& call,
                        const std::string& context) {
  size_t needed = 0;
  shwy_status status = call(nullptr, 0, &needed);
  if (status != SHWY_ERR_BUFFER_TOO_SMALL) check(status, context);
  std::string out(needed, '\0');
  check(call(out.data(), out.size(), &needed), context);
  out.resize(needed - 1);
  return out;
}

template <typename T, void (*Destroy)(T*)>
struct Deleter {
  void operator()(T* p) const { Destroy(p); }
};
using SettingsPtr = std::unique_ptr<shwy_settings, Deleter<shwy_settings, shwy_settings_destroy>>;
using ModelPtr = std::unique_ptr<shwy_model, Deleter<shwy_model, shwy_model_destroy>>;
using TrainLogPtr =
    std::unique_ptr<shwy_train_log, Deleter<shwy_train_log, shwy_train_log_destroy>>;
using ReportPtr = std::unique_ptr<shwy_report, Deleter<shwy_report, shwy_report_destroy>>;

std::string settings_get(const shwy_settings* s, const std::string& key) {
  return read_string([&](char* b, size_t c, size_t* n) { return shwy_settings_get(s, key.c_str(), b, c, n); },
                     "reading " + key);
}

bool settings_is_set(const shwy_settings* s, const std::string& key) {
  int is_set = 0;
  check(shwy_settings_is_set(s, key.c_str(), &is_set), "querying " + key);
  return is_set != 0;
}

void settings_set(shwy_settings* s, const std::string& key, const std::string& value) {
  check(shwy_settings_set(s, key.c_str(), value.c_str()), "setting " + key);
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ojson read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) die(1, "cannot read " + path);
  try {
    return ojson::parse(std::string(std::istreambuf_iterator<char>(in), {}));
  } catch (const nlohmann::json::exception& e) {
    die(1, path + " is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::string& path, const ojson& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
  out.close();
  if (!out) die(1, "cannot write " + path);
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) die(1, "cannot create " + parent.string() + ": " + ec.message());
}

// Options shared by every command that builds a settings object.
struct CommonOptions {
  std::string config;
  std::string from_manifest;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonOptions& c) {
  cmd->add_option("--config", c.config, "INI file with [scenario], [reward], [dqn], [shaping], [llm], [eval]")
      ->check(CLI::ExistingFile);
  cmd->add_option("--from-manifest", c.from_manifest, "Rerun with the settings recorded in a manifest")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override any setting, e.g. --set dqn.gamma=0.99")
      ->type_name("KEY=VALUE");
}

// Flag value to settings key, applied when the flag was given.
struct FlagBinding {
  CLI::Option* option;
  std::string key;
  std::function<std::string()> value;
};

// Builds settings in increasing precedence: command defaults, manifest or
// config file, the endpoint environment variable, --set overrides, then
// dedicated flags.
SettingsPtr build_settings(const CommonOptions& c, const std::vector<FlagBinding>& flags,
                           const ojson* manifest,
                           const std::vector<std::pair<std::string, std::string>>& defaults = {}) {
  shwy_settings* raw = nullptr;
  check(shwy_settings_create(&raw), "creating settings");
  SettingsPtr s(raw);
  for (const auto& [key, value] : defaults) settings_set(s.get(), key, value);
  if (manifest) {
    const std::string snapshot = manifest->at("settings").dump();
    check(shwy_settings_apply_snapshot(s.get(), snapshot.c_str()), "applying manifest settings");
  }
  if (!c.config.empty()) check(shwy_settings_load_file(s.get(), c.config.c_str()), c.config);
  if (const char* env = std::getenv(kEndpointEnv); env && *env) settings_set(s.get(), "llm.endpoint", env);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) die(2, "--set expects KEY=VALUE, got '" + kv + "'");
    settings_set(s.get(), kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const FlagBinding& f : flags) {
    if (f.option->count() > 0) settings_set(s.get(), f.key, f.value());
  }
  check(shwy_settings_validate(s.get()), "invalid configuration");
  return s;
}

std::optional<ojson> load_manifest(const CommonOptions& c, const std::string& command) {
  if (c.from_manifest.empty()) return std::nullopt;
  ojson m = read_json_file(c.from_manifest);
  if (!m.is_object() || m.value("schema", "") != kManifestSchema) {
    die(2, c.from_manifest + " is not a " + std::string(kManifestSchema) + " manifest");
  }
  if (m.value("command", "") != command) {
    die(2, c.from_manifest + " records a '" + m.value("command", "") + "' run, not '" + command + "'");
  }
  if (!m.contains("settings") || !m["settings"].is_object()) die(2, c.from_manifest + " has no settings");
  return m;
}

ojson settings_snapshot(const shwy_settings* s) {
  return ojson::parse(read_string(
      [&](char* b, size_t c, size_t* n) { return shwy_settings_snapshot(s, b, c, n); }, "snapshot"));
}

ojson manifest_header(const std::string& command, const shwy_settings* s) {
  ojson m;
  m["schema"] = kManifestSchema;
  m["command"] = command;
  m["tool_version"] = shwy_version();
  m["created_utc"] = utc_now();
  m["settings"] = settings_snapshot(s);
  return m;
}

void require_endpoint_for_http(const shwy_settings* s, const std::string& why) {
  if (settings_get(s, "llm.backend") != "http") return;
  if (!settings_is_set(s, "llm.endpoint")) {
    die(2, why + " uses the http backend but no endpoint was given (--endpoint, llm.endpoint or " +
               kEndpointEnv + ")");
  }
}

std::string string_or(const ojson* m, const char* key, const std::string& fallback) {
  if (m && m->contains(key) && (*m)[key].is_string()) return (*m)[key].get<std::string>();
  return fallback;
}

std::string strip_extension(const std::string& path, const std::string& ext) {
  if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0) {
    return path.substr(0, path.size() - ext.size());
  }
  return path;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  CommonOptions common;
  std::string scenario, shaping, scorer, endpoint, model;
  int steps = 0;
  double lambda = 1.0;
  std::uint64_t seed = 42;
  bool no_cache = false;
  std::string out;
  int progress = 50;
  std::vector<FlagBinding> flags;
};

int run_train(TrainOptions& o) {
  const auto manifest = load_manifest(o.common, "train");
  SettingsPtr s = build_settings(o.common, o.flags, manifest ? &*manifest : nullptr,
                                 {{"scenario.kind", "highway-fast"}});
  if (settings_get(s.get(), "shaping.scheme") != "none") {
    require_endpoint_for_http(s.get(), "shaped training");
  }

  std::string out = o.out;
  if (out.empty()) {
    const ojson* m = manifest ? &*manifest : nullptr;
    out = m ? string_or(&(*m)["artifacts"], "model", "model.shwy") : "model.shwy";
  }
  const std::string base = strip_extension(out, ".shwy");
  const std::string log_path = base + ".trainlog.csv";
  const std::string manifest_path = base + ".manifest.json";
  ensure_parent(out);

  const auto t0 = std::chrono::steady_clock::now();
  shwy_model* model_raw = nullptr;
  shwy_train_log* log_raw = nullptr;
  check(shwy_train(s.get(), o.progress, &model_raw, &log_raw), "training failed");
  ModelPtr model(model_raw);
  TrainLogPtr log(log_raw);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  check(shwy_model_save(model.get(), out.c_str()), "saving model");
  check(shwy_train_log_write_csv(log.get(), log_path.c_str()), "writing training log");

  shwy_train_counters c{};
  check(shwy_train_log_counters(log.get(), &c), "reading counters");
  ojson m = manifest_header("train", s.get());
  m["seed"] = std::stoull(settings_get(s.get(), "dqn.seed"));
  m["artifacts"] = {{"model", out}, {"train_log", log_path}, {"manifest", manifest_path}};
  m["wall_seconds"] = seconds;
  m["counters"] = {{"env_steps", c.env_steps},
                   {"episodes", c.episodes},
                   {"gradient_steps", c.gradient_steps},
                   {"target_syncs", c.target_syncs},
                   {"scorer_requests", c.scorer_requests},
                   {"scorer_backend_calls", c.scorer_backend_calls},
                   {"scorer_cache_hits", c.scorer_cache_hits},
                   {"scorer_cache_misses", c.scorer_cache_misses},
                   {"scorer_fallbacks", c.scorer_fallbacks}};
  write_json_file(manifest_path, m);
  std::fprintf(stderr, "shwy: trained %llu episodes in %.1f s; model %s\n",
               static_cast<unsigned long long>(c.episodes), seconds, out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  CommonOptions common;
  std::string policy = "rl";
  std::string model_file, scenario, scorer, endpoint, model;
  int episodes = 100;
  int jobs = 1;
  std::string report;
  std::string format = "json";
  std::vector<FlagBinding> flags;
};

int run_eval(EvalOptions& o, CLI::App* cmd) {
  const auto manifest = load_manifest(o.common, "eval");
  const ojson* m = manifest ? &*manifest : nullptr;
  if (m && cmd->count("--policy") == 0) o.policy = string_or(m, "policy", o.policy);
  if (m && cmd->count("--model-file") == 0) o.model_file = string_or(m, "model_file", o.model_file);
  if (m && cmd->count("--format") == 0) o.format = string_or(m, "format", o.format);
  if (o.report.empty()) o.report = m ? string_or(m, "report", "report") : "report";

  shwy_policy_kind kind = SHWY_POLICY_RL;
  if (o.policy == "llm") kind = SHWY_POLICY_LLM;
  else if (o.policy == "hybrid") kind = SHWY_POLICY_HYBRID;
  else if (o.policy != "rl") die(2, "unknown policy '" + o.policy + "'");

  SettingsPtr s = build_settings(o.common, o.flags, m);
  ModelPtr model;
  if (kind == SHWY_POLICY_LLM) {
    if (!o.model_file.empty()) die(2, "--model-file does not apply to --policy llm");
    require_endpoint_for_http(s.get(), "the llm policy");
  } else {
    if (o.model_file.empty()) die(2, "--policy " + o.policy + " needs --model-file");
    shwy_model* raw = nullptr;
    check(shwy_model_load(o.model_file.c_str(), &raw), "loading model");
    model.reset(raw);
  }

  const auto t0 = std::chrono::steady_clock::now();
  shwy_report* report_raw = nullptr;
  check(shwy_evaluate(s.get(), kind, model.get(), &report_raw), "evaluation failed");
  ReportPtr report(report_raw);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::string base = strip_extension(strip_extension(o.report, ".json"), ".csv");
  ensure_parent(base);
  ojson written = ojson::object();
  if (o.format == "json" || o.format == "both") {
    const std::string p = base + ".json";
    check(shwy_report_write(report.get(), p.c_str(), SHWY_REPORT_JSON), "writing " + p);
    written["json"] = p;
  }
  if (o.format == "csv" || o.format == "both") {
    const std::string p = base + ".csv";
    check(shwy_report_write(report.get(), p.c_str(), SHWY_REPORT_CSV), "writing " + p);
    written["csv"] = p;
  }
  const std::string manifest_path = base + ".manifest.json";
  ojson out = manifest_header("eval", s.get());
  out["policy"] = o.policy;
  if (!o.model_file.empty()) out["model_file"] = o.model_file;
  out["format"] = o.format;
  out["report"] = base;
  out["artifacts"] = written;
  out["artifacts"]["manifest"] = manifest_path;
  out["wall_seconds"] = seconds;
  write_json_file(manifest_path, out);

  shwy_report_summary sum{};
  check(shwy_report_summary_get(report.get(), &sum), "reading report");
  std::fprintf(stderr, "shwy: %d episodes: SR %.1f%%, LC %.2f, Speed %.3f\n", sum.episodes,
               sum.success_rate, sum.lane_change_score, sum.speed_score);
  if (kind == SHWY_POLICY_LLM && sum.llm_fallbacks > 0) {
    std::fprintf(stderr, "shwy: %llu LLM decisions used the fallback action\n",
                 static_cast<unsigned long long>(sum.llm_fallbacks));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// compare

struct CompareOptions {
  std::vector<std::string> reports;
  std::string out = "comparison";
};

int run_compare(const CompareOptions& o) {
  if (o.reports.size() < 2) die(2, "compare needs at least two reports");
  std::vector<ReportPtr> owned;
  std::vector<const shwy_report*> handles;
  for (const std::string& path : o.reports) {
    shwy_report* raw = nullptr;
    check(shwy_report_load(path.c_str(), &raw), "loading " + path);
    owned.emplace_back(raw);
    handles.push_back(raw);
  }
  const std::string text = o.out + ".txt";
  const std::string csv = o.out + ".csv";
  ensure_parent(text);
  check(shwy_compare_write(handles.data(), handles.size(), text.c_str(), csv.c_str()), "comparing");
  std::fprintf(stderr, "shwy: wrote %s and %s\n", text.c_str(), csv.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// record-fixtures

struct FixtureOptions {
  CommonOptions common;
  std::string scorer = "http";
  std::string endpoint, model;
  std::string out_dir = "fixtures";
  std::vector<FlagBinding> flags;
};

int run_record_fixtures(FixtureOptions& o, CLI::App* cmd) {
  const auto manifest = load_manifest(o.common, "record-fixtures");
  if (manifest && cmd->count("--out-dir") == 0) o.out_dir = string_or(&*manifest, "out_dir", o.out_dir);
  // The backend defaults to http here, unlike the other commands.
  SettingsPtr s =
      build_settings(o.common, o.flags, manifest ? &*manifest : nullptr, {{"llm.backend", "http"}});
  require_endpoint_for_http(s.get(), "record-fixtures");

  // One call only: every call creates a new corpus directory.
  shwy_fixture_summary sum{};
  std::vector<char> path(4096);
  size_t needed = 0;
  check(shwy_record_fixtures(s.get(), o.out_dir.c_str(), path.data(), path.size(), &needed, &sum),
        "recording fixtures");
  const std::string dir = path.data();
  ojson m = manifest_header("record-fixtures", s.get());
  m["out_dir"] = o.out_dir;
  m["artifacts"] = {{"corpus", dir}, {"manifest", dir + "/manifest.json"}};
  m["summary"] = {{"items", sum.items},
                  {"parsed", sum.parsed},
                  {"parse_errors", sum.parse_errors},
                  {"transport_errors", sum.transport_errors}};
  write_json_file(dir + "/manifest.json", m);
  std::fprintf(stderr,
               "shwy: %llu items, %llu parsed, %llu parse errors, %llu transport errors -> %s\n",
               static_cast<unsigned long long>(sum.items), static_cast<unsigned long long>(sum.parsed),
               static_cast<unsigned long long>(sum.parse_errors),
               static_cast<unsigned long long>(sum.transport_errors), dir.c_str());
  return 0;
}

template <typename T>
std::function<std::string()> text_of(const T& value) {
  return [&value] {
    std::ostringstream os;
    os.precision(17);
    os << value;
    return os.str();
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Highway driving workbench: DQN training with LLM reward shaping"};
  app.require_subcommand(1);
  bool quiet = false, verbose = false;
  app.add_flag("-q,--quiet", quiet, "Only report warnings and errors");
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.set_version_flag("--version", std::string(shwy_version()));

  const std::vector<std::string> scenarios{"highway", "highway-fast", "merge"};
  const std::vector<std::string> schemes{"none", "dense", "averaged", "centered"};
  const std::vector<std::string> backends{"mock-balanced", "mock-conservative", "http"};

  // train
  TrainOptions t;
  CLI::App* train = app.add_subcommand("train", "Train a DQN agent and save the model");
  add_common(train, t.common);
  t.flags = {
      {train->add_option("--scenario", t.scenario, "Training scenario (default highway-fast)")->check(CLI::IsMember(scenarios)),
       "scenario.kind", text_of(t.scenario)},
      {train->add_option("--steps", t.steps, "Environment steps")->check(CLI::PositiveNumber),
       "dqn.total_steps", text_of(t.steps)},
      {train->add_option("--shaping", t.shaping, "Reward shaping scheme")->check(CLI::IsMember(schemes)),
       "shaping.scheme", text_of(t.shaping)},
      {train->add_option("--lambda", t.lambda, "Dense shaping weight"), "shaping.lambda", text_of(t.lambda)},
      {train->add_option("--scorer", t.scorer, "Score backend")->check(CLI::IsMember(backends)),
       "llm.backend", text_of(t.scorer)},
      {train->add_option("--endpoint", t.endpoint, "Chat endpoint base URL"), "llm.endpoint",
       text_of(t.endpoint)},
      {train->add_option("--model", t.model, "Model name sent to the endpoint"), "llm.model",
       text_of(t.model)},
      {train->add_option("--seed", t.seed, "Training seed (default 42)"), "dqn.seed", text_of(t.seed)},
  };
  CLI::Option* no_cache = train->add_flag("--no-score-cache", t.no_cache, "Query the scorer for every transition");
  t.flags.push_back({no_cache, "shaping.score_cache", [] { return std::string("false"); }});
  train->add_option("--out", t.out, "Model file (default model.shwy)");
  train->add_option("--progress", t.progress, "Log every N episodes (0 disables)");

  // eval
  EvalOptions e;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a policy over seeded episodes");
  add_common(eval, e.common);
  eval->add_option("--policy", e.policy, "rl, llm or hybrid")->check(CLI::IsMember({"rl", "llm", "hybrid"}));
  eval->add_option("--model-file", e.model_file, "Trained model (rl and hybrid)");
  eval->add_option("--report", e.report, "Report path without extension (default report)");
  eval->add_option("--format", e.format, "json, csv or both")->check(CLI::IsMember({"json", "csv", "both"}));
  e.flags = {
      {eval->add_option("--scenario", e.scenario, "Evaluation scenario")->check(CLI::IsMember(scenarios)),
       "scenario.kind", text_of(e.scenario)},
      {eval->add_option("--episodes", e.episodes, "Episodes, seeds 0..N-1 (default 100)")
           ->check(CLI::PositiveNumber),
       "eval.episodes", text_of(e.episodes)},
      {eval->add_option("--jobs", e.jobs, "Parallel episodes")->check(CLI::PositiveNumber), "eval.jobs",
       text_of(e.jobs)},
      {eval->add_option("--scorer", e.scorer, "Backend for --policy llm")->check(CLI::IsMember(backends)),
       "llm.backend", text_of(e.scorer)},
      {eval->add_option("--endpoint", e.endpoint, "Chat endpoint base URL"), "llm.endpoint",
       text_of(e.endpoint)},
      {eval->add_option("--model", e.model, "Model name sent to the endpoint"), "llm.model",
       text_of(e.model)},
  };

  // compare
  CompareOptions c;
  CLI::App* cmp = app.add_subcommand("compare", "Tabulate two or more reports");
  cmp->add_option("reports", c.reports, "JSON reports")->required()->check(CLI::ExistingFile);
  cmp->add_option("--out", c.out, "Output path without extension (default comparison)");

  // record-fixtures
  FixtureOptions f;
  CLI::App* rec = app.add_subcommand("record-fixtures", "Record endpoint replies for parser tests");
  add_common(rec, f.common);
  f.flags = {
      {rec->add_option("--scorer", f.scorer, "Backend (default http)")->check(CLI::IsMember(backends)),
       "llm.backend", text_of(f.scorer)},
      {rec->add_option("--endpoint", f.endpoint, "Chat endpoint base URL"), "llm.endpoint",
       text_of(f.endpoint)},
      {rec->add_option("--model", f.model, "Model name sent to the endpoint"), "llm.model",
       text_of(f.model)},
  };
  rec->add_option("--out-dir", f.out_dir, "Corpus root (default fixtures)");

  for (CLI::App* sub : {train, eval, rec}) {
    sub->get_option("--from-manifest")->excludes(sub->get_option("--config"));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  shwy_set_log_level(verbose ? SHWY_LOG_DEBUG : quiet ? SHWY_LOG_WARNING : SHWY_LOG_INFO);
  try {
    if (train->parsed()) return run_train(t);
    if (eval->parsed()) return run_eval(e, eval);
    if (cmp->parsed()) return run_compare(c);
    if (rec->parsed()) return run_record_fixtures(f, rec);
  } catch (const Exit& ex) {
    return ex.code;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "shwy: error: %s\n", ex.what());
    return 1;
  }
  return 2;
}
