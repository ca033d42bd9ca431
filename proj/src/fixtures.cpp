#include "shwy/fixtures.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "shwy/errors.hpp"

namespace shwy {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

const std::vector<Observation>& action_probes() {
  static const std::vector<Observation> probes = {
      {25.0, 10.0, 10.0, 10.0}, {25.0, 10.0, 6.2, 10.0}, {30.0, 0.0, 1.5, 8.0},
      {30.0, 8.0, 1.2, 0.0},    {20.0, 10.0, 10.0, 0.0}, {28.4, 2.5, 2.9, 3.4},
      {22.1, 1.0, 9.5, 1.0},    {30.0, 10.0, 0.8, 10.0}, {25.0, 0.0, 10.0, 10.0},
      {26.7, 4.4, 3.1, 1.9},    {20.0, 0.0, 1.8, 0.0},   {29.3, 10.0, 4.0, 2.2},
  };
  return probes;
}

const std::vector<ScoreProbe>& score_probes() {
  using A = MetaAction;
  static const std::vector<ScoreProbe> probes = {
      {{25.0, 10.0, 4.0, 10.0}, A::kFaster, {27.0, 10.0, 3.1, 10.0}},
      {{25.0, 10.0, 10.0, 10.0}, A::kIdle, {25.0, 10.0, 10.0, 10.0}},
      {{30.0, 10.0, 1.5, 10.0}, A::kSlower, {26.2, 10.0, 2.4, 10.0}},
      {{30.0, 10.0, 1.2, 10.0}, A::kIdle, {30.0, 10.0, 0.4, 10.0}},
      {{22.0, 10.0, 10.0, 10.0}, A::kFaster, {26.9, 10.0, 10.0, 10.0}},
      {{28.0, 5.0, 2.0, 10.0}, A::kLaneRight, {28.0, 2.0, 10.0, 10.0}},
      {{28.0, 10.0, 2.0, 4.0}, A::kLaneLeft, {28.0, 10.0, 10.0, 2.0}},
      {{20.0, 10.0, 10.0, 10.0}, A::kSlower, {20.0, 10.0, 10.0, 10.0}},
      {{26.5, 3.3, 3.3, 3.3}, A::kFaster, {29.8, 3.3, 1.7, 3.3}},
      {{24.0, 10.0, 7.5, 10.0}, A::kIdle, {24.0, 10.0, 7.0, 10.0}},
      {{30.0, 10.0, 9.0, 10.0}, A::kSlower, {25.1, 10.0, 10.0, 10.0}},
      {{25.0, 10.0, 2.5, 10.0}, A::kLaneLeft, {25.0, 10.0, 10.0, 2.5}},
  };
  return probes;
}

namespace {

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path fresh_directory(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create fixture root " + root.string() + ": " + ec.message());
  const std::string base = "corpus-" + utc_stamp();
  for (int n = 0; n < 1000; ++n) {
    const fs::path candidate = root / (n == 0 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(candidate, ec)) return candidate;
    if (ec) throw IoError("cannot create " + candidate.string() + ": " + ec.message());
  }
  throw IoError("no free corpus directory name under " + root.string());
}

ojson obs_json(const Observation& o) {
  return ojson::array({o.ego_speed, o.ttc_left, o.ttc_center, o.ttc_right});
}

}  // namespace

FixtureRun record_fixtures(ChatBackend& backend, const std::string& root_dir) {
  FixtureRun run;
  const fs::path dir = fresh_directory(root_dir);
  run.directory = dir.string();
  std::ofstream replies(dir / "replies.jsonl", std::ios::binary);
  if (!replies) throw IoError("cannot write " + (dir / "replies.jsonl").string());

  const auto record = [&](ojson item, const std::string& prompt, bool is_action) {
    ++run.summary.items;
    try {
      const std::string reply = backend.complete(prompt);
      item["reply"] = reply;
      try {
        if (is_action) {
          item["expected"] = action_code(parse_action_response(reply));
        } else {
          item["expected"] = parse_score_response(reply);
        }
        ++run.summary.parsed;
      } catch (const ParseError& e) {
        item["expected"] = "parse_error";
        item["error"] = e.what();
        ++run.summary.parse_errors;
      }
    } catch (const TransportError& e) {
      item["reply"] = nullptr;
      item["expected"] = nullptr;
      item["error"] = e.what();
      ++run.summary.transport_errors;
    }
    replies << item.dump() << '\n';
  };

  int id = 0;
  for (const Observation& obs : action_probes()) {
    ojson item;
    item["id"] = id++;
    item["kind"] = "action";
    item["observation"] = obs_json(obs);
    record(std::move(item), render_action_prompt(obs), true);
  }
  for (const ScoreProbe& p : score_probes()) {
    ojson item;
    item["id"] = id++;
    item["kind"] = "score";
    item["prev"] = obs_json(p.prev);
    item["action"] = std::string(action_name(p.action));
    item["next"] = obs_json(p.next);
    record(std::move(item), render_score_prompt(p.prev, p.action, p.next), false);
  }
  replies.close();
  if (!replies) throw IoError("failed writing " + (dir / "replies.jsonl").string());

  ojson summary;
  summary["backend"] = backend.identity();
  summary["items"] = run.summary.items;
  summary["parsed"] = run.summary.parsed;
  summary["parse_errors"] = run.summary.parse_errors;
  summary["transport_errors"] = run.summary.transport_errors;
  std::ofstream out(dir / "summary.json", std::ios::binary);
  out << summary.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + (dir / "summary.json").string());
  return run;
}

}  // namespace shwy
