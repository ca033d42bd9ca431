#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shwy/llm_bridge.hpp"

namespace shwy {

// Observations and transitions replayed through an endpoint to build a
// parser fixture corpus.
struct ScoreProbe {
  Observation prev;
  MetaAction action;
  Observation next;
};

const std::vector<Observation>& action_probes();
const std::vector<ScoreProbe>& score_probes();

struct FixtureSummary {
  std::uint64_t items = 0;
  std::uint64_t transport_errors = 0;
  std::uint64_t parse_errors = 0;
  std::uint64_t parsed = 0;
};

struct FixtureRun {
  std::string directory;
  FixtureSummary summary;
};

// Sends every probe once (no retries beyond the backend's own) and writes
// <root>/corpus-<UTC timestamp>[-n]/replies.jsonl plus summary.json. A new
// directory is created on every call; existing corpora are never touched.
// Transport failures are recorded per item and do not abort the run.
FixtureRun record_fixtures(ChatBackend& backend, const std::string& root_dir);

}  // namespace shwy
