#include "shwy/shwy.h"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "shwy/dqn.hpp"
#include "shwy/errors.hpp"
#include "shwy/eval_harness.hpp"
#include "shwy/fixtures.hpp"
#include "shwy/log.hpp"
#include "shwy/policies.hpp"
#include "shwy/settings.hpp"

struct shwy_settings {
  shwy::Settings impl;
};

struct shwy_model {
  shwy::QNetwork net;
  shwy::ModelMetadata metadata;
};

struct shwy_train_log {
  shwy::TrainLog impl;
};

struct shwy_report {
  shwy::MetricsReport impl;
};

namespace {

thread_local std::string g_last_error;

shwy_status fail(shwy_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

shwy_status status_of(shwy::ErrorCode code) {
  switch (code) {
    case shwy::ErrorCode::kInvalidArgument: return SHWY_ERR_INVALID_ARGUMENT;
    case shwy::ErrorCode::kContractViolation: return SHWY_ERR_CONTRACT;
    case shwy::ErrorCode::kIo: return SHWY_ERR_IO;
    case shwy::ErrorCode::kFormat: return SHWY_ERR_FORMAT;
    case shwy::ErrorCode::kTransport: return SHWY_ERR_TRANSPORT;
    case shwy::ErrorCode::kParse: return SHWY_ERR_PARSE;
    case shwy::ErrorCode::kInternal: return SHWY_ERR_INTERNAL;
  }
  return SHWY_ERR_INTERNAL;
}

// Runs body() and maps any escaping exception onto a status code.
template <typename Body>
shwy_status guarded(Body&& body) {
  try {
    g_last_error.clear();
    return body();
  } catch (const shwy::Error& e) {
    return fail(status_of(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(SHWY_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SHWY_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SHWY_ERR_INTERNAL, "unknown error");
  }
}

shwy_status require(bool ok, const char* what) {
  return ok ? SHWY_OK : fail(SHWY_ERR_INVALID_ARGUMENT, what);
}

shwy_status copy_out(const std::string& text, char* buf, size_t capacity, size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buf == nullptr || capacity < text.size() + 1) {
    if (buf && capacity > 0) buf[0] = '\0';
    return fail(SHWY_ERR_BUFFER_TOO_SMALL,
                "buffer of " + std::to_string(capacity) + " bytes cannot hold " +
                    std::to_string(text.size() + 1));
  }
  std::memcpy(buf, text.c_str(), text.size() + 1);
  return SHWY_OK;
}

std::string metadata_json(const shwy::ModelMetadata& m) {
  nlohmann::ordered_json j;
  j["scenario"] = m.scenario;
  j["shaping"] = std::string(shwy::shaping_name(m.shaping.kind));
  j["lambda"] = m.shaping.lambda;
  j["scorer"] = m.scorer;
  j["training_steps"] = m.training_steps;
  j["seed"] = m.seed;
  return j.dump();
}

}  // namespace

extern "C" {

const char* shwy_version(void) { return "1.0.0"; }

const char* shwy_last_error(void) { return g_last_error.c_str(); }

const char* shwy_status_name(shwy_status status) {
  switch (status) {
    case SHWY_OK: return "ok";
    case SHWY_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SHWY_ERR_CONTRACT: return "contract violation";
    case SHWY_ERR_IO: return "i/o error";
    case SHWY_ERR_FORMAT: return "format error";
    case SHWY_ERR_TRANSPORT: return "transport error";
    case SHWY_ERR_PARSE: return "parse error";
    case SHWY_ERR_INTERNAL: return "internal error";
    case SHWY_ERR_BUFFER_TOO_SMALL: return "buffer too small";
  }
  return "unknown status";
}

void shwy_set_log_level(shwy_log_level level) {
  shwy::set_log_level(static_cast<shwy::LogLevel>(level));
}

// ---------------------------------------------------------------------------
// Settings

shwy_status shwy_settings_create(shwy_settings** out) {
  return guarded([&] {
    if (auto s = require(out != nullptr, "out is NULL")) return s;
    *out = new shwy_settings();
    return SHWY_OK;
  });
}

void shwy_settings_destroy(shwy_settings* settings) { delete settings; }

shwy_status shwy_settings_set(shwy_settings* settings, const char* key, const char* value) {
  return guarded([&] {
    if (auto s = require(settings && key && value, "NULL argument")) return s;
    settings->impl.set(key, value);
    return SHWY_OK;
  });
}

shwy_status shwy_settings_get(const shwy_settings* settings, const char* key, char* buf,
                              size_t capacity, size_t* needed) {
  return guarded([&] {
    if (auto s = require(settings && key, "NULL argument")) return s;
    return copy_out(settings->impl.get(key), buf, capacity, needed);
  });
}

shwy_status shwy_settings_is_set(const shwy_settings* settings, const char* key, int* is_set) {
  return guarded([&] {
    if (auto s = require(settings && key && is_set, "NULL argument")) return s;
    if (!shwy::Settings::is_key(key)) throw shwy::ConfigError(std::string("unknown key ") + key);
    *is_set = settings->impl.override_for(key).has_value() ? 1 : 0;
    return SHWY_OK;
  });
}

shwy_status shwy_settings_load_file(shwy_settings* settings, const char* path) {
  return guarded([&] {
    if (auto s = require(settings && path, "NULL argument")) return s;
    settings->impl.load_ini_file(path);
    return SHWY_OK;
  });
}

shwy_status shwy_settings_snapshot(const shwy_settings* settings, char* buf, size_t capacity,
                                   size_t* needed) {
  return guarded([&] {
    if (auto s = require(settings != nullptr, "NULL argument")) return s;
    return copy_out(settings->impl.snapshot().dump(2), buf, capacity, needed);
  });
}

shwy_status shwy_settings_apply_snapshot(shwy_settings* settings, const char* json) {
  return guarded([&] {
    if (auto s = require(settings && json, "NULL argument")) return s;
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
      throw shwy::FormatError(std::string("settings snapshot is not JSON: ") + e.what());
    }
    settings->impl.apply_snapshot(parsed);
    return SHWY_OK;
  });
}

shwy_status shwy_settings_validate(const shwy_settings* settings) {
  return guarded([&] {
    if (auto s = require(settings != nullptr, "NULL argument")) return s;
    (void)settings->impl.resolve();
    return SHWY_OK;
  });
}

size_t shwy_settings_key_count(void) { return shwy::Settings::keys().size(); }

const char* shwy_settings_key_name(size_t index) {
  const auto& keys = shwy::Settings::keys();
  return index < keys.size() ? keys[index].name.c_str() : nullptr;
}

const char* shwy_settings_key_help(size_t index) {
  const auto& keys = shwy::Settings::keys();
  return index < keys.size() ? keys[index].help.c_str() : nullptr;
}

// ---------------------------------------------------------------------------
// Training

shwy_status shwy_train(const shwy_settings* settings, int progress_every, shwy_model** model_out,
                       shwy_train_log** log_out) {
  return guarded([&] {
    if (auto s = require(settings && model_out, "NULL argument")) return s;
    const shwy::ResolvedSettings resolved = settings->impl.resolve();
    const auto scorer = shwy::make_scorer(resolved);
    const auto on_episode = [&](const shwy::EpisodeLog& ep, std::int64_t total) {
      if (progress_every <= 0 || (ep.index + 1) % progress_every != 0) return;
      char line[160];
      std::snprintf(line, sizeof line, "episode %d, step %lld/%d, return %.2f, epsilon %.3f",
                    ep.index + 1, static_cast<long long>(total), resolved.train.total_steps,
                    ep.total_return, ep.epsilon);
      shwy::log_info(line);
    };
    shwy::TrainResult result =
        shwy::train(resolved.train, resolved.scenario, scorer.get(), on_episode);
    auto model = std::make_unique<shwy_model>(
        shwy_model{std::move(result.model), std::move(result.metadata)});
    if (log_out) *log_out = new shwy_train_log{std::move(result.log)};
    *model_out = model.release();
    return SHWY_OK;
  });
}

void shwy_train_log_destroy(shwy_train_log* log) { delete log; }

shwy_status shwy_train_log_write_csv(const shwy_train_log* log, const char* path) {
  return guarded([&] {
    if (auto s = require(log && path, "NULL argument")) return s;
    shwy::write_text_file(path, log->impl.to_csv());
    return SHWY_OK;
  });
}

shwy_status shwy_train_log_counters(const shwy_train_log* log, shwy_train_counters* out) {
  return guarded([&] {
    if (auto s = require(log && out, "NULL argument")) return s;
    const shwy::TrainLog& l = log->impl;
    *out = shwy_train_counters{l.env_steps,
                               l.episodes.size(),
                               l.gradient_steps,
                               l.target_syncs,
                               l.scorer.requests,
                               l.scorer.backend_calls,
                               l.scorer.cache_hits,
                               l.scorer.cache_misses,
                               l.scorer.fallbacks};
    return SHWY_OK;
  });
}

// ---------------------------------------------------------------------------
// Models

shwy_status shwy_model_load(const char* path, shwy_model** out) {
  return guarded([&] {
    if (auto s = require(path && out, "NULL argument")) return s;
    auto [net, meta] = shwy::load_model(path);
    *out = new shwy_model{std::move(net), std::move(meta)};
    return SHWY_OK;
  });
}

shwy_status shwy_model_save(const shwy_model* model, const char* path) {
  return guarded([&] {
    if (auto s = require(model && path, "NULL argument")) return s;
    shwy::save_model(path, model->net, model->metadata);
    return SHWY_OK;
  });
}

void shwy_model_destroy(shwy_model* model) { delete model; }

shwy_status shwy_model_metadata(const shwy_model* model, char* buf, size_t capacity,
                                size_t* needed) {
  return guarded([&] {
    if (auto s = require(model != nullptr, "NULL argument")) return s;
    return copy_out(metadata_json(model->metadata), buf, capacity, needed);
  });
}

shwy_status shwy_model_decide(const shwy_model* model, const double observation[4], int* action) {
  return guarded([&] {
    if (auto s = require(model && observation && action, "NULL argument")) return s;
    const shwy::Observation obs{observation[0], observation[1], observation[2], observation[3]};
    *action = shwy::action_code(shwy::greedy_action(model->net.action_values(obs)));
    return SHWY_OK;
  });
}

// ---------------------------------------------------------------------------
// Evaluation and reports

shwy_status shwy_evaluate(const shwy_settings* settings, shwy_policy_kind kind,
                          const shwy_model* model, shwy_report** out) {
  return guarded([&] {
    if (auto s = require(settings && out, "NULL argument")) return s;
    const shwy::ResolvedSettings resolved = settings->impl.resolve();
    std::unique_ptr<shwy::Policy> policy;
    switch (kind) {
      case SHWY_POLICY_RL:
        if (auto s = require(model != nullptr, "rl policy needs a model")) return s;
        policy = std::make_unique<shwy::RlGreedyPolicy>(model->net, model->metadata);
        break;
      case SHWY_POLICY_HYBRID:
        if (auto s = require(model != nullptr, "hybrid policy needs a model")) return s;
        policy = std::make_unique<shwy::HybridPolicy>(model->net, model->metadata);
        break;
      case SHWY_POLICY_LLM:
        if (auto s = require(model == nullptr, "llm policy takes no model")) return s;
        policy = std::make_unique<shwy::LlmOnlyPolicy>(
            shwy::make_backend(resolved.backend, resolved.endpoint),
            resolved.endpoint.fallback_action);
        break;
      default:
        return fail(SHWY_ERR_INVALID_ARGUMENT, "unknown policy kind");
    }
    shwy::MetricsReport report =
        shwy::evaluate(*policy, resolved.scenario, resolved.eval_episodes, resolved.eval_jobs);
    *out = new shwy_report{std::move(report)};
    return SHWY_OK;
  });
}

shwy_status shwy_report_load(const char* path, shwy_report** out) {
  return guarded([&] {
    if (auto s = require(path && out, "NULL argument")) return s;
    *out = new shwy_report{shwy::load_report(path)};
    return SHWY_OK;
  });
}

shwy_status shwy_report_write(const shwy_report* report, const char* path,
                              shwy_report_format format) {
  return guarded([&] {
    if (auto s = require(report && path, "NULL argument")) return s;
    if (format != SHWY_REPORT_JSON && format != SHWY_REPORT_CSV) {
      return fail(SHWY_ERR_INVALID_ARGUMENT, "unknown report format");
    }
    shwy::write_report(report->impl, path,
                       format == SHWY_REPORT_JSON ? shwy::ReportFormat::kJson
                                                  : shwy::ReportFormat::kCsv);
    return SHWY_OK;
  });
}

shwy_status shwy_report_summary_get(const shwy_report* report, shwy_report_summary* out) {
  return guarded([&] {
    if (auto s = require(report && out, "NULL argument")) return s;
    const shwy::MetricsReport& r = report->impl;
    *out = shwy_report_summary{r.episodes,
                               r.aggregates.success_rate,
                               r.aggregates.lane_change_score,
                               r.aggregates.mean_speed,
                               r.aggregates.speed_score,
                               r.llm_counters ? r.llm_counters->fallbacks : 0};
    return SHWY_OK;
  });
}

void shwy_report_destroy(shwy_report* report) { delete report; }

shwy_status shwy_compare_write(const shwy_report* const* reports, size_t count,
                               const char* text_path, const char* csv_path) {
  return guarded([&] {
    if (auto s = require(reports != nullptr, "NULL argument")) return s;
    std::vector<shwy::MetricsReport> list;
    list.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      if (auto s = require(reports[i] != nullptr, "NULL report in list")) return s;
      list.push_back(reports[i]->impl);
    }
    const auto rows = shwy::compare(list);
    if (text_path) shwy::write_text_file(text_path, shwy::comparison_to_text(rows));
    if (csv_path) shwy::write_text_file(csv_path, shwy::comparison_to_csv(rows));
    return SHWY_OK;
  });
}

shwy_status shwy_record_fixtures(const shwy_settings* settings, const char* root_dir, char* buf,
                                 size_t capacity, size_t* needed,
                                 shwy_fixture_summary* summary) {
  return guarded([&] {
    if (auto s = require(settings && root_dir, "NULL argument")) return s;
    const shwy::ResolvedSettings resolved = settings->impl.resolve();
    const auto backend = shwy::make_backend(resolved.backend, resolved.endpoint);
    const shwy::FixtureRun run = shwy::record_fixtures(*backend, root_dir);
    if (summary) {
      *summary = shwy_fixture_summary{run.summary.items, run.summary.transport_errors,
                                      run.summary.parse_errors, run.summary.parsed};
    }
    return copy_out(run.directory, buf, capacity, needed);
  });
}

}  // extern "C"
