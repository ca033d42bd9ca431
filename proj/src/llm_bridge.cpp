#include "shwy/llm_bridge.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "shwy/errors.hpp"
#include "shwy/log.hpp"

namespace shwy {

namespace {

std::string one_decimal(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", value);
  return buf;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::size_t find_ci(std::string_view haystack, std::string_view needle, std::size_t from = 0) {
  if (needle.size() > haystack.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    bool match = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (lower(haystack[i + j]) != lower(needle[j])) {
        match = false;
        break;
      }
    }
    if (match) return i;
  }
  return std::string_view::npos;
}

struct NumberToken {
  double value = 0.0;
  bool integral = true;
};

// Standalone numbers (not glued to letters, digits or underscores) in order.
std::vector<NumberToken> scan_numbers(std::string_view text) {
  std::vector<NumberToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const bool digit = std::isdigit(static_cast<unsigned char>(text[i])) != 0;
    const bool lead_dot = text[i] == '.' && i + 1 < text.size() &&
                          std::isdigit(static_cast<unsigned char>(text[i + 1])) != 0;
    if (!digit && !lead_dot) {
      ++i;
      continue;
    }
    std::size_t start = i;
    std::size_t end = i;
    while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
    bool integral = true;
    if (end + 1 < text.size() && text[end] == '.' &&
        std::isdigit(static_cast<unsigned char>(text[end + 1]))) {
      integral = false;
      ++end;
      while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
    }
    bool negative = false;
    if (start > 0 && text[start - 1] == '-' && (start < 2 || !is_word_char(text[start - 2]))) {
      negative = true;
    }
    const std::size_t before = negative ? start - 1 : start;
    const bool glued_before = before > 0 && (is_word_char(text[before - 1]) || text[before - 1] == '.');
    const bool glued_after = end < text.size() && is_word_char(text[end]);
    if (!glued_before && !glued_after) {
      double value = 0.0;
      std::from_chars(text.data() + start, text.data() + end, value);
      out.push_back({negative ? -value : value, integral});
    }
    i = end;
  }
  return out;
}

// Reads the number following `label` at or after `from`.
std::optional<double> read_labelled(std::string_view text, std::string_view label,
                                    std::size_t from = 0) {
  const std::size_t pos = text.find(label, from);
  if (pos == std::string_view::npos) return std::nullopt;
  const char* first = text.data() + pos + label.size();
  const char* last = text.data() + text.size();
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc()) return std::nullopt;
  return value;
}

struct Prediction {
  double speed;
  double ttc;
};

Prediction predict_next(const Observation& obs, MetaAction action) {
  switch (action) {
    case MetaAction::kLaneLeft:
      return {obs.ego_speed, obs.ttc_left};
    case MetaAction::kLaneRight:
      return {obs.ego_speed, obs.ttc_right};
    case MetaAction::kFaster:
      return {std::min(obs.ego_speed + 5.0, 30.0), obs.ttc_center};
    case MetaAction::kSlower:
      return {std::max(obs.ego_speed - 5.0, 20.0), obs.ttc_center};
    case MetaAction::kIdle:
      break;
  }
  return {obs.ego_speed, obs.ttc_center};
}

std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  const std::size_t scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint base_url must start with http://: " + base_url);
  }
  const std::string scheme = base_url.substr(0, scheme_end);
  if (scheme != "http") {
    throw ConfigError("only http:// endpoints are supported: " + base_url);
  }
  const std::size_t path_start = base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, path_start), prefix};
}

}  // namespace

void EndpointConfig::validate() const {
  if (!(temperature >= 0.0)) throw ConfigError("llm temperature must be >= 0");
  if (timeout_ms <= 0) throw ConfigError("llm timeout_ms must be > 0");
  if (max_retries < 0) throw ConfigError("llm max_retries must be >= 0");
  if (max_tokens <= 0) throw ConfigError("llm max_tokens must be > 0");
  if (!(fallback_score >= 0.0 && fallback_score <= 10.0)) {
    throw ConfigError("llm fallback_score must lie in [0, 10]");
  }
}

std::string format_float_repr(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const double mag = std::abs(value);
  const bool fixed = value == 0.0 || (mag >= 1e-4 && mag < 1e16);
  const auto result = fixed ? std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed)
                            : std::to_chars(buf, buf + sizeof buf, value, std::chars_format::scientific);
  std::string out(buf, result.ptr);
  if (fixed && out.find('.') == std::string::npos) out += ".0";
  return out;
}

std::string render_action_prompt(const Observation& obs) {
  std::string p;
  p.reserve(1400);
  p += "You are controlling an autonomous vehicle. Prioritize safety first, then consider "
       "efficiency and human-like behavior.\n\n";
  p += "Guidelines:\n";
  p += "1. Avoid any action that risks a collision.\n";
  p += "2. Treat any Time-To-Collision (TTC) below 2 seconds as dangerous.\n";
  p += "3. Speed up only if the current lane TTC (center lane) is clearly safe (above 3 seconds).\n";
  p += "4. If the current lane TTC is low (below 2 seconds), and either left or right lane TTC is "
       "high (above 3 seconds), prefer changing to the safest lane.\n";
  p += "5. Maintain a target speed around 30 m/s if safe, but slowing down is acceptable when "
       "unsure.\n";
  p += "6. Change lanes only if it clearly improves safety or avoids slower traffic.\n\n";
  p += "Available actions:\n";
  p += "0 = Turn Left\n1 = Idle\n2 = Turn Right\n3 = Go Faster\n4 = Slow Down\n\n";
  p += "Current observations:\n";
  p += "- Speed: " + one_decimal(obs.ego_speed) + " m/s\n";
  p += "- Left lane TTC: " + one_decimal(obs.ttc_left) + " s\n";
  p += "- Center lane TTC: " + one_decimal(obs.ttc_center) + " s\n";
  p += "- Right lane TTC: " + one_decimal(obs.ttc_right) + " s\n\n";
  p += "What is the safest and most reasonable driving action to take now? Respond with only the "
       "action number (0--4).";
  return p;
}

std::string render_score_prompt(const Observation& prev, MetaAction action,
                                const Observation& next) {
  std::string p;
  p.reserve(800);
  p += "You are evaluating the behavior of an autonomous vehicle in its current lane.\n\n";
  p += "TTC = Time To Collision \xE2\x80\x94 higher is safer.\n\n";
  p += "--- BEFORE ACTION ---\n";
  p += "- Ego speed: " + format_float_repr(prev.ego_speed) + " m/s\n";
  p += "- Current lane TTC: " + format_float_repr(prev.ttc_center) + " s\n\n";
  p += "--- ACTION TAKEN ---\n";
  p += "- " + std::string(action_name(action)) + "\n\n";
  p += "--- AFTER ACTION ---\n";
  p += "- Ego speed: " + format_float_repr(next.ego_speed) + " m/s\n";
  p += "- Current lane TTC: " + format_float_repr(next.ttc_center) + " s\n\n";
  p += "Score this action from 0 (very unsafe or inefficient) to 10 (excellent decision). "
       "Prioritize avoiding collisions, maintaining approximately 30 m/s if safe, and smooth, "
       "human-like driving. Respond with only the numeric score.";
  return p;
}

std::string build_chat_request(const EndpointConfig& config, const std::string& prompt) {
  nlohmann::ordered_json body;
  body["model"] = config.model_name;
  body["messages"] = nlohmann::ordered_json::array(
      {nlohmann::ordered_json{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = config.temperature;
  body["max_tokens"] = config.max_tokens;
  return body.dump();
}

std::string extract_chat_content(const std::string& response_body) {
  nlohmann::json doc = nlohmann::json::parse(response_body, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw FormatError("chat response is not valid JSON");
  try {
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("chat response lacks choices[0].message.content: ") + e.what());
  }
}

std::string query_chat(const EndpointConfig& config, const std::string& prompt) {
  const auto [origin, prefix] = split_base_url(config.base_url);
  httplib::Client client(origin);
  const auto timeout = std::chrono::milliseconds(config.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const std::string path = prefix + std::string(kChatCompletionsPath);
  const std::string body = build_chat_request(config, prompt);

  std::string last_error;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    auto res = client.Post(path, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      return extract_chat_content(res->body);
    } catch (const FormatError& e) {
      last_error = e.what();
    }
  }
  throw TransportError("chat completion failed after " + std::to_string(config.max_retries + 1) +
                       " attempt(s) to " + config.base_url + path + ": " + last_error);
}

std::string strip_reasoning(std::string_view text) {
  std::string s(text);
  // Paired reasoning blocks, then dangling openers/closers.
  for (const std::string_view tag : {"think", "thinking", "reasoning", "reflection"}) {
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";
    for (;;) {
      const std::size_t a = find_ci(s, open);
      if (a == std::string::npos) break;
      const std::size_t b = find_ci(s, close, a + open.size());
      if (b == std::string::npos) {
        s.erase(a);  // cut off mid-reasoning
        break;
      }
      s.erase(a, b + close.size() - a);
    }
    const std::size_t lone_close = find_ci(s, close);
    if (lone_close != std::string::npos) s.erase(0, lone_close + close.size());
  }
  // Any other short markup tag such as <answer> or <|im_end|>.
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '<') {
      const std::size_t close = s.find('>', i + 1);
      const std::size_t nested = s.find('<', i + 1);
      if (close != std::string::npos && close - i <= 64 && (nested == std::string::npos || nested > close)) {
        out.push_back(' ');
        i = close;
        continue;
      }
    }
    const char c = s[i];
    out.push_back(c == '*' || c == '`' || c == '#' ? ' ' : c);
  }
  return out;
}

MetaAction parse_action_response(std::string_view text) {
  const std::string clean = strip_reasoning(text);
  for (const NumberToken& token : scan_numbers(clean)) {
    if (!token.integral) continue;
    if (token.value >= 0 && token.value <= 4) {
      return *action_from_code(static_cast<int>(token.value));
    }
  }
  throw ParseError("no action code 0-4 in reply: \"" + std::string(text.substr(0, 200)) + "\"");
}

double parse_score_response(std::string_view text) {
  const std::string clean = strip_reasoning(text);
  const std::vector<NumberToken> numbers = scan_numbers(clean);
  if (numbers.empty()) {
    throw ParseError("no numeric score in reply: \"" + std::string(text.substr(0, 200)) + "\"");
  }
  const double value = numbers.front().value;
  if (value >= 0.0 && value <= 10.0) return value;
  if (value > 10.0 && value <= 10.5) return 10.0;
  throw ParseError("score out of range [0, 10]: " + format_float_repr(value));
}

double mock_score(const Observation& prev, MetaAction action, const Observation& next,
                  MockProfile profile) {
  double score = 5.0;
  if (profile == MockProfile::kBalanced) {
    if (next.ttc_center >= 3.0) score += 2.0;
    if (next.ttc_center < 2.0) score -= 4.0;
    if (next.ego_speed >= 28.0) score += 2.0;
    if (action == MetaAction::kSlower && prev.ttc_center >= 3.0) score -= 1.0;
  } else {
    if (action == MetaAction::kSlower || action == MetaAction::kIdle) score += 3.0;
    if (action == MetaAction::kFaster) score -= 3.0;
    if (next.ttc_center >= 3.0) score += 2.0;
    if (next.ttc_center < 2.0) score -= 4.0;
  }
  return std::clamp(score, 0.0, 10.0);
}

MetaAction mock_action(const Observation& obs, MockProfile profile) {
  using A = MetaAction;
  static constexpr std::array<A, kNumActions> kBalancedOrder = {A::kFaster, A::kIdle, A::kLaneLeft,
                                                                A::kLaneRight, A::kSlower};
  static constexpr std::array<A, kNumActions> kConservativeOrder = {
      A::kSlower, A::kIdle, A::kLaneLeft, A::kLaneRight, A::kFaster};
  const auto& order = profile == MockProfile::kBalanced ? kBalancedOrder : kConservativeOrder;
  A best = order.front();
  double best_score = -1.0;
  for (const A action : order) {
    const Prediction p = predict_next(obs, action);
    Observation next = obs;
    next.ego_speed = p.speed;
    next.ttc_center = p.ttc;
    const double score = mock_score(obs, action, next, profile);
    if (score > best_score) {
      best = action;
      best_score = score;
    }
  }
  return best;
}

HttpChatBackend::HttpChatBackend(EndpointConfig config) : config_(std::move(config)) {
  config_.validate();
}

std::string HttpChatBackend::complete(const std::string& prompt) {
  return query_chat(config_, prompt);
}

std::string HttpChatBackend::identity() const {
  return "http:" + config_.model_name + "@" + config_.base_url;
}

std::string MockChatBackend::complete(const std::string& prompt) {
  const std::string_view text = prompt;
  const std::size_t before = text.find("--- BEFORE ACTION ---");
  if (before != std::string_view::npos) {
    const std::size_t action_at = text.find("--- ACTION TAKEN ---\n- ");
    const std::size_t after = text.find("--- AFTER ACTION ---");
    if (action_at == std::string_view::npos || after == std::string_view::npos) return "unreadable";
    const std::size_t name_start = action_at + std::string_view("--- ACTION TAKEN ---\n- ").size();
    const std::size_t name_end = text.find('\n', name_start);
    const auto action = action_from_name(text.substr(name_start, name_end - name_start));
    const auto prev_speed = read_labelled(text, "Ego speed: ", before);
    const auto prev_ttc = read_labelled(text, "Current lane TTC: ", before);
    const auto next_speed = read_labelled(text, "Ego speed: ", after);
    const auto next_ttc = read_labelled(text, "Current lane TTC: ", after);
    if (!action || !prev_speed || !prev_ttc || !next_speed || !next_ttc) return "unreadable";
    Observation prev{*prev_speed, 0.0, *prev_ttc, 0.0};
    Observation next{*next_speed, 0.0, *next_ttc, 0.0};
    return format_float_repr(mock_score(prev, *action, next, profile_));
  }
  if (text.find("Current observations:") != std::string_view::npos) {
    const auto speed = read_labelled(text, "- Speed: ");
    const auto left = read_labelled(text, "- Left lane TTC: ");
    const auto center = read_labelled(text, "- Center lane TTC: ");
    const auto right = read_labelled(text, "- Right lane TTC: ");
    if (!speed || !left || !center || !right) return "unreadable";
    return std::to_string(action_code(mock_action({*speed, *left, *center, *right}, profile_)));
  }
  return "I do not understand the request.";
}

std::string MockChatBackend::identity() const {
  return std::string(backend_name(profile_ == MockProfile::kBalanced ? BackendKind::kMockBalanced
                                                                      : BackendKind::kMockConservative));
}

std::string_view backend_name(BackendKind kind) {
  switch (kind) {
    case BackendKind::kMockBalanced:
      return "mock-balanced";
    case BackendKind::kMockConservative:
      return "mock-conservative";
    case BackendKind::kHttp:
      return "http";
  }
  return "unknown";
}

std::optional<BackendKind> backend_from_name(std::string_view name) {
  for (const BackendKind kind :
       {BackendKind::kMockBalanced, BackendKind::kMockConservative, BackendKind::kHttp}) {
    if (backend_name(kind) == name) return kind;
  }
  return std::nullopt;
}

std::shared_ptr<ChatBackend> make_backend(BackendKind kind, const EndpointConfig& endpoint) {
  switch (kind) {
    case BackendKind::kMockBalanced:
      return std::make_shared<MockChatBackend>(MockProfile::kBalanced);
    case BackendKind::kMockConservative:
      return std::make_shared<MockChatBackend>(MockProfile::kConservative);
    case BackendKind::kHttp:
      return std::make_shared<HttpChatBackend>(endpoint);
  }
  throw ConfigError("unknown backend kind");
}

ScoreCacheKey make_cache_key(const Observation& prev, MetaAction action, const Observation& next,
                             const ScoreQuantization& q) {
  const auto bucket = [](double value, double resolution) {
    return static_cast<std::int64_t>(std::floor(value / resolution));
  };
  return ScoreCacheKey{bucket(prev.ego_speed, q.speed), bucket(prev.ttc_center, q.ttc),
                       action_code(action), bucket(next.ego_speed, q.speed),
                       bucket(next.ttc_center, q.ttc)};
}

std::size_t ScoreCacheKeyHash::operator()(const ScoreCacheKey& k) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::int64_t part :
       {k.prev_speed, k.prev_ttc, static_cast<std::int64_t>(k.action), k.next_speed, k.next_ttc}) {
    h ^= static_cast<std::uint64_t>(part);
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h);
}

double ScoreCache::cached_score(const ScoreCacheKey& key, const std::function<double()>& compute) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      ++hits_;
      return it->second;
    }
  }
  ++misses_;
  const double value = compute();
  std::lock_guard<std::mutex> lock(mutex_);
  // A concurrent miss on the same key may have landed first; keep its value.
  return entries_.try_emplace(key, value).first->second;
}

std::size_t ScoreCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return entries_.size();
}

TransitionScorer::TransitionScorer(std::shared_ptr<ChatBackend> backend, double fallback_score,
                                   std::optional<ScoreQuantization> cache)
    : backend_(std::move(backend)), fallback_score_(fallback_score), quantization_(cache) {
  if (!backend_) throw ConfigError("TransitionScorer requires a backend");
  if (!(fallback_score_ >= 0.0 && fallback_score_ <= 10.0)) {
    throw ConfigError("fallback score must lie in [0, 10]");
  }
  if (quantization_) {
    if (!(quantization_->speed > 0.0) || !(quantization_->ttc > 0.0)) {
      throw ConfigError("cache quantization resolutions must be positive");
    }
    cache_.emplace();
  }
}

double TransitionScorer::raw_score(const Observation& prev, MetaAction action,
                                   const Observation& next) {
  ++requests_;
  const auto compute = [&] {
    ++backend_calls_;
    return parse_score_response(backend_->complete(render_score_prompt(prev, action, next)));
  };
  try {
    if (cache_) return cache_->cached_score(make_cache_key(prev, action, next, *quantization_), compute);
    return compute();
  } catch (const ParseError& e) {
    ++parse_failures_;
    log_warning(std::string("score reply unusable, using fallback: ") + e.what());
  } catch (const TransportError& e) {
    ++transport_failures_;
    log_warning(std::string("scorer transport failure, using fallback: ") + e.what());
  }
  ++fallbacks_;
  return fallback_score_;
}

ScorerCounters TransitionScorer::counters() const {
  ScorerCounters c;
  c.requests = requests_.load();
  c.backend_calls = backend_calls_.load();
  c.cache_hits = cache_ ? cache_->hits() : 0;
  c.cache_misses = cache_ ? cache_->misses() : 0;
  c.fallbacks = fallbacks_.load();
  c.parse_failures = parse_failures_.load();
  c.transport_failures = transport_failures_.load();
  return c;
}

}  // namespace shwy
