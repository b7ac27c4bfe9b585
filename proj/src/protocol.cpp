#include "scope/protocol.hpp"

#include <sodium.h>

#include <algorithm>
#include <bit>
#include <cstring>

#include "scope/errors.hpp"

namespace scope {
namespace {

using nlohmann::json;

enum class FieldType { string, integer, number, boolean, object, array, mask };

struct Field {
  const char* name;
  FieldType type;
  bool required = true;
};

bool has_type(const json& v, FieldType t) {
  switch (t) {
    case FieldType::string: return v.is_string();
    case FieldType::integer: return v.is_number_integer();
    case FieldType::number: return v.is_number();
    case FieldType::boolean: return v.is_boolean();
    case FieldType::object: return v.is_object();
    case FieldType::array: return v.is_array();
    case FieldType::mask: return v.is_object();
  }
  return false;
}

void check_mask(const json& v, const std::string& where) {
  try {
    (void)mask_from_json(v);
  } catch (const Error& e) {
    throw ProtocolError(where + ": " + e.what());
  }
  for (const auto& [k, _] : v.items()) {
    if (k != "w" && k != "h" && k != "runs") throw ProtocolError(where + ": unknown mask key '" + k + "'");
  }
}

void check_fields(const json& obj, std::initializer_list<Field> fields, const std::string& where) {
  if (!obj.is_object()) throw ProtocolError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    const bool known = std::any_of(fields.begin(), fields.end(), [&](const Field& f) { return key == f.name; });
    if (!known) throw ProtocolError(where + ": unknown key '" + key + "'");
  }
  for (const Field& f : fields) {
    const std::string path = where + "." + f.name;
    if (!obj.contains(f.name)) {
      if (f.required) throw ProtocolError(path + ": missing");
      continue;
    }
    const json& v = obj.at(f.name);
    if (!has_type(v, f.type)) throw ProtocolError(path + ": wrong type");
    if (f.type == FieldType::mask) check_mask(v, path);
  }
}

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw Error("libsodium failed to initialise");
}

}  // namespace

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::stt: return "stt";
    case BackendKind::llm: return "llm";
    case BackendKind::segment_text: return "segment_text";
    case BackendKind::segment_point: return "segment_point";
    case BackendKind::propagate: return "propagate";
    case BackendKind::depth: return "depth";
  }
  return "unknown";
}

BackendKind backend_kind_from_string(std::string_view name) {
  for (BackendKind k : all_backend_kinds())
    if (to_string(k) == name) return k;
  throw ProtocolError("unknown backend kind '" + std::string(name) + "'");
}

const std::vector<BackendKind>& all_backend_kinds() {
  static const std::vector<BackendKind> kinds{BackendKind::stt,           BackendKind::llm,
                                              BackendKind::segment_text,  BackendKind::segment_point,
                                              BackendKind::propagate,     BackendKind::depth};
  return kinds;
}

json make_envelope(BackendKind kind, json payload) {
  return {{"kind", std::string(to_string(kind))}, {"version", kProtocolVersion}, {"payload", std::move(payload)}};
}

BackendKind validate_envelope(const json& envelope) {
  check_fields(envelope, {{"kind", FieldType::string}, {"version", FieldType::string}, {"payload", FieldType::object}},
               "envelope");
  if (envelope.at("version").get<std::string>() != kProtocolVersion) {
    throw ProtocolError("envelope.version: unsupported '" + envelope.at("version").get<std::string>() + "'");
  }
  return backend_kind_from_string(envelope.at("kind").get<std::string>());
}

void validate_request(BackendKind kind, const json& p) {
  const std::string where = std::string(to_string(kind)) + ".request";
  switch (kind) {
    case BackendKind::stt:
      check_fields(p, {{"audio_b64", FieldType::string}}, where);
      (void)base64_decode(p.at("audio_b64").get<std::string>());
      break;
    case BackendKind::llm: {
      check_fields(p,
                   {{"task", FieldType::string},
                    {"query", FieldType::string},
                    {"system_prompt", FieldType::string, false},
                    {"system_inputs", FieldType::object, false},
                    {"history", FieldType::array, false},
                    {"expansion_count", FieldType::integer, false}},
                   where);
      const auto task = p.at("task").get<std::string>();
      if (task != "respond" && task != "expand") throw ProtocolError(where + ".task: must be respond or expand");
      if (p.contains("history")) {
        for (const auto& h : p.at("history")) {
          check_fields(h, {{"q", FieldType::string}, {"response", FieldType::string}}, where + ".history[]");
        }
      }
      break;
    }
    case BackendKind::segment_text:
      check_fields(p, {{"prompt", FieldType::string}, {"frame", FieldType::integer}}, where);
      break;
    case BackendKind::segment_point: {
      check_fields(p, {{"frame", FieldType::integer}, {"point", FieldType::object}, {"polarity", FieldType::string}},
                   where);
      check_fields(p.at("point"), {{"x", FieldType::integer}, {"y", FieldType::integer}}, where + ".point");
      const auto pol = p.at("polarity").get<std::string>();
      if (pol != "positive" && pol != "negative") throw ProtocolError(where + ".polarity: bad value");
      break;
    }
    case BackendKind::propagate:
      check_fields(p,
                   {{"initial", FieldType::mask}, {"from_frame", FieldType::integer}, {"to_frame", FieldType::integer}},
                   where);
      break;
    case BackendKind::depth:
      check_fields(p, {{"frame", FieldType::integer}}, where);
      break;
  }
}

void validate_response(BackendKind kind, const json& p) {
  const std::string where = std::string(to_string(kind)) + ".response";
  switch (kind) {
    case BackendKind::stt:
    case BackendKind::llm:
      check_fields(p, {{"text", FieldType::string}}, where);
      break;
    case BackendKind::segment_text:
      check_fields(p, {{"candidates", FieldType::array}}, where);
      for (const auto& c : p.at("candidates")) {
        check_fields(c,
                     {{"mask", FieldType::mask},
                      {"score", FieldType::number},
                      {"source_prompt", FieldType::string},
                      {"backend_id", FieldType::string}},
                     where + ".candidates[]");
        const double s = c.at("score").get<double>();
        if (!(s >= 0.0 && s <= 1.0)) throw ProtocolError(where + ".candidates[].score: outside [0,1]");
      }
      break;
    case BackendKind::segment_point:
      check_fields(p, {{"mask", FieldType::mask}}, where);
      break;
    case BackendKind::propagate:
      check_fields(p, {{"masks", FieldType::array}}, where);
      for (const auto& m : p.at("masks")) check_mask(m, where + ".masks[]");
      break;
    case BackendKind::depth:
      check_fields(p,
                   {{"width", FieldType::integer},
                    {"height", FieldType::integer},
                    {"encoding", FieldType::string},
                    {"data", FieldType::string}},
                   where);
      try {
        (void)depth_from_json(p);
      } catch (const ProtocolError&) {
        throw;
      } catch (const Error& e) {
        throw ProtocolError(where + ": " + e.what());
      }
      break;
  }
}

void validate_error_body(const json& body) {
  check_fields(body, {{"code", FieldType::string}, {"message", FieldType::string}, {"retryable", FieldType::boolean}},
               "error");
}

json error_body(const std::string& code, const std::string& message, bool retryable) {
  return {{"code", code}, {"message", message}, {"retryable", retryable}};
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  ensure_sodium();
  const std::size_t cap = sodium_base64_ENCODED_LEN(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(cap, '\0');
  sodium_bin2base64(out.data(), cap, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::strlen(out.c_str()));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  ensure_sodium();
  std::vector<std::uint8_t> out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0) {
    throw ProtocolError("malformed base64");
  }
  out.resize(len);
  return out;
}

json depth_to_json(const DepthMap& depth) {
  const auto values = depth.values();
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return {{"width", depth.width()}, {"height", depth.height()}, {"encoding", "f32le-base64"},
          {"data", base64_encode(bytes)}};
}

DepthMap depth_from_json(const json& j) {
  if (j.value("encoding", "") != "f32le-base64") throw ProtocolError("depth: unsupported encoding");
  const auto bytes = base64_decode(j.at("data").get<std::string>());
  if (bytes.size() % 4 != 0) throw ProtocolError("depth: payload is not a whole number of floats");
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return DepthMap(j.at("width").get<int>(), j.at("height").get<int>(), std::move(values));
}

json candidate_to_json(const ScoredCandidate& c) {
  return {{"mask", mask_to_json(c.mask)},
          {"score", c.score},
          {"source_prompt", c.source_prompt},
          {"backend_id", c.backend_id}};
}

ScoredCandidate candidate_from_json(const json& j) {
  return {mask_from_json(j.at("mask")), j.at("score").get<double>(), j.at("source_prompt").get<std::string>(),
          j.at("backend_id").get<std::string>()};
}

json llm_request_to_json(const LlmRequest& r) {
  json history = json::array();
  for (const auto& h : r.history) history.push_back({{"q", h.query}, {"response", h.response}});
  return {{"task", r.task},
          {"query", r.query},
          {"system_prompt", r.system_prompt},
          {"system_inputs", r.system_inputs},
          {"history", history},
          {"expansion_count", r.expansion_count}};
}

LlmRequest llm_request_from_json(const json& j) {
  LlmRequest r;
  r.task = j.at("task").get<std::string>();
  r.query = j.at("query").get<std::string>();
  r.system_prompt = j.value("system_prompt", "");
  r.system_inputs = j.value("system_inputs", json::object());
  r.expansion_count = j.value("expansion_count", 3);
  if (j.contains("history")) {
    for (const auto& h : j.at("history")) r.history.push_back({h.at("q").get<std::string>(), h.at("response").get<std::string>()});
  }
  return r;
}

DispatchResult dispatch_request(const BackendSet& b, const json& envelope) {
  BackendKind kind;
  try {
    kind = validate_envelope(envelope);
    validate_request(kind, envelope.at("payload"));
  } catch (const ProtocolError& e) {
    return {400, error_body("bad_request", e.what(), false)};
  }

  const json& p = envelope.at("payload");
  auto missing = [&] { return DispatchResult{501, error_body("not_implemented", "no backend for this kind", false)}; };
  try {
    json out;
    switch (kind) {
      case BackendKind::stt: {
        if (!b.stt) return missing();
        const auto audio = base64_decode(p.at("audio_b64").get<std::string>());
        out = {{"text", b.stt->transcribe(audio)}};
        break;
      }
      case BackendKind::llm:
        if (!b.llm) return missing();
        out = {{"text", b.llm->complete(llm_request_from_json(p))}};
        break;
      case BackendKind::segment_text: {
        if (!b.segment_text) return missing();
        json arr = json::array();
        for (const auto& c : b.segment_text->segment(p.at("prompt").get<std::string>(), p.at("frame").get<int>())) {
          arr.push_back(candidate_to_json(c));
        }
        out = {{"candidates", arr}};
        break;
      }
      case BackendKind::segment_point: {
        if (!b.segment_point) return missing();
        PointPrompt prompt{{p.at("point").at("x").get<int>(), p.at("point").at("y").get<int>()},
                           p.at("polarity").get<std::string>() == "positive", false};
        out = {{"mask", mask_to_json(b.segment_point->segment(prompt, p.at("frame").get<int>()))}};
        break;
      }
      case BackendKind::propagate: {
        if (!b.propagate) return missing();
        json arr = json::array();
        for (const auto& m : b.propagate->propagate(mask_from_json(p.at("initial")), p.at("from_frame").get<int>(),
                                                    p.at("to_frame").get<int>())) {
          arr.push_back(mask_to_json(m));
        }
        out = {{"masks", arr}};
        break;
      }
      case BackendKind::depth:
        if (!b.depth) return missing();
        out = depth_to_json(b.depth->estimate(p.at("frame").get<int>()));
        break;
    }
    return {200, make_envelope(kind, std::move(out))};
  } catch (const RangeError& e) {
    return {404, error_body("out_of_range", e.what(), false)};
  } catch (const BackendTimeoutError& e) {
    return {504, error_body(e.code(), e.what(), true)};
  } catch (const BackendError& e) {
    return {502, error_body(e.code(), e.what(), e.retryable())};
  } catch (const std::exception& e) {
    return {500, error_body("internal", e.what(), false)};
  }
}

}  // namespace scope
