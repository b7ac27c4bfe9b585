#include "scope/agent.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "scope/errors.hpp"

namespace scope {

using nlohmann::json;

namespace {

const std::vector<ModuleName> kModules = {ModuleName::InteractiveMode, ModuleName::Segmentation,
                                          ModuleName::SelectMask, ModuleName::Tracking};

const std::vector<std::string> kCriteria = {
    "always",               //
    "query_active",         // a segmentation query is in progress
    "candidates_ready",     // a non-exhausted candidate page is displayed
    "candidates_exhausted", // the operator paged past the last candidates
    "selection_pending",    // a mask is selected but not yet labeled
    "selection_committed",  // selection labeled and handed to tracking
    "tracking_active",      // at least one tracked object
};

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

std::string_view to_string(ModuleName m) {
  switch (m) {
    case ModuleName::InteractiveMode: return "InteractiveMode";
    case ModuleName::Segmentation: return "Segmentation";
    case ModuleName::SelectMask: return "SelectMask";
    case ModuleName::Tracking: return "Tracking";
  }
  return "?";
}

ModuleName module_from_string(std::string_view s) {
  for (ModuleName m : kModules) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown workflow module: " + std::string(s));
}

const std::vector<ModuleName>& all_modules() { return kModules; }
const std::vector<std::string>& criterion_names() { return kCriteria; }

std::string_view to_string(StepOutcome o) {
  switch (o) {
    case StepOutcome::ok: return "ok";
    case StepOutcome::policy_violation: return "policy_violation";
    case StepOutcome::parse_failure: return "parse_failure";
    case StepOutcome::tool_failure: return "tool_failure";
    case StepOutcome::degraded: return "degraded";
  }
  return "?";
}

bool WorkflowModule::allows(std::string_view tool) const {
  return std::find(allowed_tools.begin(), allowed_tools.end(), tool) != allowed_tools.end();
}

WorkflowConfig default_workflow_config() {
  WorkflowConfig c;
  c.description =
      "You are the voice assistant of a surgical perception system. The surgeon talks to you while operating; "
      "you segment and track instruments and anatomy in the endoscopic video by calling tools. Keep spoken "
      "replies short.";

  c.tools = {
      {"segment", "Segment objects described by a text query on the current frame and show candidate masks.",
       {{"query", "string", true}}},
      {"next_page", "Show the next page of candidate masks when none of the displayed ones is right.", {}},
      {"select", "Select a displayed candidate by its 1-based index, optionally naming it.",
       {{"index", "integer", true}, {"label", "string", false}}},
      {"label", "Assign a name to the selected or most recently tracked object.", {{"label", "string", true}}},
      {"track", "Start tracking the selected object. mode \"medial\" uses a point on the shaft axis when the "
                "instrument has no distinct tip.",
       {{"mode", "string", false}}},
      {"calibrate", "Sample the surface depth around the cursor to set the contact band.", {}},
      {"stop", "Stop the current activity and return to interactive mode.", {}},
  };

  c.modules = {
      {ModuleName::InteractiveMode,
       "Wait for the surgeon's request. Chat briefly if spoken to. When asked to find or segment something, call "
       "segment with the object description.",
       {"always"},
       {"query_active"},
       {"segment"},
       {{"hello", R"({"text_response":"Hello. What would you like me to segment?"})"},
        {"segment the surgical instruments",
         R"({"action":{"args":{"query":"surgical instruments"},"tool":"segment"},"text_response":"Segmenting surgical instruments now."})"}}},
      {ModuleName::Segmentation,
       "Candidate masks are being computed for the active query. If the surgeon rephrases, call segment again.",
       {"query_active"},
       {"candidates_ready"},
       {"segment", "stop"},
       {{"segment the forceps instead",
         R"({"action":{"args":{"query":"forceps"},"tool":"segment"},"text_response":"Segmenting forceps now."})"}}},
      {ModuleName::SelectMask,
       "Up to six numbered candidate masks are displayed. Map ordinal phrases to select, rejections to next_page, "
       "names to label. If the query was for an instrument tip, selecting the mask is enough.",
       {"candidates_ready"},
       {"selection_committed", "candidates_exhausted"},
       {"select", "next_page", "label", "track", "segment", "stop"},
       {{"the third one, label it suction",
         R"({"action":{"args":{"index":3,"label":"suction"},"tool":"select"},"text_response":"Selected candidate 3. Labeled suction."})"},
        {"none of these",
         R"({"action":{"tool":"next_page"},"text_response":"Showing the next candidates."})"}}},
      {ModuleName::Tracking,
       "Selected objects are being tracked. The surgeon may ask for the tip of a tracked instrument, rename an "
       "object, calibrate the surface depth or stop.",
       {"selection_committed"},
       {"query_active"},
       {"segment", "label", "track", "calibrate", "stop"},
       {{"segment the tip of suction",
         R"({"action":{"args":{"query":"tip of suction"},"tool":"segment"},"text_response":"Segmenting tip of suction now."})"},
        {"it has no tip",
         R"({"action":{"args":{"mode":"medial"},"tool":"track"},"text_response":"Using a point along the shaft axis."})"}}},
  };

  c.rules = {
      "Reply with exactly one JSON object and nothing else: {\"action\": {\"tool\": <name>, \"args\": {...}}, "
      "\"text_response\": <string>}. Omit \"action\" when no tool call is needed. No other keys.",
      "Only call tools listed as allowed for the current module.",
      "Arguments must match the tool's parameter list and types.",
      "text_response is spoken aloud: one or two short sentences.",
      "Never invent candidate indices that are not displayed.",
  };

  using M = ModuleName;
  c.transitions = {
      {M::InteractiveMode, "segment", "always", M::Segmentation},
      {M::Segmentation, "", "candidates_ready", M::SelectMask},
      {M::Segmentation, "segment", "always", M::Segmentation},
      {M::Segmentation, "stop", "always", M::InteractiveMode},
      {M::SelectMask, "select", "selection_committed", M::Tracking},
      {M::SelectMask, "label", "selection_committed", M::Tracking},
      {M::SelectMask, "track", "selection_committed", M::Tracking},
      {M::SelectMask, "next_page", "candidates_exhausted", M::Segmentation},
      {M::SelectMask, "segment", "always", M::Segmentation},
      {M::SelectMask, "stop", "always", M::InteractiveMode},
      {M::Tracking, "segment", "always", M::Segmentation},
      {M::Tracking, "stop", "always", M::InteractiveMode},
  };
  return c;
}

json workflow_config_to_json(const WorkflowConfig& config) {
  json j;
  j["description"] = config.description;
  j["history_limit"] = config.history_limit;
  j["rules"] = config.rules;
  j["tools"] = json::array();
  for (const auto& t : config.tools) {
    json args = json::array();
    for (const auto& a : t.args) args.push_back({{"name", a.name}, {"type", a.type}, {"required", a.required}});
    j["tools"].push_back({{"name", t.name}, {"description", t.description}, {"args", args}});
  }
  j["modules"] = json::array();
  for (const auto& m : config.modules) {
    json ex = json::array();
    for (const auto& [q, r] : m.examples) ex.push_back({{"utterance", q}, {"response", r}});
    j["modules"].push_back({{"name", to_string(m.name)},
                            {"prompt", m.prompt},
                            {"entry_criteria", m.entry_criteria},
                            {"exit_criteria", m.exit_criteria},
                            {"allowed_tools", m.allowed_tools},
                            {"examples", ex}});
  }
  j["transitions"] = json::array();
  for (const auto& t : config.transitions) {
    j["transitions"].push_back(
        {{"from", to_string(t.from)}, {"tool", t.tool}, {"criterion", t.criterion}, {"to", to_string(t.to)}});
  }
  return j;
}

WorkflowConfig workflow_config_from_json(const json& j) {
  try {
    WorkflowConfig c;
    c.description = j.at("description").get<std::string>();
    c.history_limit = j.value("history_limit", 20);
    c.rules = j.at("rules").get<std::vector<std::string>>();
    for (const auto& t : j.at("tools")) {
      ToolDescriptor d{t.at("name").get<std::string>(), t.value("description", ""), {}};
      for (const auto& a : t.value("args", json::array())) {
        d.args.push_back({a.at("name").get<std::string>(), a.at("type").get<std::string>(), a.value("required", true)});
      }
      c.tools.push_back(std::move(d));
    }
    for (const auto& m : j.at("modules")) {
      WorkflowModule w;
      w.name = module_from_string(m.at("name").get<std::string>());
      w.prompt = m.value("prompt", "");
      w.entry_criteria = m.value("entry_criteria", std::vector<std::string>{});
      w.exit_criteria = m.value("exit_criteria", std::vector<std::string>{});
      w.allowed_tools = m.at("allowed_tools").get<std::vector<std::string>>();
      for (const auto& e : m.value("examples", json::array())) {
        w.examples.emplace_back(e.at("utterance").get<std::string>(), e.at("response").get<std::string>());
      }
      c.modules.push_back(std::move(w));
    }
    for (const auto& t : j.at("transitions")) {
      c.transitions.push_back({module_from_string(t.at("from").get<std::string>()), t.value("tool", ""),
                               t.value("criterion", "always"), module_from_string(t.at("to").get<std::string>())});
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid workflow configuration: ") + e.what());
  }
}

const WorkflowModule& SystemPrompt::module(ModuleName m) const {
  for (const auto& w : modules) {
    if (w.name == m) return w;
  }
  throw ConfigError("module not configured: " + std::string(to_string(m)));
}

const ToolDescriptor* SystemPrompt::tool(std::string_view name) const {
  for (const auto& t : tools) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

SystemPrompt build_system_prompt(const WorkflowConfig& config) {
  std::set<std::string> tool_names;
  for (const auto& t : config.tools) {
    if (!tool_names.insert(t.name).second) throw ConfigError("duplicate tool: " + t.name);
    for (const auto& a : t.args) {
      if (a.type != "string" && a.type != "integer") {
        throw ConfigError("tool " + t.name + " argument " + a.name + " has unsupported type " + a.type);
      }
    }
  }
  const auto known_criterion = [](const std::string& c) {
    return std::find(kCriteria.begin(), kCriteria.end(), c) != kCriteria.end();
  };

  // Modules in canonical order regardless of config order.
  SystemPrompt p;
  for (ModuleName name : kModules) {
    const auto it = std::find_if(config.modules.begin(), config.modules.end(),
                                 [&](const WorkflowModule& m) { return m.name == name; });
    if (it == config.modules.end()) throw ConfigError("workflow module missing: " + std::string(to_string(name)));
    if (std::count_if(config.modules.begin(), config.modules.end(),
                      [&](const WorkflowModule& m) { return m.name == name; }) > 1) {
      throw ConfigError("workflow module defined twice: " + std::string(to_string(name)));
    }
    for (const auto* list : {&it->entry_criteria, &it->exit_criteria}) {
      for (const auto& c : *list) {
        if (!known_criterion(c)) {
          throw ConfigError("module " + std::string(to_string(name)) + " uses unknown criterion " + c);
        }
      }
    }
    for (const auto& t : it->allowed_tools) {
      if (!tool_names.count(t)) {
        throw ConfigError("module " + std::string(to_string(name)) + " references unregistered tool " + t);
      }
    }
    p.modules.push_back(*it);
  }
  for (const auto& t : config.transitions) {
    if (!known_criterion(t.criterion)) throw ConfigError("unknown transition criterion: " + t.criterion);
    if (!t.tool.empty() && !p.module(t.from).allows(t.tool)) {
      throw ConfigError("transition on tool " + t.tool + " not allowed in " + std::string(to_string(t.from)));
    }
  }
  if (config.history_limit < 1) throw ConfigError("history_limit must be at least 1");

  p.tools = config.tools;
  p.rules = config.rules;
  for (const auto& m : p.modules) {
    for (const auto& e : m.examples) p.in_context_examples.push_back(e);
  }

  std::ostringstream os;
  os << config.description << "\n\n# Workflow modules\n";
  for (const auto& m : p.modules) {
    os << "\n## " << to_string(m.name) << "\n" << m.prompt << "\n";
    os << "Entry criteria: " << join(m.entry_criteria, ", ") << "\n";
    os << "Exit criteria: " << join(m.exit_criteria, ", ") << "\n";
    os << "Allowed tools: " << join(m.allowed_tools, ", ") << "\n";
  }
  os << "\n# Tools\n";
  for (const auto& t : p.tools) {
    std::vector<std::string> args;
    for (const auto& a : t.args) args.push_back(a.name + ": " + a.type + (a.required ? "" : " (optional)"));
    os << "- " << t.name << "(" << join(args, ", ") << "): " << t.description << "\n";
  }
  os << "\n# Examples\n";
  for (const auto& [q, r] : p.in_context_examples) os << "User: " << q << "\nAssistant: " << r << "\n";
  os << "\n# Rules\n";
  for (std::size_t i = 0; i < p.rules.size(); ++i) os << i + 1 << ". " << p.rules[i] << "\n";
  p.text = os.str();
  return p;
}

std::string serialize_agent_response(const AgentResponse& r) {
  json j;
  if (r.action) j["action"] = {{"tool", r.action->tool}, {"args", r.action->args}};
  j["text_response"] = r.text_response;
  return j.dump();
}

namespace {

void validate_args(const ToolDescriptor& tool, const json& args) {
  if (!args.is_object()) throw ParseError("args of " + tool.name + " must be an object");
  for (const auto& [key, value] : args.items()) {
    const auto spec = std::find_if(tool.args.begin(), tool.args.end(), [&](const ArgSpec& a) { return a.name == key; });
    if (spec == tool.args.end()) throw ParseError("unknown argument " + key + " for tool " + tool.name);
    const bool ok = spec->type == "string" ? value.is_string() : value.is_number_integer();
    if (!ok) throw ParseError("argument " + key + " of " + tool.name + " must be " + spec->type);
    if (spec->type == "string" && value.get<std::string>().empty()) {
      throw ParseError("argument " + key + " of " + tool.name + " must not be empty");
    }
  }
  for (const auto& a : tool.args) {
    if (a.required && !args.contains(a.name)) throw ParseError("missing argument " + a.name + " for " + tool.name);
  }
}

}  // namespace

AgentResponse parse_agent_response(const std::string& raw, const SessionState& state, const SystemPrompt& prompt) {
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::exception& e) {
    throw ParseError(std::string("response is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("response must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "action" && key != "text_response") throw ParseError("unknown response key: " + key);
  }
  if (!j.contains("text_response") || !j["text_response"].is_string()) {
    throw ParseError("text_response must be a string");
  }

  AgentResponse r;
  r.text_response = j["text_response"].get<std::string>();
  if (!j.contains("action") || j["action"].is_null()) return r;

  const json& a = j["action"];
  if (!a.is_object()) throw ParseError("action must be an object");
  for (const auto& [key, value] : a.items()) {
    if (key != "tool" && key != "args") throw ParseError("unknown action key: " + key);
  }
  if (!a.contains("tool") || !a["tool"].is_string()) throw ParseError("action.tool must be a string");
  ToolCall call{a["tool"].get<std::string>(), a.value("args", json::object())};

  const ToolDescriptor* tool = prompt.tool(call.tool);
  const WorkflowModule& module = prompt.module(state.current_module);
  if (tool == nullptr || !module.allows(call.tool)) {
    throw PolicyViolationError("tool " + call.tool + " is not allowed in " + std::string(to_string(module.name)));
  }
  validate_args(*tool, call.args);
  r.action = std::move(call);
  return r;
}

bool evaluate_criterion(const std::string& name, const SessionState& state) {
  const auto& in = state.inputs;
  if (name == "always") return true;
  if (name == "query_active") return !in.active_query.empty();
  if (name == "candidates_ready") return in.candidates.has_value() && !in.candidates->exhausted();
  if (name == "candidates_exhausted") return in.candidates.has_value() && in.candidates->exhausted();
  if (name == "selection_pending") return in.pending.has_value();
  if (name == "selection_committed") return !in.pending && !in.candidates && !in.tracked.empty();
  if (name == "tracking_active") return !in.tracked.empty();
  throw ConfigError("unknown criterion: " + name);
}

json system_inputs_summary(const SessionState& state) {
  const auto& in = state.inputs;
  json j;
  j["module"] = to_string(state.current_module);
  j["frame"] = in.frame_index;
  j["active_query"] = in.active_query;
  if (in.candidates) {
    j["candidates"] = {{"frame", in.candidates_frame},
                       {"page_index", in.candidates->page_index()},
                       {"page_count", in.candidates->page_count()},
                       {"displayed", in.candidates->page().size()},
                       {"exhausted", in.candidates->exhausted()}};
  } else {
    j["candidates"] = nullptr;
  }
  j["pending_selection"] = in.pending ? json(in.pending->index) : json(nullptr);
  j["tracked"] = json::array();
  for (const auto& t : in.tracked) j["tracked"].push_back({{"id", t.id}, {"label", t.label}, {"kind", t.kind}});
  return j;
}

json session_state_to_json(const SessionState& state) {
  json j = system_inputs_summary(state);
  const auto& in = state.inputs;
  if (in.candidates) {
    json all = json::array();
    for (const auto& c : in.candidates->all_candidates()) {
      all.push_back({{"mask", mask_to_json(c.mask)}, {"score", c.score}, {"source_prompt", c.source_prompt}});
    }
    j["candidates"]["all"] = all;
  }
  if (in.pending) j["pending_mask"] = mask_to_json(in.pending->mask);
  for (std::size_t i = 0; i < in.tracked.size(); ++i) {
    j["tracked"][i]["mask"] = mask_to_json(in.tracked[i].mask);
    j["tracked"][i]["start_frame"] = in.tracked[i].start_frame;
  }
  j["next_object_id"] = in.next_object_id;
  j["history"] = json::array();
  for (const auto& e : state.history) j["history"].push_back({{"q", e.query}, {"response", e.response}});
  j["pending_query"] = state.pending_query ? json(*state.pending_query) : json(nullptr);
  return j;
}

void ToolRegistry::add(const std::string& name, ToolHandler handler) {
  if (!handler) throw ConfigError("empty handler for tool " + name);
  handlers_[name] = std::move(handler);
}

std::vector<std::string> ToolRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, h] : handlers_) out.push_back(name);
  return out;
}

ToolResult ToolRegistry::invoke(const std::string& name, const json& args, SessionState& state) const {
  const auto it = handlers_.find(name);
  if (it == handlers_.end()) throw ConfigError("no handler registered for tool " + name);
  return it->second(args, state);
}

SessionState settle(SessionState state, const WorkflowConfig& config) {
  // Bounded: each automatic edge can fire at most once per settle.
  for (std::size_t guard = 0; guard <= config.transitions.size(); ++guard) {
    bool moved = false;
    for (const auto& t : config.transitions) {
      if (t.tool.empty() && t.from == state.current_module && evaluate_criterion(t.criterion, state)) {
        state.current_module = t.to;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  return state;
}

LlmRequest make_llm_request(const SessionState& state, const std::string& query, const SystemPrompt& prompt,
                            int history_limit) {
  LlmRequest r;
  r.task = "respond";
  r.query = query;
  r.system_prompt = prompt.text;
  r.system_inputs = system_inputs_summary(state);
  const auto limit = static_cast<std::size_t>(std::max(history_limit, 1));
  const std::size_t n = state.history.size();
  if (n > limit) {
    r.history.push_back({"(summary)", std::to_string(n - limit) + " earlier exchanges omitted."});
    r.history.insert(r.history.end(), state.history.end() - static_cast<std::ptrdiff_t>(limit), state.history.end());
  } else {
    r.history = state.history;
  }
  return r;
}

Agent::Agent(WorkflowConfig config, std::shared_ptr<LlmBackend> llm)
    : config_(std::move(config)), prompt_(build_system_prompt(config_)), llm_(std::move(llm)) {
  if (!llm_) throw ConfigError("agent requires an LLM backend");
}

std::string Agent::query_model(const LlmRequest& request) const {
  try {
    return llm_->complete(request);
  } catch (const BackendError&) {
    // One retry for any backend failure; a second failure propagates.
    return llm_->complete(request);
  }
}

StepResult Agent::step(const SessionState& input, const std::string& query, const ToolRegistry& tools) const {
  SessionState state = settle(input, config_);
  state.pending_query = query;

  StepResult result;
  result.module_before = state.current_module;

  const LlmRequest request = make_llm_request(state, query, prompt_, config_.history_limit);
  std::string raw;
  try {
    raw = query_model(request);
  } catch (const BackendError& e) {
    result.response.text_response = "I cannot reach the language model right now. Please repeat that in a moment.";
    result.reply = result.response.text_response;
    result.outcome = StepOutcome::degraded;
    state.history.push_back({query, serialize_agent_response(result.response)});
    state.pending_query.reset();
    result.state = std::move(state);
    result.module_after = result.state.current_module;
    return result;
  }

  AgentResponse response;
  std::string failure;
  StepOutcome outcome = StepOutcome::ok;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      response = parse_agent_response(raw, state, prompt_);
      outcome = StepOutcome::ok;
      break;
    } catch (const ParseError& e) {
      outcome = StepOutcome::parse_failure;
      failure = e.what();
      if (attempt == 1) break;
      LlmRequest repair = request;
      repair.system_prompt += "\n\nYour previous reply could not be used (" + failure +
                              "). Reply again with only the JSON object described in the rules.";
      try {
        raw = query_model(repair);
      } catch (const BackendError&) {
        break;
      }
    } catch (const PolicyViolationError& e) {
      // Keep the spoken text, drop the action.
      outcome = StepOutcome::policy_violation;
      failure = e.what();
      response = AgentResponse{};
      try {
        response.text_response = json::parse(raw).at("text_response").get<std::string>();
      } catch (const json::exception&) {
      }
      break;
    }
  }

  if (outcome == StepOutcome::parse_failure) {
    result.response.text_response = "Sorry, I could not work out what to do. Could you say that again?";
    result.reply = result.response.text_response;
    result.outcome = outcome;
    result.raw_response = raw;
    state.history.push_back({query, serialize_agent_response(result.response)});
    state.pending_query.reset();
    result.state = std::move(state);
    result.module_after = result.state.current_module;
    return result;
  }
  if (outcome == StepOutcome::policy_violation) {
    result.response = response;
    result.reply = "I can't do that right now: " + failure + ".";
    result.outcome = outcome;
    result.raw_response = raw;
    state.history.push_back({query, serialize_agent_response(result.response)});
    state.pending_query.reset();
    result.state = std::move(state);
    result.module_after = result.state.current_module;
    return result;
  }
  return execute(std::move(state), query, std::move(response), std::move(raw), tools);
}

StepResult Agent::apply_action(const SessionState& input, const std::string& query, const ToolCall& call,
                               const ToolRegistry& tools) const {
  SessionState state = settle(input, config_);
  state.pending_query = query;
  AgentResponse response;
  response.action = call;
  const std::string raw = serialize_agent_response(response);
  StepResult result;
  result.module_before = state.current_module;
  try {
    response = parse_agent_response(raw, state, prompt_);
  } catch (const Error& e) {
    result.response.text_response = "";
    result.reply = std::string("I can't do that right now: ") + e.what() + ".";
    result.outcome = dynamic_cast<const PolicyViolationError*>(&e) ? StepOutcome::policy_violation
                                                                   : StepOutcome::parse_failure;
    result.raw_response = raw;
    state.history.push_back({query, serialize_agent_response(result.response)});
    state.pending_query.reset();
    result.state = std::move(state);
    result.module_after = result.state.current_module;
    return result;
  }
  return execute(std::move(state), query, std::move(response), raw, tools);
}

StepResult Agent::execute(SessionState state, const std::string& query, AgentResponse response, std::string raw,
                          const ToolRegistry& tools) const {
  StepResult result;
  result.module_before = state.current_module;
  result.raw_response = std::move(raw);
  result.reply = response.text_response;

  if (response.action) {
    const ToolCall& call = *response.action;
    SessionState scratch = state;
    try {
      const ToolResult out = tools.invoke(call.tool, call.args, scratch);
      if (!out.text.empty()) result.reply += (result.reply.empty() ? "" : " ") + out.text;
      state = std::move(scratch);
      result.executed = call;
      for (const auto& t : config_.transitions) {
        if (t.from == result.module_before && t.tool == call.tool && evaluate_criterion(t.criterion, state)) {
          state.current_module = t.to;
          break;
        }
      }
    } catch (const std::exception& e) {
      result.outcome = StepOutcome::tool_failure;
      result.reply = std::string("That did not work: ") + e.what();
    }
  }

  result.response = std::move(response);
  state.history.push_back({query, serialize_agent_response(result.response)});
  state.pending_query.reset();
  result.module_after = state.current_module;
  result.state = std::move(state);
  return result;
}

}  // namespace scope
