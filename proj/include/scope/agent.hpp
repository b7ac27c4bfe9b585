#pragma once

// Conversational workflow agent.
//
// Each operator utterance becomes one step: the agent sends the query, a
// textual summary of the session, the system prompt and the recent history to
// the language model, parses the structured reply {action?, text_response},
// checks the action against the current module's allowed tools, executes it
// through the tool registry and moves along the configured transition table.
// The model proposes; the state machine decides whether a transition happens.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scope/backends.hpp"
#include "scope/candidates.hpp"

namespace scope {

enum class ModuleName { InteractiveMode, Segmentation, SelectMask, Tracking };

std::string_view to_string(ModuleName m);
// Throws ConfigError on an unknown name.
ModuleName module_from_string(std::string_view s);
const std::vector<ModuleName>& all_modules();

struct ArgSpec {
  std::string name;
  std::string type;  // "string" or "integer"
  bool required = true;
};

struct ToolDescriptor {
  std::string name;
  std::string description;
  std::vector<ArgSpec> args;
};

struct WorkflowModule {
  ModuleName name = ModuleName::InteractiveMode;
  std::string prompt;
  std::vector<std::string> entry_criteria;
  std::vector<std::string> exit_criteria;
  std::vector<std::string> allowed_tools;
  std::vector<std::pair<std::string, std::string>> examples;  // (utterance, response)

  bool allows(std::string_view tool) const;
};

// Edge of the workflow graph. An empty tool marks an automatic transition,
// evaluated before each step.
struct Transition {
  ModuleName from = ModuleName::InteractiveMode;
  std::string tool;
  std::string criterion;  // name of a session predicate, see criterion_names()
  ModuleName to = ModuleName::InteractiveMode;
};

struct WorkflowConfig {
  std::string description;
  std::vector<WorkflowModule> modules;
  std::vector<ToolDescriptor> tools;
  std::vector<std::string> rules;
  std::vector<Transition> transitions;
  int history_limit = 20;
};

WorkflowConfig default_workflow_config();
nlohmann::json workflow_config_to_json(const WorkflowConfig& config);
WorkflowConfig workflow_config_from_json(const nlohmann::json& j);
const std::vector<std::string>& criterion_names();

struct SystemPrompt {
  std::vector<WorkflowModule> modules;
  std::vector<ToolDescriptor> tools;
  std::vector<std::pair<std::string, std::string>> in_context_examples;
  std::vector<std::string> rules;
  std::string text;  // deterministic serialization sent to the model

  const WorkflowModule& module(ModuleName m) const;
  const ToolDescriptor* tool(std::string_view name) const;
};

// Validates the config (all four modules present, tools registered, known
// criteria) and serializes it. Throws ConfigError.
SystemPrompt build_system_prompt(const WorkflowConfig& config);

struct ToolCall {
  std::string tool;
  nlohmann::json args = nlohmann::json::object();
};

struct AgentResponse {
  std::optional<ToolCall> action;
  std::string text_response;
};

// Canonical wire form: {"action":{"tool":..,"args":{..}},"text_response":..}.
std::string serialize_agent_response(const AgentResponse& r);

struct TrackedObject {
  int id = 0;
  std::string label;
  std::string kind;  // "instrument", "tip" or "anatomy"
  Mask mask;         // mask at start_frame
  int start_frame = 0;
};

struct PendingSelection {
  int index = 0;  // 1-based position on the displayed page
  Mask mask;
};

// The system inputs sent with each query, in summarized form.
struct SystemInputs {
  int frame_index = 0;
  std::string active_query;
  std::optional<CandidatePageState> candidates;
  int candidates_frame = 0;  // frame the candidate masks were computed on
  std::optional<PendingSelection> pending;
  std::vector<TrackedObject> tracked;
  int next_object_id = 1;
};

struct SessionState {
  ModuleName current_module = ModuleName::InteractiveMode;
  std::vector<Exchange> history;  // append-only (query, canonical response)
  SystemInputs inputs;
  std::optional<std::string> pending_query;
};

nlohmann::json system_inputs_summary(const SessionState& state);
// Canonical JSON of the full state, for fingerprints and replay checks.
nlohmann::json session_state_to_json(const SessionState& state);
bool evaluate_criterion(const std::string& name, const SessionState& state);

// Parses and validates raw model output against the current module. Throws
// ParseError on malformed structure or arguments and PolicyViolationError for
// a tool the current module does not allow.
AgentResponse parse_agent_response(const std::string& raw, const SessionState& state, const SystemPrompt& prompt);

struct ToolResult {
  std::string text;  // appended to the spoken reply
};

// Handlers mutate the state they are given; the agent hands them a copy and
// commits it only when they return normally.
using ToolHandler = std::function<ToolResult(const nlohmann::json& args, SessionState& state)>;

class ToolRegistry {
 public:
  void add(const std::string& name, ToolHandler handler);
  bool has(const std::string& name) const { return handlers_.count(name) > 0; }
  std::vector<std::string> names() const;
  ToolResult invoke(const std::string& name, const nlohmann::json& args, SessionState& state) const;

 private:
  std::map<std::string, ToolHandler> handlers_;
};

enum class StepOutcome { ok, policy_violation, parse_failure, tool_failure, degraded };
std::string_view to_string(StepOutcome o);

struct StepResult {
  AgentResponse response;  // as recorded in history (actions that were refused are dropped)
  std::string reply;       // text for the operator, including tool output or errors
  SessionState state;
  ModuleName module_before = ModuleName::InteractiveMode;
  ModuleName module_after = ModuleName::InteractiveMode;
  StepOutcome outcome = StepOutcome::ok;
  std::optional<ToolCall> executed;  // the action that ran, if any
  std::string raw_response;
};

// Follows automatic transitions whose criteria hold.
SessionState settle(SessionState state, const WorkflowConfig& config);

// Builds the model request for a query: summary inputs plus the last
// history_limit exchanges, older ones folded into one summary line.
LlmRequest make_llm_request(const SessionState& state, const std::string& query, const SystemPrompt& prompt,
                            int history_limit);

class Agent {
 public:
  Agent(WorkflowConfig config, std::shared_ptr<LlmBackend> llm);

  const WorkflowConfig& config() const { return config_; }
  const SystemPrompt& prompt() const { return prompt_; }

  // One exchange. Never throws for model or tool failures; those are reported
  // in the result's outcome and reply text.
  StepResult step(const SessionState& state, const std::string& query, const ToolRegistry& tools) const;

  // Executes a known action directly (operator console selections), with the
  // same policy checks and transitions as a model-proposed action.
  StepResult apply_action(const SessionState& state, const std::string& query, const ToolCall& call,
                          const ToolRegistry& tools) const;

 private:
  std::string query_model(const LlmRequest& request) const;
  StepResult execute(SessionState state, const std::string& query, AgentResponse response, std::string raw,
                     const ToolRegistry& tools) const;

  WorkflowConfig config_;
  SystemPrompt prompt_;
  std::shared_ptr<LlmBackend> llm_;
};

}  // namespace scope
