#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "deskagent/grasp/generate.hpp"
#include "deskagent/pddl/ast.hpp"
#include "deskagent/sim/world.hpp"

namespace deskagent::obs {

enum class RequestKind { ParseTask, CheckConditions, EvaluateGrasp, DetectObject, CheckGoal };

inline constexpr RequestKind kAllKinds[] = {RequestKind::ParseTask, RequestKind::CheckConditions,
                                            RequestKind::EvaluateGrasp, RequestKind::DetectObject,
                                            RequestKind::CheckGoal};

inline const char* to_string(RequestKind k) {
  switch (k) {
    case RequestKind::ParseTask: return "parse-task";
    case RequestKind::CheckConditions: return "check-conditions";
    case RequestKind::EvaluateGrasp: return "evaluate-grasp";
    case RequestKind::DetectObject: return "detect-object";
    case RequestKind::CheckGoal: return "check-goal";
  }
  return "?";
}

inline std::optional<RequestKind> kind_from_string(const std::string& s) {
  for (auto k : kAllKinds)
    if (s == to_string(k)) return k;
  return std::nullopt;
}

class ObserverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Unsupported : public ObserverError {
 public:
  explicit Unsupported(RequestKind k) : ObserverError(std::string("observer cannot serve ") + to_string(k)) {}
};

class SchemaError : public ObserverError {
 public:
  SchemaError(std::string field, const std::string& why)
      : ObserverError("schema error at '" + field + "': " + why), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class InvalidRequest : public ObserverError {
 public:
  using ObserverError::ObserverError;
};

struct ObserverRequest {
  RequestKind kind = RequestKind::CheckConditions;
  std::string instruction;
  sim::Observation observation;
  std::optional<std::string> domain_text;  // ParseTask context
  std::optional<pddl::Conjunction> conditions;
  std::string action;  // CheckConditions: the ground action, e.g. "(pick apple)"
  std::string phase;   // CheckConditions: "pre" or "effect"
  std::optional<grasp::GraspCandidate> candidate;
  std::string query_object;  // DetectObject target; EvaluateGrasp intended target

  void validate() const {
    switch (kind) {
      case RequestKind::ParseTask:
        if (instruction.empty()) throw InvalidRequest("parse-task requires an instruction");
        if (!domain_text) throw InvalidRequest("parse-task requires a domain");
        break;
      case RequestKind::CheckConditions:
        if (!conditions) throw InvalidRequest("check-conditions requires conditions");
        break;
      case RequestKind::EvaluateGrasp:
        if (!candidate) throw InvalidRequest("evaluate-grasp requires a candidate");
        if (query_object.empty()) throw InvalidRequest("evaluate-grasp requires the intended object");
        break;
      case RequestKind::DetectObject:
        if (query_object.empty()) throw InvalidRequest("detect-object requires a query object");
        break;
      case RequestKind::CheckGoal:
        if (instruction.empty()) throw InvalidRequest("check-goal requires an instruction");
        break;
    }
  }
};

inline nlohmann::json request_to_json(const ObserverRequest& r) {
  nlohmann::json j{{"kind", to_string(r.kind)}, {"observation", sim::observation_to_json(r.observation)}};
  if (!r.instruction.empty()) j["instruction"] = r.instruction;
  if (r.domain_text) j["pddl_context"] = {{"domain", *r.domain_text}};
  if (r.conditions) j["conditions"] = pddl::to_string(*r.conditions);
  if (!r.action.empty()) j["action"] = r.action;
  if (!r.phase.empty()) j["phase"] = r.phase;
  if (r.candidate) j["candidate"] = grasp::candidate_to_json(*r.candidate);
  if (!r.query_object.empty()) j["query_object"] = r.query_object;
  return j;
}

inline ObserverRequest request_from_json(const nlohmann::json& j) {
  ObserverRequest r;
  const auto kind = kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw InvalidRequest("unknown request kind " + j.at("kind").dump());
  r.kind = *kind;
  r.observation = sim::observation_from_json(j.at("observation"));
  r.instruction = j.value("instruction", "");
  if (j.contains("pddl_context")) r.domain_text = j["pddl_context"].at("domain").get<std::string>();
  if (j.contains("conditions")) r.conditions = pddl::parse_formula(j["conditions"].get<std::string>());
  r.action = j.value("action", "");
  r.phase = j.value("phase", "");
  if (j.contains("candidate")) r.candidate = grasp::candidate_from_json(j["candidate"]);
  r.query_object = j.value("query_object", "");
  r.validate();
  return r;
}

// ---- verdicts ---------------------------------------------------------------

struct IdentifiedObject {
  std::string name, type, description;
  bool operator==(const IdentifiedObject&) const = default;
};

struct ParseTaskVerdict {
  std::vector<IdentifiedObject> objects_identified;
  std::string reasoning;
  std::string updated_domain;
  std::string problem_pddl;
  bool operator==(const ParseTaskVerdict&) const = default;
};

struct ConditionAnalysis {
  std::string condition;
  bool satisfied = false;
  std::string observation;
  bool operator==(const ConditionAnalysis&) const = default;
};

struct CheckConditionsVerdict {
  std::vector<ConditionAnalysis> conditions_analysis;
  bool success = false;
  std::string reasoning;
  std::vector<std::string> failed_conditions;
  bool operator==(const CheckConditionsVerdict&) const = default;
};

struct EvaluateGraspVerdict {
  bool accept = false;
  std::string reasoning;
  bool operator==(const EvaluateGraspVerdict&) const = default;
};

struct DetectObjectVerdict {
  bool found = false;
  Vec2 point;
  std::array<double, 4> bbox{};  // x_min, y_min, x_max, y_max as on the wire
  std::string reasoning;

  Box box() const { return from_corners(bbox[0], bbox[1], bbox[2], bbox[3]); }
  void set_box(const Box& b) { bbox = {b.min_x(), b.min_y(), b.max_x(), b.max_y()}; }
  bool operator==(const DetectObjectVerdict&) const = default;
};

struct CheckGoalVerdict {
  bool satisfied = false;
  std::string reasoning;
  bool operator==(const CheckGoalVerdict&) const = default;
};

struct Cost {
  double latency_ms = 0.0;
  std::size_t tokens = 0;
};

using VerdictBody =
    std::variant<ParseTaskVerdict, CheckConditionsVerdict, EvaluateGraspVerdict, DetectObjectVerdict, CheckGoalVerdict>;

struct ObserverVerdict {
  VerdictBody body;
  Cost cost;

  RequestKind kind() const { return static_cast<RequestKind>(body.index()); }
  template <typename T>
  const T& as() const {
    return std::get<T>(body);
  }
};

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const std::string& name, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path.empty() ? "<root>" : path, "expected an object");
  auto it = j.find(name);
  if (it == j.end()) throw SchemaError(path.empty() ? name : path + "." + name, "missing");
  return *it;
}

inline std::string str_field(const nlohmann::json& j, const std::string& name, const std::string& path = "") {
  const auto& v = field(j, name, path);
  if (!v.is_string()) throw SchemaError(path.empty() ? name : path + "." + name, "expected a string");
  return v.get<std::string>();
}

inline bool bool_field(const nlohmann::json& j, const std::string& name, const std::string& path = "") {
  const auto& v = field(j, name, path);
  if (!v.is_boolean()) throw SchemaError(path.empty() ? name : path + "." + name, "expected a boolean");
  return v.get<bool>();
}

inline std::vector<double> numbers_field(const nlohmann::json& j, const std::string& name, std::size_t n) {
  const auto& v = field(j, name, "");
  if (!v.is_array() || v.size() != n) throw SchemaError(name, "expected " + std::to_string(n) + " numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw SchemaError(name, "expected numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline const nlohmann::json& array_field(const nlohmann::json& j, const std::string& name) {
  const auto& v = field(j, name, "");
  if (!v.is_array()) throw SchemaError(name, "expected an array");
  return v;
}

}  // namespace detail

inline nlohmann::json verdict_to_json(const ObserverVerdict& v) {
  return std::visit(
      [](const auto& b) -> nlohmann::json {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ParseTaskVerdict>) {
          nlohmann::json objs = nlohmann::json::array();
          for (const auto& o : b.objects_identified)
            objs.push_back({{"name", o.name}, {"type", o.type}, {"description", o.description}});
          return {{"objects_identified", objs},
                  {"reasoning", b.reasoning},
                  {"updated_domain", b.updated_domain},
                  {"problem_pddl", b.problem_pddl}};
        } else if constexpr (std::is_same_v<T, CheckConditionsVerdict>) {
          nlohmann::json ca = nlohmann::json::array();
          for (const auto& c : b.conditions_analysis)
            ca.push_back({{"condition", c.condition}, {"satisfied", c.satisfied}, {"observation", c.observation}});
          return {{"conditions_analysis", ca},
                  {"success", b.success},
                  {"reasoning", b.reasoning},
                  {"failed_conditions", b.failed_conditions}};
        } else if constexpr (std::is_same_v<T, EvaluateGraspVerdict>) {
          return {{"decision", b.accept ? "ACCEPT" : "REJECT"}, {"reasoning", b.reasoning}};
        } else if constexpr (std::is_same_v<T, DetectObjectVerdict>) {
          return {{"found", b.found},
                  {"point", {b.point.x, b.point.y}},
                  {"bbox", b.bbox},
                  {"reasoning", b.reasoning}};
        } else {
          return {{"satisfied", b.satisfied}, {"reasoning", b.reasoning}};
        }
      },
      v.body);
}

// Validates a reply body for `kind`. Unknown fields are ignored.
inline ObserverVerdict verdict_from_json(RequestKind kind, const nlohmann::json& j) {
  using namespace detail;
  if (!j.is_object()) throw SchemaError("<root>", "expected an object");
  ObserverVerdict v;
  switch (kind) {
    case RequestKind::ParseTask: {
      ParseTaskVerdict b;
      const auto& objs = array_field(j, "objects_identified");
      for (std::size_t i = 0; i < objs.size(); ++i) {
        const std::string path = "objects_identified[" + std::to_string(i) + "]";
        b.objects_identified.push_back(
            {str_field(objs[i], "name", path), str_field(objs[i], "type", path), str_field(objs[i], "description", path)});
      }
      b.reasoning = str_field(j, "reasoning");
      b.updated_domain = str_field(j, "updated_domain");
      b.problem_pddl = str_field(j, "problem_pddl");
      v.body = b;
      break;
    }
    case RequestKind::CheckConditions: {
      CheckConditionsVerdict b;
      const auto& ca = array_field(j, "conditions_analysis");
      for (std::size_t i = 0; i < ca.size(); ++i) {
        const std::string path = "conditions_analysis[" + std::to_string(i) + "]";
        b.conditions_analysis.push_back({str_field(ca[i], "condition", path), bool_field(ca[i], "satisfied", path),
                                         str_field(ca[i], "observation", path)});
      }
      b.success = bool_field(j, "success");
      b.reasoning = str_field(j, "reasoning");
      for (const auto& f : array_field(j, "failed_conditions")) {
        if (!f.is_string()) throw SchemaError("failed_conditions", "expected strings");
        b.failed_conditions.push_back(f.get<std::string>());
      }
      if (b.success != b.failed_conditions.empty())
        throw SchemaError("failed_conditions", "must be empty exactly when success is true");
      v.body = b;
      break;
    }
    case RequestKind::EvaluateGrasp: {
      EvaluateGraspVerdict b;
      const auto d = str_field(j, "decision");
      if (d != "ACCEPT" && d != "REJECT") throw SchemaError("decision", "expected ACCEPT or REJECT");
      b.accept = d == "ACCEPT";
      b.reasoning = str_field(j, "reasoning");
      v.body = b;
      break;
    }
    case RequestKind::DetectObject: {
      DetectObjectVerdict b;
      b.found = bool_field(j, "found");
      if (b.found) {
        const auto p = numbers_field(j, "point", 2);
        const auto bb = numbers_field(j, "bbox", 4);
        if (bb[2] <= bb[0] || bb[3] <= bb[1]) throw SchemaError("bbox", "expected [x_min, y_min, x_max, y_max]");
        b.point = {p[0], p[1]};
        b.bbox = {bb[0], bb[1], bb[2], bb[3]};
      }
      b.reasoning = j.contains("reasoning") && j["reasoning"].is_string() ? j["reasoning"].get<std::string>() : "";
      v.body = b;
      break;
    }
    case RequestKind::CheckGoal: {
      CheckGoalVerdict b;
      b.satisfied = bool_field(j, "satisfied");
      b.reasoning = str_field(j, "reasoning");
      v.body = b;
      break;
    }
  }
  if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
    if (auto t = u->find("total_tokens"); t != u->end() && t->is_number_unsigned())
      v.cost.tokens = t->get<std::size_t>();
  }
  return v;
}

class Observer {
 public:
  virtual ~Observer() = default;
  virtual ObserverVerdict query(const ObserverRequest& req) = 0;
  virtual std::string name() const = 0;
};

}  // namespace deskagent::obs
