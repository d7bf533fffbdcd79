#pragma once

#include <string>
#include <vector>

#include "deskagent/pddl/ast.hpp"

namespace deskagent::pddl {

namespace detail {

// Groups consecutive entries sharing a type: `a b - t c - u`.
inline std::string typed_list(const std::vector<TypedName>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += items[i].name;
    if (i + 1 == items.size() || items[i + 1].type != items[i].type) out += " - " + items[i].type;
  }
  return out;
}

}  // namespace detail

// Canonical text for a domain. parse_domain(emit(d)) == d.
inline std::string emit(const DomainDef& d) {
  std::string out = "(define (domain " + d.name + ")";
  if (!d.requirements.empty()) {
    out += "\n  (:requirements";
    for (const auto& r : d.requirements) out += " " + r;
    out += ")";
  }
  if (!d.types.empty()) {
    std::vector<TypedName> as_list;
    for (const auto& t : d.types) as_list.push_back({t.name, t.parent});
    out += "\n  (:types " + detail::typed_list(as_list) + ")";
  }
  if (!d.predicates.empty()) {
    out += "\n  (:predicates";
    for (const auto& p : d.predicates) {
      out += "\n    (" + p.name;
      if (!p.params.empty()) out += " " + detail::typed_list(p.params);
      out += ")";
    }
    out += ")";
  }
  for (const auto& a : d.actions) {
    out += "\n  (:action " + a.name;
    out += "\n    :parameters (" + detail::typed_list(a.params) + ")";
    out += "\n    :precondition " + to_string(a.precondition);
    out += "\n    :effect " + to_string(a.effect) + ")";
  }
  return out + ")\n";
}

// Canonical text for a problem; init atoms are written in sorted order.
inline std::string emit(const ProblemDef& p) {
  std::string out = "(define (problem " + p.name + ")\n  (:domain " + p.domain_name + ")";
  if (!p.objects.empty()) out += "\n  (:objects " + detail::typed_list(p.objects) + ")";
  std::vector<Atom> init = p.init;
  std::sort(init.begin(), init.end());
  out += "\n  (:init";
  for (const auto& a : init) out += "\n    " + a.str();
  out += ")";
  out += "\n  (:goal " + to_string(p.goal) + "))\n";
  return out;
}

}  // namespace deskagent::pddl
