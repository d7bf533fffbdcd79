#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "deskagent/pddl/ast.hpp"
#include "deskagent/pddl/parser.hpp"
#include "deskagent/sim/world.hpp"

#ifndef DESKAGENT_CORPUS_DIR
#define DESKAGENT_CORPUS_DIR "corpus"
#endif

namespace deskagent::obs {

class UnknownTask : public std::invalid_argument {
 public:
  explicit UnknownTask(const std::string& what) : std::invalid_argument("unknown task: " + what) {}
};

using Catalog = std::map<std::string, sim::Category>;
using GoalBuilder = std::function<pddl::Conjunction(const Catalog&)>;

struct TaskSpec {
  std::string id;
  std::string domain;         // corpus/pddl/<domain>-domain.pddl
  std::string default_scene;  // corpus/scenes/<scene>.json
  std::string text;
  GoalBuilder goal;
};

namespace detail {

inline void require_objects(const Catalog& c, const std::string& task, std::initializer_list<const char*> names) {
  for (const char* n : names)
    if (!c.count(n)) throw UnknownTask(task + " needs object '" + n + "' which the scene lacks");
}

inline pddl::Literal pos(std::string p, std::vector<std::string> args) { return {{std::move(p), std::move(args)}, false}; }
inline pddl::Literal neg(std::string p, std::vector<std::string> args) { return {{std::move(p), std::move(args)}, true}; }

inline GoalBuilder stack_goal(std::string id, std::vector<std::string> bottom_up) {
  return [id, bottom_up](const Catalog& c) {
    pddl::Conjunction g;
    std::string below = "pink-plate";
    require_objects(c, id, {"pink-plate"});
    for (const auto& cube : bottom_up) {
      if (!c.count(cube)) throw UnknownTask(id + " needs object '" + cube + "' which the scene lacks");
      g.push_back(pos("on-top-of", {cube, below}));
      below = cube;
    }
    return g;
  };
}

inline std::string normalize(const std::string& s) {
  std::string out;
  bool space = false;
  for (unsigned char ch : s) {
    if (std::isspace(ch)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(ch));
  }
  return out;
}

}  // namespace detail

inline const std::vector<TaskSpec>& task_registry() {
  using detail::neg;
  using detail::pos;
  static const std::vector<TaskSpec> tasks = {
      {"sorting", "sorting", "sorting-3",
       "Sort the fruits into the white bin and all other objects into the blue bin.",
       [](const Catalog& c) {
         detail::require_objects(c, "sorting", {"white-bin", "blue-bin"});
         pddl::Conjunction g;
         for (const auto& [n, cat] : c)
           if (sim::default_graspable(cat))
             g.push_back(pos("in-container", {n, cat == sim::Category::Fruit ? "white-bin" : "blue-bin"}));
         return g;
       }},
      {"stacking-3", "stacking", "stacking-3",
       "Stack the cubes on the pink plate from bottom to top: Green, Orange, and Blue.",
       detail::stack_goal("stacking-3", {"green-cube", "orange-cube", "blue-cube"})},
      {"stacking-4", "stacking", "stacking-4",
       "Stack the cubes on the pink plate from bottom to top: Green, Yellow, Orange, and Blue.",
       detail::stack_goal("stacking-4", {"green-cube", "yellow-cube", "orange-cube", "blue-cube"})},
      {"stacking-4-alt", "stacking", "stacking-4",
       "Stack the cubes on the pink plate from bottom to top: Orange Blue Yellow and Green cubes",
       detail::stack_goal("stacking-4-alt", {"orange-cube", "blue-cube", "yellow-cube", "green-cube"})},
      {"kitchen-a", "kitchen", "kitchen-a", "Put the spice bottle into the top drawer and close it.",
       [](const Catalog& c) {
         detail::require_objects(c, "kitchen-a", {"spice-bottle", "top-drawer"});
         return pddl::Conjunction{pos("in-container", {"spice-bottle", "top-drawer"}),
                                  neg("drawer-open", {"top-drawer"})};
       }},
      {"kitchen-b", "kitchen", "kitchen-b",
       "Place the blue snack pack in the top drawer, then move the spice bottle from the drawer to the table, and "
       "finally close the drawer.",
       [](const Catalog& c) {
         detail::require_objects(c, "kitchen-b", {"blue-snack-pack", "spice-bottle", "top-drawer"});
         return pddl::Conjunction{pos("in-container", {"blue-snack-pack", "top-drawer"}),
                                  pos("on-table", {"spice-bottle"}), neg("drawer-open", {"top-drawer"})};
       }},
      {"kitchen-c", "kitchen", "kitchen-c",
       "A chicken leg is in the pot. Take out the chicken leg, place it in the bowl, then put the spice bottle back "
       "into the top drawer and close the drawer.",
       [](const Catalog& c) {
         detail::require_objects(c, "kitchen-c", {"chicken-leg", "bowl", "spice-bottle", "top-drawer"});
         return pddl::Conjunction{pos("in-container", {"chicken-leg", "bowl"}),
                                  pos("in-container", {"spice-bottle", "top-drawer"}),
                                  neg("drawer-open", {"top-drawer"})};
       }},
  };
  return tasks;
}

// Accepts a task id or its instruction text (case and spacing insensitive).
inline const TaskSpec& find_task(const std::string& instruction) {
  const auto key = detail::normalize(instruction);
  for (const auto& t : task_registry())
    if (key == t.id || key == detail::normalize(t.text)) return t;
  throw UnknownTask("'" + instruction + "'");
}

// ---- corpus access ----------------------------------------------------------

inline std::string corpus_dir() {
  if (const char* env = std::getenv("DESKAGENT_CORPUS")) return env;
  return DESKAGENT_CORPUS_DIR;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string domain_path(const std::string& domain) { return corpus_dir() + "/pddl/" + domain + "-domain.pddl"; }
inline std::string scene_path(const std::string& scene) { return corpus_dir() + "/scenes/" + scene + ".json"; }

inline sim::Scene load_scene(const std::string& path) {
  return sim::scene_from_json(nlohmann::json::parse(read_file(path)));
}

// ---- problem construction -----------------------------------------------------

class GoalOutsideScene : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Objects are typed by category; relations keep only atoms the domain can express.
inline pddl::ProblemDef build_problem(const pddl::DomainDef& domain, const std::string& name, const Catalog& catalog,
                                      const std::vector<pddl::Atom>& relations, const pddl::Conjunction& goal) {
  pddl::ProblemDef p;
  p.name = name;
  p.domain_name = domain.name;
  for (const auto& [n, cat] : catalog) {
    const std::string type = sim::to_string(cat);
    if (domain.has_type(type)) p.objects.push_back({n, type});
  }
  auto known = [&](const pddl::Atom& a) {
    return domain.find_predicate(a.predicate) &&
           std::all_of(a.args.begin(), a.args.end(), [&](const std::string& x) { return p.find_object(x) != nullptr; });
  };
  for (const auto& a : relations)
    if (known(a)) p.init.push_back(a);
  p.init = planner::make_atom_set(std::move(p.init));
  for (const auto& l : goal) {
    if (!known(l.atom)) throw GoalOutsideScene("goal atom " + l.str() + " is not expressible in domain " + domain.name);
    p.goal.push_back(l);
  }
  return p;
}

inline pddl::Conjunction true_goal(const std::string& instruction, const Catalog& catalog) {
  return find_task(instruction).goal(catalog);
}

}  // namespace deskagent::obs
