#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "divasm/cfg.hpp"

namespace divasm {

struct TaintOptions {
  // callees whose return value carries external input
  std::vector<std::string> input_callees{"read", "recv", "fgets", "getenv"};
  // callees worth diversifying when they process external data
  std::vector<std::string> risky_callees{"strcpy", "strcat", "memcpy",
                                         "sprintf", "gets", "memmove"};
  int depth_limit = 8;
  bool entry_args_tainted = true;  // %rdi/%rsi at the entry function
  // argument registers examined per callee (count of the SysV integer
  // argument sequence); callees not listed use default_arg_count
  std::map<std::string, int> arg_counts;
  int default_arg_count = 2;
};

// number of argument registers examined for a callee
int examined_arg_count(const std::string& callee, const TaintOptions& opts);

struct ObservationPoint {
  int block = 0;
  int index = 0;  // instruction index of the direct call
  std::string callee;
  std::vector<Gpr> args;  // argument registers the callee reads
};

// every direct call to a symbol with no definition in the program
std::vector<ObservationPoint> default_observation_points(const Cfg& cfg,
                                                         const TaintOptions& opts);

struct PointResult {
  ObservationPoint point;
  std::map<Gpr, bool> tainted;  // per examined argument register
  std::set<std::string> warnings;
  bool selected = false;

  bool any_tainted() const {
    for (auto& [g, t] : tainted)
      if (t) return true;
    return false;
  }
};

// Forward reaching-definitions taint over the CFG, rooted at `entry`,
// recursing into direct callees (child analyses) up to opts.depth_limit.
// Recursion or depth overflow degrades to a tainted return value with a
// RecursionLimit warning. Register taint is canonicalized to 64-bit parents;
// memory taint is tracked per stack slot and per global symbol.
std::vector<PointResult> analyze_reaching_definitions(
    const Cfg& cfg, const std::string& entry,
    const std::vector<ObservationPoint>& points, const TaintOptions& opts);

// Call-site blocks whose callee is risky and reads at least one tainted
// argument register. Marks `selected` on the results it picks.
std::set<int> select_type_m(std::vector<PointResult>& results,
                            const std::vector<std::string>& risky);

std::string taint_to_json(const std::vector<PointResult>& results);

}  // namespace divasm
