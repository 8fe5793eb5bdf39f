#pragma once

#include <set>
#include <string>
#include <vector>

#include "divasm/diversify.hpp"
#include "divasm/taint.hpp"

namespace divasm {

enum class Stage { Scan, Select, Liveness, Testgen, Synth, Diversify };

struct PipelineConfig {
  std::string input_path;
  std::string entry = "main";
  std::string out_dir = "out";
  uint64_t seed = 1;

  // selection
  std::set<GadgetClass::Kind> type_r_kinds{GadgetClass::Kind::ChangeRegister,
                                           GadgetClass::Kind::ChangeMemory,
                                           GadgetClass::Kind::Call};
  std::set<Gpr> type_r_registers;  // empty = all targets
  bool include_type_m = true;
  ScanOptions scan;
  TaintOptions taint;

  // synthesis
  SuiteConfig suite;
  SynthesisConfig synth;

  // emission
  int n_variants = 2;
  DiversityPlan::Strategy strategy = DiversityPlan::Strategy::RoundRobin;

  bool dry_run = false;              // equivalent to stop_after = Select
  Stage stop_after = Stage::Diversify;  // subcommands stop at their stage
  std::string payload_path;             // optional payload-check at the end
};

struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_, const std::string& what_)
      : std::runtime_error("[" + stage_ + "] " + what_), stage(std::move(stage_)) {}
};

struct PipelineResult {
  int exit_code = 0;
  std::set<int> type_r;
  std::set<int> type_m;
  std::set<int> selected;      // diversifiable selection
  int blocks_with_rewrites = 0;
  int blocks_not_found = 0;    // selected but no validated rewrite
  std::vector<std::string> skipped;  // selected but non-diversifiable, with reason
  std::vector<std::string> warnings;
  std::vector<std::string> artifacts;  // files written, relative to out_dir
  bool payload_baseline_feasible = false;
  int payload_feasible_variants = 0;
};

// scan -> select (Type R union Type M) -> liveness -> testgen -> synthesis ->
// splice -> reports; every intermediate artifact lands as JSON under out_dir.
// Fatal errors (unreadable/unparseable input) throw StageError; an empty
// selection or partial synthesis is a warning, not a failure.
PipelineResult run_pipeline(const PipelineConfig& cfg);

// Re-checks every emitted variant against fresh seeded suites; returns the
// number of mismatching (variant, block) pairs and writes verify.json.
int verify_variants(const PipelineConfig& cfg);

// Runs the payload against the original and every emitted variant; writes
// payload_verdict.json.
struct PayloadSummary {
  bool baseline_feasible = false;
  int feasible_variants = 0;
  int total_variants = 0;
};
PayloadSummary check_payload(const PipelineConfig& cfg);

// shared helpers
std::string read_text_file(const std::string& path);  // throws StageError("io")
std::string sanitize_label(const std::string& label);
uint64_t derive_seed(uint64_t master, const std::string& tag);

}  // namespace divasm
