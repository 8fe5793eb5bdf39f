#pragma once

#include <cstdint>
#include <random>
#include <optional>
#include <string>
#include <vector>

#include "divasm/emulator.hpp"
#include "divasm/liveness.hpp"

namespace divasm {

struct TestCase {
  MachineState input;     // full register file + flags + footprint bytes
  MachineState expected;  // the original block's final state on this input
  std::vector<std::pair<int, std::optional<bool>>> expected_path;
  std::string origin;     // "random" | "fuzz:<bucket>" | "manual"
};

// Preamble that redirects the canonical fuzz-input registers
// (%rdi,%rsi,%rdx,%rcx,%r8,%r9 in order) into the block's read locations,
// plus the exit map: each control-flow outcome gets a distinct abort-site id.
struct Harness {
  std::vector<Instruction> preamble;
  std::vector<Instruction> body;       // the block's instructions, terminator last
  std::vector<Gpr> inputs_used;        // canonical input registers consumed
  int num_sites = 1;                   // CondJmp: 2 (taken=1, fallthrough=2)
  std::vector<std::string> warnings;   // MultiSlotUnsupported, ...
};

// Thrown for blocks whose inputs cannot be declared (in-block computed
// pointers) — such blocks are skipped by the pipeline with a warning.
struct UndeclarableFootprint : std::runtime_error {
  explicit UndeclarableFootprint(const std::string& what_)
      : std::runtime_error(what_) {}
};

Harness build_harness(const BasicBlock& b, const LiveSet& live);

// Pinned input state: structural pointer registers (memory bases) get fixed
// region addresses, %rsp sits in the stack region, every other register and
// the five flags are drawn from the rng, and the footprint covers exactly the
// block's declared slots.
MachineState make_input_state(const BasicBlock& b, const LiveSet& live,
                              std::mt19937_64& rng,
                              const ProgramImage* image = nullptr);

// n uniformly random cases; expected outputs recomputed on the original
// block. Deterministic for a fixed seed. Throws std::invalid_argument for
// n < 1 (InvalidCount).
std::vector<TestCase> gen_random_cases(const BasicBlock& b, const LiveSet& live,
                                       int n, uint64_t seed,
                                       const ProgramImage* image = nullptr);

struct FuzzResult {
  std::vector<TestCase> cases;  // >= 1 representative per discovered bucket
  int buckets = 0;
  bool coverage_incomplete = false;  // conditional block with one site unseen
  std::vector<std::string> warnings;
};

// Coverage-guided mutational generation: boundary-value seed corpus, bit
// flips / arithmetic steps / byte splices / flag toggles, abort-site
// bucketing of harness executions inside the micro-emulator.
FuzzResult gen_fuzz_cases(const BasicBlock& b, const LiveSet& live, int budget,
                          uint64_t seed, const ProgramImage* image = nullptr);

struct SuiteConfig {
  int suite_size = 32;
  double fuzz_fraction = 0.25;
  int fuzz_budget = 50000;
  uint64_t seed = 1;
};

struct Suite {
  std::vector<TestCase> cases;  // fuzz representatives first, then random
  bool coverage_incomplete = false;
  std::vector<std::string> warnings;
};

Suite make_suite(const BasicBlock& b, const LiveSet& live, const SuiteConfig& cfg,
                 const ProgramImage* image = nullptr);

// Replays every case through the original block and confirms the stored
// expected projection; returns the number of mismatches (0 = replayable).
int verify_suite(const BasicBlock& b, const std::vector<TestCase>& cases,
                 const ProgramImage* image = nullptr);

std::string suite_to_json(const std::string& block_label, const Suite& suite);
Suite suite_from_json(const std::string& text);

}  // namespace divasm
