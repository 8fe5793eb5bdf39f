#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "divasm/testgen.hpp"

namespace divasm {

struct NonDiversifiable : std::runtime_error {
  explicit NonDiversifiable(const std::string& why) : std::runtime_error(why) {}
};

struct SynthesisUnit {
  BasicBlock block;                 // the original block, verbatim
  std::vector<Instruction> body;    // terminator replaced by ret; ends with ret
  Instruction original_terminator;  // restored onto every returned rewrite
  bool check_flags = false;         // true iff the block ends in a conditional jump
  LiveSet live;
  int size_budget = 0;              // encoded_length of the original block
};

// Replace the terminator with ret and record what must be restored. Throws
// NonDiversifiable for indirect terminators, label-split (fallthrough)
// fragments, and blocks whose inputs cannot be declared.
SynthesisUnit to_synthesis_unit(const BasicBlock& b, const LiveSet& live);

struct SynthesisConfig {
  int n_rewrites = 1;
  long iterations = 1000000;  // per restart
  int restarts = 8;
  double beta = 1.0;
  // proposal weights: opcode, operand, swap, insert, delete
  std::array<int, 5> move_weights{1, 1, 1, 1, 1};
  uint64_t flag_weight = 32;
  uint64_t fault_penalty = 4096;
  uint64_t size_penalty_weight = 1;
  int holdout_factor = 2;  // held-out suite size = factor x search suite
  uint64_t seed = 1;
};

struct CostRecord {
  uint64_t correctness = 0;
  int size_excess = 0;
  uint64_t total = 0;
};

// Correctness distance summed over the suite (fault_penalty per faulting
// case) plus the weighted size excess over the unit's budget. bail_above
// caps the scan once the accumulated total exceeds it.
CostRecord cost(const std::vector<Instruction>& candidate_body,
                const SynthesisUnit& unit, const std::vector<TestCase>& suite,
                const SynthesisConfig& cfg, const ProgramImage* image = nullptr,
                uint64_t bail_above = UINT64_MAX);

struct RewriteCandidate {
  std::vector<Instruction> body;  // ret-terminated unit body
  CostRecord cost;
  bool validated = false;
  std::string canonical;  // canonical text of the unit body
};

std::string canonical_text(const std::vector<Instruction>& body);

// Input entropy of the unit in bits: 64 per fuzzable read register, 8 per
// read memory byte, 5 when flags enter the comparison. Pointer registers are
// pinned by testgen and carry no entropy.
int input_entropy_bits(const SynthesisUnit& unit);

// Exhaustive equivalence check over the enumerated input domain; only
// meaningful when input_entropy_bits(unit) <= 16.
bool exhaustive_check(const SynthesisUnit& unit,
                      const std::vector<Instruction>& candidate_body,
                      const SynthesisConfig& cfg,
                      const ProgramImage* image = nullptr);

// Metropolis search for one validated rewrite: zero correctness on the
// search suite, zero size excess, canonical form outside `forbidden`,
// revalidated on a fresh held-out suite (and exhaustively when the input
// domain is small). nullopt after restarts x iterations without success.
std::optional<RewriteCandidate> mcmc_search(const SynthesisUnit& unit,
                                            const std::vector<TestCase>& suite,
                                            const SynthesisConfig& cfg,
                                            const std::set<std::string>& forbidden,
                                            const ProgramImage* image = nullptr);

struct NRewriteResult {
  std::vector<RewriteCandidate> rewrites;  // terminators restored, pairwise distinct
  int requested = 0;
  bool partial() const {
    return static_cast<int>(rewrites.size()) < requested;
  }
};

// N distinct validated rewrites with the original terminator restored
// verbatim. Accumulates canonical forms into the forbidden set; returns a
// PartialResult (fewer than N) rather than fabricating duplicates.
NRewriteResult generate_n_rewrites(const BasicBlock& b, const LiveSet& live,
                                   const std::vector<TestCase>& suite,
                                   const SynthesisConfig& cfg,
                                   const ProgramImage* image = nullptr);

}  // namespace divasm
