#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "divasm/gadgets.hpp"
#include "divasm/synth.hpp"

namespace divasm {

struct DiversityPlan {
  // block id -> validated rewrites with restored terminators, ordered so
  // gadget-eliminating candidates come first
  std::map<int, std::vector<RewriteCandidate>> selections;
  enum class Strategy { RoundRobin, SeededRandom } strategy = Strategy::RoundRobin;
  uint64_t seed = 0;

  int choice_for(int block_id, int variant, int available) const;
};

struct SpliceConflict : std::runtime_error {
  explicit SpliceConflict(const std::string& why) : std::runtime_error(why) {}
};

struct SpliceResult {
  Program program;
  std::vector<std::string> dropped_labels;  // interior labels of replaced blocks
};

// Replace each selected block's instruction run with its chosen rewrite.
// Labels, directives, and all unselected content pass through untouched;
// interior labels of replaced blocks are dropped and reported.
SpliceResult splice(const Program& p, const Cfg& cfg, const DiversityPlan& plan,
                    int variant);

struct VariantInfo {
  int variant = 0;
  std::string file;
  std::map<std::string, int> choices;  // block label -> rewrite index
  std::string checksum;                // FNV-1a 64 of the file bytes
};

struct EmitResult {
  std::vector<VariantInfo> variants;
  std::vector<std::string> dropped_labels;
  std::vector<std::string> warnings;
  std::string manifest_json;
};

// Write n assembly variants plus a manifest. Every output must satisfy the
// size bound (total encoded length <= original); violating it is a
// SizeRegression logic error, impossible while the synthesizer's bound holds.
EmitResult emit_firmware_rewrites(const Program& p, const Cfg& cfg,
                                  const DiversityPlan& plan, int n,
                                  const std::string& out_dir, uint64_t seed);

uint64_t fnv1a64(const std::string& bytes);

// ---------------------------------------------------------------------------
// Gadget survival
// ---------------------------------------------------------------------------

// byte offset of instruction `index` inside the block, per the length model
int block_byte_offset(const BasicBlock& b, int index);

// True when some suffix of `insns` starting at byte offset `off` (an
// instruction boundary) still classifies with `cls`; off_boundary is set when
// no boundary exists at that offset.
bool gadget_present_at_offset(const std::vector<Instruction>& insns, int off,
                              const GadgetClass& cls, bool* off_boundary = nullptr);

struct SurvivalEntry {
  GadgetRecord record;
  bool survived = false;
};

struct SurvivalReport {
  std::vector<SurvivalEntry> entries;
  int total = 0;
  int survived = 0;
  double elimination_rate() const {
    return total == 0 ? 0.0 : 1.0 - static_cast<double>(survived) / total;
  }
};

// Judged semantically per class at the same block: a gadget survives iff the
// same class (and target register) is still present among the variant
// block's suffixes. Syntax changes that preserve the effect count as
// survived.
SurvivalReport gadget_survival_report(const Cfg& original_cfg,
                                      const Cfg& variant_cfg,
                                      const std::vector<GadgetRecord>& records);

std::string survival_to_json(const SurvivalReport& report, int variant);

// ---------------------------------------------------------------------------
// Payload simulation
// ---------------------------------------------------------------------------

struct PayloadGadget {
  std::string label;  // block label or interior label in the original program
  GadgetClass cls;
};

struct PayloadSpec {
  std::vector<PayloadGadget> gadgets;
  std::string description;
};

PayloadSpec payload_from_json(const std::string& text);
std::string payload_to_json(const PayloadSpec& spec);

struct GadgetVerdict {
  std::string label;
  std::string verdict;  // "held" | "broken" | "misaligned" | "unresolvable"
  bool held() const { return verdict == "held"; }
};

struct PayloadCheckResult {
  bool feasible = false;
  std::optional<int> first_broken;
  std::vector<GadgetVerdict> verdicts;
};

// Locates every referenced gadget in the variant (by surviving label, or by
// the original byte offset inside the replaced block), executes it from a
// sentinel-stacked state in the micro-emulator, and requires the class
// effect to reproduce. The chain is feasible only if every gadget holds.
PayloadCheckResult payload_check(const Cfg& original_cfg, const Program& variant,
                                 const std::string& entry,
                                 const PayloadSpec& payload);

std::string payload_result_to_json(const PayloadCheckResult& r, int variant);

}  // namespace divasm
