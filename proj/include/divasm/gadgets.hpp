#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "divasm/cfg.hpp"

namespace divasm {

struct GadgetClass {
  enum class Kind : uint8_t { ChangeRegister, ChangeMemory, Call };
  Kind kind = Kind::ChangeMemory;
  Gpr target = Gpr::Rax;  // ChangeRegister: canonical 64-bit GPR
  std::string callee;     // Call

  static GadgetClass change_register(Gpr g) {
    return {Kind::ChangeRegister, g, ""};
  }
  static GadgetClass change_memory() { return {Kind::ChangeMemory, Gpr::Rax, ""}; }
  static GadgetClass call(std::string sym) {
    return {Kind::Call, Gpr::Rax, std::move(sym)};
  }

  bool operator==(const GadgetClass&) const = default;
  auto operator<=>(const GadgetClass&) const = default;
};

std::string gadget_class_name(GadgetClass::Kind k);

struct GadgetRecord {
  int block = 0;
  int index = 0;  // first instruction of the sequence within the block
  GadgetClass cls;
  std::vector<Instruction> sequence;  // ends in a control transfer
  std::string source_scanner;         // "suffix-scan" | "call-edge-scan"
};

struct ScanOptions {
  int max_len = 5;
  std::vector<std::string> risky_callees{"system", "execve", "execlp", "popen",
                                         "mprotect"};
};

// Classes carried by one instruction sequence ending in ret/jmp/call:
//   ChangeRegister{r}: r is loaded from the stack (pop) or from an
//   immediate/memory and no later instruction overwrites r;
//   ChangeMemory: some instruction stores a register into an explicit memory
//   operand;
//   Call: the final instruction is a direct call.
std::set<GadgetClass> classify_sequence(std::span<const Instruction> seq);

// Suffix scan (ChangeRegister/ChangeMemory, every suffix up to max_len) plus
// one Call record per direct-call edge whose callee is on the risky list.
// Records sorted by (block, index, class).
std::vector<GadgetRecord> scan_gadgets(const Cfg& cfg, const ScanOptions& opts = {});

struct TypeRFilter {
  std::set<GadgetClass::Kind> kinds;  // empty = any
  std::set<Gpr> registers;            // ChangeRegister targets; empty = any
};

// Unique block ids containing at least one record passing the filter.
std::set<int> select_type_r(const std::vector<GadgetRecord>& records,
                            const TypeRFilter& filter);

// Table-1/2-shaped census: per-class, per-target-register unique block
// counts, with same-block overlap counts labeled as such.
std::string census_to_json(const Cfg& cfg, const std::vector<GadgetRecord>& records);

std::string records_to_json(const std::vector<GadgetRecord>& records);

}  // namespace divasm
