#pragma once

#include <optional>
#include <string>
#include <vector>

#include "divasm/asm_core.hpp"

namespace divasm {

struct Terminator {
  enum class Kind : uint8_t { Ret, Jmp, CondJmp, Call, FallThrough };
  Kind kind = Kind::FallThrough;
  Cond cc = Cond::E;        // CondJmp
  std::string target;       // Jmp/CondJmp taken-target/Call callee symbol
  bool indirect = false;    // jmp/call through register or memory
};

struct BasicBlock {
  int id = 0;
  std::string label;                  // leading label, or synthesized "bb<id>"
  bool labeled = false;               // true when the head carries a real label
  std::vector<Instruction> insns;     // non-empty; terminator instruction last
  Terminator term;
  bool reachable = false;
  bool diversifiable = true;
  // line span in the source Program covering exactly this block's
  // instructions (labels excluded); used for splicing
  size_t first_line = 0, last_line = 0;

  bool has_terminator_insn() const { return term.kind != Terminator::Kind::FallThrough; }
  // body = instructions minus the terminator instruction
  std::vector<Instruction> body() const {
    if (!has_terminator_insn()) return insns;
    return {insns.begin(), insns.end() - 1};
  }
};

enum class EdgeKind : uint8_t { Taken, FallThrough, Jump, Call, CallFallThrough };
const char* edge_kind_name(EdgeKind k);

struct Cfg {
  struct Edge {
    int from = 0;
    int to = -1;                // -1: external
    EdgeKind kind = EdgeKind::Jump;
    std::string external_sym;   // set when to == -1
  };

  std::vector<BasicBlock> blocks;
  std::vector<Edge> edges;
  int entry = 0;
  // every code label -> (block id, instruction index inside the block)
  std::map<std::string, std::pair<int, int>> label_map;

  const BasicBlock* block_by_label(const std::string& l) const;
};

struct UnknownEntry : std::runtime_error {
  explicit UnknownEntry(const std::string& sym)
      : std::runtime_error("unknown entry symbol: " + sym) {}
};

// Partition a Program into maximal basic blocks and connect them. Splits at
// jump/call targets and after control transfers; calls end blocks with a
// fallthrough edge; opaque lines break blocks.
Cfg build_cfg(const Program& p, const std::string& entry);

struct BlockQuery {
  const BasicBlock* block = nullptr;
  int insn_index = 0;
  bool interior = false;  // query hit a label inside the block, not its head
};

// Find the block whose label matches the query or whose span contains the
// queried interior label. nullopt when the symbol is external/unknown.
std::optional<BlockQuery> block_at(const Cfg& cfg, const std::string& label);

// {nodes:[{id,label,len,bytes}], edges:[{from,to,kind}]}
std::string cfg_to_json(const Cfg& cfg);

}  // namespace divasm
