#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "divasm/cfg.hpp"

namespace divasm {

// Flags a conditional jump reads.
uint8_t cond_flag_uses(Cond c);

// Symbolic memory slot: base/index are register *entry values*; disp folds in
// the tracked rsp delta for stack slots.
struct MemAccess {
  std::optional<Gpr> base;
  std::optional<Gpr> index;
  uint8_t scale = 1;
  int64_t disp = 0;
  uint8_t bytes = 8;
  bool is_read = false;
  bool is_write = false;

  std::string key() const;

  bool same_slot(const MemAccess& o) const {
    return base == o.base && index == o.index && scale == o.scale &&
           disp == o.disp && bytes == o.bytes;
  }
};

struct LiveSet {
  std::set<Gpr> read_regs;
  std::set<Gpr> written_regs;
  uint8_t read_flags = 0;     // FlagBit mask
  uint8_t written_flags = 0;  // union of all flag definitions
  std::vector<MemAccess> mem;
  bool may_alias = false;
  // a memory operand's base or index is defined inside the block, so its
  // location cannot be declared symbolically; testgen/synthesis skip the block
  bool indirect_pointer = false;

  bool reads_mem() const {
    for (auto& m : mem)
      if (m.is_read) return true;
    return false;
  }
};

// Per-instruction def/use tables composed in block order. Covers the
// terminator's flag reads (a conditional jump consumes its condition flags).
LiveSet compute_live_sets(const BasicBlock& b);

std::string liveset_to_json(const LiveSet& ls);

}  // namespace divasm
