#pragma once

#include <cstdint>
#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "divasm/asm_core.hpp"

namespace divasm {

// ---------------------------------------------------------------------------
// Machine state
// ---------------------------------------------------------------------------

enum FlagBit : uint8_t { FlagCF = 1, FlagPF = 2, FlagZF = 4, FlagSF = 8, FlagOF = 16 };
inline constexpr uint8_t kAllFlags = 31;
const char* flag_name(FlagBit f);

struct Footprint {
  // Sorted, non-overlapping half-open [lo, hi) ranges of declared memory.
  std::vector<std::pair<uint64_t, uint64_t>> ranges;

  void add(uint64_t lo, uint64_t hi);
  bool contains(uint64_t addr) const;
};

// Sparse byte store over a small sorted vector: value-semantic and cheap to
// clone, which the synthesizer's inner loop depends on.
class ByteMap {
 public:
  using Entry = std::pair<uint64_t, uint8_t>;

  const uint8_t* find_byte(uint64_t addr) const {
    auto it = lower(addr);
    return it != v_.end() && it->first == addr ? &it->second : nullptr;
  }
  uint8_t& operator[](uint64_t addr) {
    auto it = lower(addr);
    if (it != v_.end() && it->first == addr) return it->second;
    return v_.insert(it, {addr, 0})->second;
  }
  auto begin() const { return v_.begin(); }
  auto end() const { return v_.end(); }
  size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  void clear() { v_.clear(); }

 private:
  std::vector<Entry>::const_iterator lower(uint64_t addr) const {
    return std::lower_bound(v_.begin(), v_.end(), addr,
                            [](const Entry& e, uint64_t a) { return e.first < a; });
  }
  std::vector<Entry>::iterator lower(uint64_t addr) {
    return std::lower_bound(v_.begin(), v_.end(), addr,
                            [](const Entry& e, uint64_t a) { return e.first < a; });
  }
  std::vector<Entry> v_;
};

// Sorted address set with the same cheap-clone property.
class AddrSet {
 public:
  void insert(uint64_t a) {
    auto it = std::lower_bound(v_.begin(), v_.end(), a);
    if (it == v_.end() || *it != a) v_.insert(it, a);
  }
  bool contains(uint64_t a) const {
    return std::binary_search(v_.begin(), v_.end(), a);
  }
  auto begin() const { return v_.begin(); }
  auto end() const { return v_.end(); }
  size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  void clear() { v_.clear(); }

 private:
  std::vector<uint64_t> v_;
};

struct MachineState {
  std::array<uint64_t, 16> gpr{};
  uint8_t flags = 0;  // FlagBit mask
  ByteMap mem;                           // current bytes (test-provided + written)
  AddrSet dirty;                         // addresses written during execution
  std::shared_ptr<const Footprint> fp;   // declared readable/writable memory
  uint64_t stack_lo = 0, stack_hi = 0;

  uint64_t& reg(Gpr g) { return gpr[static_cast<size_t>(g)]; }
  uint64_t reg(Gpr g) const { return gpr[static_cast<size_t>(g)]; }
  bool flag(FlagBit f) const { return flags & f; }
  void set_flag(FlagBit f, bool v) { flags = v ? (flags | f) : (flags & ~f); }
};

// Stack region [0x7fff0000, 0x7fff8000), %rsp centered, footprint = stack.
MachineState make_default_state();

bool eval_cond(Cond c, uint8_t flags);

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct Fault {
  enum class Kind { OutOfFootprint, StackOverflow, DivideByZero, UnsupportedInstruction };
  Kind kind;
  int at = 0;  // instruction index
};
const char* fault_name(Fault::Kind k);

struct ExecResult {
  std::optional<Fault> fault;  // nullopt: Normal
  MachineState state;          // final state (at the faulting point on fault)
  // (instruction index, branch-taken) entries for control transfers reached.
  std::vector<std::pair<int, std::optional<bool>>> path;

  bool normal() const { return !fault.has_value(); }
};

// Lowered view of a Program for execution: every label gets an address.
// Code labels map to code_base + instruction ordinal (one slot per
// instruction); labels with no following instruction are data labels with a
// page-sized region each.
struct ProgramImage {
  std::vector<Instruction> code;              // all instructions, in line order
  std::map<std::string, size_t> code_labels;  // label -> code index
  std::map<std::string, uint64_t> data_addrs; // label -> data address
  uint64_t code_base = 0x00400000;
  uint64_t data_base = 0x00600000;
  uint64_t data_page = 0x1000;
  uint64_t exit_sentinel = 0xD1E0D1E0D1E0D1E0ull;

  uint64_t addr_of_index(size_t i) const { return code_base + i; }
  std::optional<size_t> index_of_addr(uint64_t a) const;
  std::optional<uint64_t> symbol_address(const std::string& s) const;
  // Footprint covering every data label's region.
  void add_data_footprint(Footprint& fp) const;
};

ProgramImage build_image(const Program& p);

// Execute one non-control-transfer instruction in place. The image resolves
// $symbol operands; pass nullptr when the sequence cannot contain them.
std::optional<Fault> step(MachineState& s, const Instruction& i,
                          const ProgramImage* image = nullptr);

// Straight-line execution: steps through the sequence, records the terminator
// (with its branch decision) without executing it. fuel must be >= seq size.
ExecResult run_block(const MachineState& in, std::span<const Instruction> seq,
                     int fuel, const ProgramImage* image = nullptr);

// Hamming distance between two final states produced from one input state:
// popcount over all registers (written registers compare results; untouched
// registers compare preservation), popcount over the union of bytes either
// run dirtied, and, when check_flags, flag_weight per differing status flag.
// 0 iff the projections are identical.
uint64_t project_and_compare(const MachineState& a, const MachineState& b,
                             bool check_flags, uint64_t flag_weight = 32);

// ---------------------------------------------------------------------------
// Whole-program execution (subset-only fixtures)
// ---------------------------------------------------------------------------

struct ProgramRunResult {
  bool ok = false;
  std::string stop_reason;  // "exit", "external-call:<sym>", "bad-jump", ...
  MachineState state;
  uint64_t steps = 0;
};

// Follows control flow from `entry` until the entry frame returns through the
// exit sentinel. Calls push synthetic return addresses; indirect targets must
// land on instruction addresses.
ProgramRunResult run_program(const ProgramImage& image, const std::string& entry,
                             MachineState state, uint64_t max_steps = 1u << 20);

}  // namespace divasm
