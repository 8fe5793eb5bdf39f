#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace divasm {

// ---------------------------------------------------------------------------
// Registers
// ---------------------------------------------------------------------------

// Canonical 64-bit general-purpose registers, in hardware encoding order.
enum class Gpr : uint8_t {
  Rax = 0, Rcx, Rdx, Rbx, Rsp, Rbp, Rsi, Rdi,
  R8, R9, R10, R11, R12, R13, R14, R15,
};
inline constexpr int kGprCount = 16;

struct Register {
  Gpr parent = Gpr::Rax;  // canonical 64-bit parent
  uint8_t width = 64;     // bits: 8, 16, 32, 64

  bool operator==(const Register&) const = default;
  auto operator<=>(const Register&) const = default;
};

// Lookup by AT&T name without the '%' sigil ("rax", "eax", "ax", "al", ...).
// Only the 8-bit *low* forms are part of the subset (al..dil, r8b..r15b).
std::optional<Register> lookup_register(const std::string& name);
const std::string& register_name(Register r);
const std::string& gpr_name(Gpr g);  // 64-bit name

// ---------------------------------------------------------------------------
// Operands and instructions
// ---------------------------------------------------------------------------

struct MemRef {
  std::optional<Register> base;   // 64-bit register
  std::optional<Register> index;  // 64-bit register, never %rsp
  uint8_t scale = 1;              // 1, 2, 4, 8; meaningful only with index
  int32_t disp = 0;

  bool operator==(const MemRef&) const = default;
};

struct Operand {
  enum class Kind : uint8_t {
    Imm,      // $0x12
    Reg,      // %rax
    Mem,      // disp(%base,%index,scale)
    Label,    // jump/call target symbol (possibly numeric text like 0x112346608)
    SymAddr,  // $symbol — address-of immediate
  };

  Kind kind = Kind::Imm;
  int64_t imm = 0;
  Register reg{};
  MemRef mem{};
  std::string sym;  // Label / SymAddr

  static Operand make_imm(int64_t v);
  static Operand make_reg(Register r);
  static Operand make_mem(MemRef m);
  static Operand make_label(std::string s);
  static Operand make_sym_addr(std::string s);

  bool operator==(const Operand&) const = default;
};

enum class Mnemonic : uint8_t {
  Mov, Movabs, Lea,
  Add, Sub, Inc, Dec, Neg,
  Xor, And, Or, Not,
  Test, Cmp,
  Shl, Shr, Sar,
  Push, Pop, Nop,
  Call, Ret, Jmp,
  Je, Jne, Jl, Jle, Jg, Jge, Jb, Jbe, Ja, Jae, Js, Jns,
};

const std::string& mnemonic_name(Mnemonic m);
std::optional<Mnemonic> lookup_mnemonic(const std::string& name);

bool is_cond_jump(Mnemonic m);
// Any instruction that ends a basic block: ret, jmp, call, conditional jumps.
bool is_control_transfer(Mnemonic m);

// Condition codes for the supported conditional jumps.
enum class Cond : uint8_t { E, Ne, L, Le, G, Ge, B, Be, A, Ae, S, Ns };
Cond cond_of(Mnemonic m);
Mnemonic jump_for(Cond c);

struct Instruction {
  Mnemonic mn = Mnemonic::Ret;
  uint8_t width = 0;           // operand width in bits; 0 when not applicable
  bool explicit_width = false; // width came from a mnemonic suffix (printed back)
  bool indirect = false;       // call/jmp through register or memory (`*%rax`)
  std::vector<Operand> ops;    // AT&T order: source first
  uint32_t source_line = 0;    // 1-based line in the original text; 0 = synthetic

  bool operator==(const Instruction& o) const {
    return mn == o.mn && width == o.width && indirect == o.indirect && ops == o.ops;
  }
};

// ---------------------------------------------------------------------------
// Program: ordered lines of labels, instructions, and opaque pass-through text
// ---------------------------------------------------------------------------

struct Line {
  enum class Kind : uint8_t { Label, Instr, Opaque };
  Kind kind = Kind::Opaque;
  std::string label;   // Kind::Label
  Instruction insn;    // Kind::Instr
  std::string text;    // Kind::Opaque, verbatim
};

struct Program {
  std::vector<Line> lines;
  std::map<std::string, size_t> symtab;  // label -> line index

  bool has_label(const std::string& s) const { return symtab.count(s) != 0; }
};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct SyntaxError : std::runtime_error {
  int line, column;
  SyntaxError(int line_, int col_, const std::string& reason);
};

struct UnsupportedInstruction : std::runtime_error {
  int line;
  UnsupportedInstruction(int line_, const std::string& what_);
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

struct ParseOptions {
  // Strict mode rejects lines that look like instructions but are outside the
  // subset. Non-strict mode carries them as opaque lines.
  bool strict = false;
};

// Parse AT&T-syntax assembly restricted to the supported subset. Directives
// and (in non-strict mode) unsupported instructions are preserved verbatim as
// opaque lines; nothing is silently dropped.
Program parse_program(const std::string& text, ParseOptions opts = {});

// Deterministic canonical rendering. parse(render(p)) is structurally equal
// to p, and render∘parse is a fixed point after one pass.
std::string render_program(const Program& p);

std::string render_instruction(const Instruction& i);
std::string render_operand(const Operand& o, bool indirect = false);

// Canonical machine-code byte length of one instruction (one fixed encoding
// per mnemonic/operand shape; REX/ModRM/SIB/immediate rules applied).
int encoded_length(const Instruction& i);
// Sum over a sequence.
int encoded_length(const std::vector<Instruction>& seq);

// Validate operand count/kinds/widths against the mnemonic signature table.
// Returns an error message, or nullopt if the instruction is well-formed.
std::optional<std::string> validate_instruction(const Instruction& i);

}  // namespace divasm
