#include "divasm/asm_core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

namespace divasm {

// ---------------------------------------------------------------------------
// Register tables
// ---------------------------------------------------------------------------

namespace {

const std::array<std::array<std::string, 4>, kGprCount> kRegNames = {{
    // 64        32       16      8 (low)
    {{"rax", "eax", "ax", "al"}},
    {{"rcx", "ecx", "cx", "cl"}},
    {{"rdx", "edx", "dx", "dl"}},
    {{"rbx", "ebx", "bx", "bl"}},
    {{"rsp", "esp", "sp", "spl"}},
    {{"rbp", "ebp", "bp", "bpl"}},
    {{"rsi", "esi", "si", "sil"}},
    {{"rdi", "edi", "di", "dil"}},
    {{"r8", "r8d", "r8w", "r8b"}},
    {{"r9", "r9d", "r9w", "r9b"}},
    {{"r10", "r10d", "r10w", "r10b"}},
    {{"r11", "r11d", "r11w", "r11b"}},
    {{"r12", "r12d", "r12w", "r12b"}},
    {{"r13", "r13d", "r13w", "r13b"}},
    {{"r14", "r14d", "r14w", "r14b"}},
    {{"r15", "r15d", "r15w", "r15b"}},
}};

int width_slot(uint8_t width) {
  switch (width) {
    case 64: return 0;
    case 32: return 1;
    case 16: return 2;
    case 8: return 3;
  }
  return -1;
}

const std::map<std::string, Register>& register_table() {
  static const std::map<std::string, Register> table = [] {
    std::map<std::string, Register> t;
    const uint8_t widths[4] = {64, 32, 16, 8};
    for (int g = 0; g < kGprCount; ++g)
      for (int s = 0; s < 4; ++s)
        t[kRegNames[g][s]] = Register{static_cast<Gpr>(g), widths[s]};
    return t;
  }();
  return table;
}

struct MnemonicInfo {
  Mnemonic mn;
  std::string name;
};

const std::vector<MnemonicInfo>& mnemonic_table() {
  static const std::vector<MnemonicInfo> table = {
      {Mnemonic::Mov, "mov"},     {Mnemonic::Movabs, "movabs"},
      {Mnemonic::Lea, "lea"},     {Mnemonic::Add, "add"},
      {Mnemonic::Sub, "sub"},     {Mnemonic::Inc, "inc"},
      {Mnemonic::Dec, "dec"},     {Mnemonic::Neg, "neg"},
      {Mnemonic::Xor, "xor"},     {Mnemonic::And, "and"},
      {Mnemonic::Or, "or"},       {Mnemonic::Not, "not"},
      {Mnemonic::Test, "test"},   {Mnemonic::Cmp, "cmp"},
      {Mnemonic::Shl, "shl"},     {Mnemonic::Shr, "shr"},
      {Mnemonic::Sar, "sar"},     {Mnemonic::Push, "push"},
      {Mnemonic::Pop, "pop"},     {Mnemonic::Nop, "nop"},
      {Mnemonic::Call, "call"},
      {Mnemonic::Ret, "ret"},     {Mnemonic::Jmp, "jmp"},
      {Mnemonic::Je, "je"},       {Mnemonic::Jne, "jne"},
      {Mnemonic::Jl, "jl"},       {Mnemonic::Jle, "jle"},
      {Mnemonic::Jg, "jg"},       {Mnemonic::Jge, "jge"},
      {Mnemonic::Jb, "jb"},       {Mnemonic::Jbe, "jbe"},
      {Mnemonic::Ja, "ja"},       {Mnemonic::Jae, "jae"},
      {Mnemonic::Js, "js"},       {Mnemonic::Jns, "jns"},
  };
  return table;
}

}  // namespace

std::optional<Register> lookup_register(const std::string& name) {
  auto& t = register_table();
  auto it = t.find(name);
  if (it == t.end()) return std::nullopt;
  return it->second;
}

const std::string& register_name(Register r) {
  return kRegNames[static_cast<int>(r.parent)][width_slot(r.width)];
}

const std::string& gpr_name(Gpr g) { return kRegNames[static_cast<int>(g)][0]; }

const std::string& mnemonic_name(Mnemonic m) {
  for (auto& e : mnemonic_table())
    if (e.mn == m) return e.name;
  static const std::string bad = "?";
  return bad;
}

std::optional<Mnemonic> lookup_mnemonic(const std::string& name) {
  for (auto& e : mnemonic_table())
    if (e.name == name) return e.mn;
  return std::nullopt;
}

bool is_cond_jump(Mnemonic m) {
  return m >= Mnemonic::Je && m <= Mnemonic::Jns;
}

bool is_control_transfer(Mnemonic m) {
  return m == Mnemonic::Ret || m == Mnemonic::Jmp || m == Mnemonic::Call ||
         is_cond_jump(m);
}

Cond cond_of(Mnemonic m) {
  switch (m) {
    case Mnemonic::Je: return Cond::E;
    case Mnemonic::Jne: return Cond::Ne;
    case Mnemonic::Jl: return Cond::L;
    case Mnemonic::Jle: return Cond::Le;
    case Mnemonic::Jg: return Cond::G;
    case Mnemonic::Jge: return Cond::Ge;
    case Mnemonic::Jb: return Cond::B;
    case Mnemonic::Jbe: return Cond::Be;
    case Mnemonic::Ja: return Cond::A;
    case Mnemonic::Jae: return Cond::Ae;
    case Mnemonic::Js: return Cond::S;
    default: return Cond::Ns;
  }
}

Mnemonic jump_for(Cond c) {
  switch (c) {
    case Cond::E: return Mnemonic::Je;
    case Cond::Ne: return Mnemonic::Jne;
    case Cond::L: return Mnemonic::Jl;
    case Cond::Le: return Mnemonic::Jle;
    case Cond::G: return Mnemonic::Jg;
    case Cond::Ge: return Mnemonic::Jge;
    case Cond::B: return Mnemonic::Jb;
    case Cond::Be: return Mnemonic::Jbe;
    case Cond::A: return Mnemonic::Ja;
    case Cond::Ae: return Mnemonic::Jae;
    case Cond::S: return Mnemonic::Js;
    case Cond::Ns: return Mnemonic::Jns;
  }
  return Mnemonic::Jns;
}

Operand Operand::make_imm(int64_t v) {
  Operand o;
  o.kind = Kind::Imm;
  o.imm = v;
  return o;
}
Operand Operand::make_reg(Register r) {
  Operand o;
  o.kind = Kind::Reg;
  o.reg = r;
  return o;
}
Operand Operand::make_mem(MemRef m) {
  Operand o;
  o.kind = Kind::Mem;
  o.mem = m;
  return o;
}
Operand Operand::make_label(std::string s) {
  Operand o;
  o.kind = Kind::Label;
  o.sym = std::move(s);
  return o;
}
Operand Operand::make_sym_addr(std::string s) {
  Operand o;
  o.kind = Kind::SymAddr;
  o.sym = std::move(s);
  return o;
}

SyntaxError::SyntaxError(int line_, int col_, const std::string& reason)
    : std::runtime_error("syntax error at line " + std::to_string(line_) +
                         ", column " + std::to_string(col_) + ": " + reason),
      line(line_),
      column(col_) {}

UnsupportedInstruction::UnsupportedInstruction(int line_, const std::string& what_)
    : std::runtime_error("unsupported instruction at line " +
                         std::to_string(line_) + ": " + what_),
      line(line_) {}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

bool is_label_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ||
         c == '$' || c == '@';
}

bool looks_like_symbol(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), is_label_char);
}

struct Cursor {
  const std::string& s;
  size_t pos = 0;
  int line;

  char peek() const { return pos < s.size() ? s[pos] : '\0'; }
  char get() { return pos < s.size() ? s[pos++] : '\0'; }
  bool eof() const { return pos >= s.size(); }
  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
  [[noreturn]] void fail(const std::string& reason) const {
    throw SyntaxError(line, static_cast<int>(pos) + 1, reason);
  }
};

// Signed integer literal: decimal or 0x hex, optional leading '-'.
std::optional<int64_t> parse_int(Cursor& c) {
  size_t start = c.pos;
  bool neg = false;
  if (c.peek() == '-') {
    neg = true;
    c.get();
  }
  uint64_t value = 0;
  size_t digits_start = c.pos;
  if (c.peek() == '0' && c.pos + 1 < c.s.size() &&
      (c.s[c.pos + 1] == 'x' || c.s[c.pos + 1] == 'X')) {
    c.pos += 2;
    size_t hex_start = c.pos;
    while (!c.eof() && std::isxdigit(static_cast<unsigned char>(c.peek())))
      value = value * 16 + [](char ch) {
        if (ch >= '0' && ch <= '9') return ch - '0';
        return std::tolower(ch) - 'a' + 10;
      }(c.get());
    if (c.pos == hex_start) {
      c.pos = start;
      return std::nullopt;
    }
  } else {
    while (!c.eof() && std::isdigit(static_cast<unsigned char>(c.peek())))
      value = value * 10 + (c.get() - '0');
    if (c.pos == digits_start) {
      c.pos = start;
      return std::nullopt;
    }
  }
  int64_t v = static_cast<int64_t>(value);
  return neg ? -v : v;
}

std::string parse_symbol_token(Cursor& c) {
  size_t start = c.pos;
  while (!c.eof() && is_label_char(c.peek())) c.get();
  return c.s.substr(start, c.pos - start);
}

Register parse_register(Cursor& c) {
  if (c.get() != '%') c.fail("expected '%' register sigil");
  std::string name = parse_symbol_token(c);
  auto r = lookup_register(name);
  if (!r) c.fail("unknown register %" + name);
  return *r;
}

MemRef parse_mem_suffix(Cursor& c, int64_t disp) {
  // cursor sits on '('
  MemRef m;
  m.disp = static_cast<int32_t>(disp);
  c.get();  // '('
  c.skip_ws();
  if (c.peek() == '%') {
    Register base = parse_register(c);
    if (base.width != 64) c.fail("memory base must be a 64-bit register");
    m.base = base;
    c.skip_ws();
  }
  if (c.peek() == ',') {
    c.get();
    c.skip_ws();
    if (c.peek() == '%') {
      Register idx = parse_register(c);
      if (idx.width != 64) c.fail("memory index must be a 64-bit register");
      if (idx.parent == Gpr::Rsp) c.fail("%rsp cannot be an index register");
      m.index = idx;
      c.skip_ws();
      if (c.peek() == ',') {
        c.get();
        c.skip_ws();
        auto sc = parse_int(c);
        if (!sc || (*sc != 1 && *sc != 2 && *sc != 4 && *sc != 8))
          c.fail("scale must be 1, 2, 4, or 8");
        m.scale = static_cast<uint8_t>(*sc);
      }
    } else {
      c.fail("expected index register after ','");
    }
    c.skip_ws();
  }
  if (c.get() != ')') c.fail("expected ')' in memory operand");
  if (!m.base && !m.index && disp == 0) c.fail("empty memory operand");
  return m;
}

Operand parse_operand(Cursor& c, bool branch_target) {
  c.skip_ws();
  char ch = c.peek();
  if (ch == '$') {
    c.get();
    auto v = parse_int(c);
    if (v) return Operand::make_imm(*v);
    std::string sym = parse_symbol_token(c);
    if (sym.empty()) c.fail("expected immediate value or symbol after '$'");
    return Operand::make_sym_addr(sym);
  }
  if (ch == '%') return Operand::make_reg(parse_register(c));
  if (ch == '(') return Operand::make_mem(parse_mem_suffix(c, 0));
  // Number: displacement of a memory operand, absolute address, or (for
  // branches) a numeric target label like `je 0x112346608`.
  size_t save = c.pos;
  auto v = parse_int(c);
  if (v) {
    c.skip_ws();
    if (c.peek() == '(') return Operand::make_mem(parse_mem_suffix(c, *v));
    if (branch_target) {
      // keep the verbatim token as a symbolic target
      return Operand::make_label(c.s.substr(save, c.pos - save));
    }
    if (*v < INT32_MIN || *v > INT32_MAX) c.fail("absolute address out of range");
    MemRef m;
    m.disp = static_cast<int32_t>(*v);
    Operand o = Operand::make_mem(m);
    return o;
  }
  std::string sym = parse_symbol_token(c);
  if (sym.empty()) c.fail("cannot parse operand");
  c.skip_ws();
  if (c.peek() == '(') {
    c.fail("symbolic memory displacements are not in the subset");
  }
  return Operand::make_label(sym);
}

// mnemonic text -> (mnemonic, width-from-suffix)
std::optional<std::pair<Mnemonic, uint8_t>> split_mnemonic(const std::string& tok) {
  if (auto m = lookup_mnemonic(tok)) return {{*m, 0}};
  if (tok.size() < 2) return std::nullopt;
  char suffix = tok.back();
  uint8_t w = 0;
  switch (suffix) {
    case 'b': w = 8; break;
    case 'w': w = 16; break;
    case 'l': w = 32; break;
    case 'q': w = 64; break;
    default: return std::nullopt;
  }
  auto m = lookup_mnemonic(tok.substr(0, tok.size() - 1));
  if (!m) return std::nullopt;
  if (is_control_transfer(*m)) return std::nullopt;  // no jel/retq-style forms
  return {{*m, w}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Signature validation
// ---------------------------------------------------------------------------

namespace {

using K = Operand::Kind;

bool reg_is(const Operand& o, Gpr g, uint8_t w) {
  return o.kind == K::Reg && o.reg.parent == g && o.reg.width == w;
}

bool imm_fits(int64_t v, uint8_t width) {
  switch (width) {
    case 8: return v >= -128 && v <= 255;
    case 16: return v >= -32768 && v <= 65535;
    case 32: return v >= INT32_MIN && v <= UINT32_MAX;
    default: return true;
  }
}

// Width of the instruction as revealed by its register operands; the count
// register of a %cl shift does not reveal width.
uint8_t revealed_width(const Instruction& i) {
  bool shift = i.mn == Mnemonic::Shl || i.mn == Mnemonic::Shr || i.mn == Mnemonic::Sar;
  for (size_t k = 0; k < i.ops.size(); ++k) {
    if (shift && k == 0) continue;  // count operand
    if (i.ops[k].kind == K::Reg) return i.ops[k].reg.width;
  }
  return 0;
}

}  // namespace

std::optional<std::string> validate_instruction(const Instruction& i) {
  const auto& ops = i.ops;
  auto kind = [&](size_t k) { return ops[k].kind; };
  auto is_mem_or_reg = [&](size_t k) { return kind(k) == K::Mem || kind(k) == K::Reg; };
  auto is_srcish = [&](size_t k) {
    return kind(k) == K::Imm || kind(k) == K::SymAddr || kind(k) == K::Reg ||
           kind(k) == K::Mem;
  };

  // width sanity
  auto check_width = [&]() -> std::optional<std::string> {
    if (i.width != 8 && i.width != 16 && i.width != 32 && i.width != 64)
      return "missing operand width (add a b/w/l/q suffix)";
    bool shift = i.mn == Mnemonic::Shl || i.mn == Mnemonic::Shr || i.mn == Mnemonic::Sar;
    for (size_t k = 0; k < ops.size(); ++k) {
      if (ops[k].kind == K::Reg) {
        if (shift && k == 0) {
          if (!reg_is(ops[k], Gpr::Rcx, 8)) return "shift count register must be %cl";
          continue;
        }
        if (ops[k].reg.width != i.width) return "register width mismatch";
      }
      if (ops[k].kind == K::Mem) {
        if (ops[k].mem.base && ops[k].mem.base->width != 64)
          return "memory base must be 64-bit";
        if (ops[k].mem.index && ops[k].mem.index->width != 64)
          return "memory index must be 64-bit";
      }
    }
    return std::nullopt;
  };

  switch (i.mn) {
    case Mnemonic::Mov: {
      if (ops.size() != 2) return "mov takes 2 operands";
      if (!is_srcish(0) || !is_mem_or_reg(1)) return "bad mov operands";
      if (kind(0) == K::Mem && kind(1) == K::Mem) return "mov cannot be mem to mem";
      if (kind(0) == K::Imm) {
        if (i.width == 64) {
          if (!imm_fits(ops[0].imm, 32))
            return "immediate does not fit in 32 bits (use movabs)";
        } else if (!imm_fits(ops[0].imm, i.width)) {
          return "immediate does not fit operand width";
        }
      }
      if (kind(0) == K::SymAddr && i.width != 64 && i.width != 32)
        return "$symbol loads need 32- or 64-bit width";
      return check_width();
    }
    case Mnemonic::Movabs: {
      if (ops.size() != 2 || kind(0) != K::Imm || kind(1) != K::Reg ||
          ops[1].reg.width != 64)
        return "movabs takes $imm64, %r64";
      return std::nullopt;
    }
    case Mnemonic::Lea: {
      if (ops.size() != 2 || kind(0) != K::Mem || kind(1) != K::Reg)
        return "lea takes mem, %reg";
      if (ops[1].reg.width == 8) return "lea destination cannot be 8-bit";
      return check_width();
    }
    case Mnemonic::Add:
    case Mnemonic::Sub:
    case Mnemonic::Xor:
    case Mnemonic::And:
    case Mnemonic::Or:
    case Mnemonic::Cmp:
    case Mnemonic::Test: {
      if (ops.size() != 2) return "takes 2 operands";
      if (!is_srcish(0) || !is_mem_or_reg(1)) return "bad operands";
      if (kind(0) == K::Mem && kind(1) == K::Mem) return "cannot be mem to mem";
      if (kind(0) == K::SymAddr) return "$symbol source only valid for mov/push";
      if (kind(0) == K::Imm && !imm_fits(ops[0].imm, std::min<uint8_t>(i.width, 32)))
        return "immediate does not fit";
      return check_width();
    }
    case Mnemonic::Inc:
    case Mnemonic::Dec:
    case Mnemonic::Neg:
    case Mnemonic::Not: {
      if (ops.size() != 1 || !is_mem_or_reg(0)) return "takes one reg/mem operand";
      return check_width();
    }
    case Mnemonic::Shl:
    case Mnemonic::Shr:
    case Mnemonic::Sar: {
      if (ops.size() != 2) return "shift takes count, dest";
      if (kind(0) != K::Imm && !reg_is(ops[0], Gpr::Rcx, 8))
        return "shift count must be $imm or %cl";
      if (kind(0) == K::Imm && (ops[0].imm < 0 || ops[0].imm > 63))
        return "shift count out of range";
      if (!is_mem_or_reg(1)) return "bad shift destination";
      return check_width();
    }
    case Mnemonic::Push: {
      if (ops.size() != 1) return "push takes 1 operand";
      if (kind(0) == K::Reg && ops[0].reg.width != 64) return "push takes a 64-bit register";
      if (kind(0) == K::Imm && !imm_fits(ops[0].imm, 32)) return "push immediate too large";
      if (!is_srcish(0)) return "bad push operand";
      return std::nullopt;
    }
    case Mnemonic::Pop: {
      if (ops.size() != 1 || !is_mem_or_reg(0)) return "pop takes reg/mem";
      if (kind(0) == K::Reg && ops[0].reg.width != 64) return "pop takes a 64-bit register";
      return std::nullopt;
    }
    case Mnemonic::Call:
    case Mnemonic::Jmp: {
      if (ops.size() != 1) return "takes 1 target";
      if (i.indirect) {
        if (kind(0) == K::Reg && ops[0].reg.width == 64) return std::nullopt;
        if (kind(0) == K::Mem) return std::nullopt;
        return "indirect target must be *%r64 or *mem";
      }
      if (kind(0) != K::Label) return "direct target must be a symbol";
      return std::nullopt;
    }
    case Mnemonic::Ret:
    case Mnemonic::Nop:
      if (!ops.empty()) return "takes no operands";
      return std::nullopt;
    default:  // conditional jumps
      if (ops.size() != 1 || kind(0) != K::Label)
        return "conditional jump takes a label";
      return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// parse_program
// ---------------------------------------------------------------------------

namespace {

// Parses one instruction statement; returns nullopt when the mnemonic is not
// in the subset (caller decides opaque vs error).
std::optional<Instruction> parse_statement(const std::string& stmt, int line_no) {
  Cursor c{stmt, 0, line_no};
  c.skip_ws();
  size_t mn_start = c.pos;
  while (!c.eof() && std::isalnum(static_cast<unsigned char>(c.peek()))) c.get();
  std::string mn_tok = stmt.substr(mn_start, c.pos - mn_start);
  auto split = split_mnemonic(mn_tok);
  if (!split) return std::nullopt;

  Instruction insn;
  insn.mn = split->first;
  insn.width = split->second;
  insn.explicit_width = split->second != 0;
  insn.source_line = static_cast<uint32_t>(line_no);

  c.skip_ws();
  bool branch = insn.mn == Mnemonic::Jmp || insn.mn == Mnemonic::Call ||
                is_cond_jump(insn.mn);
  if (branch && c.peek() == '*') {
    c.get();
    insn.indirect = true;
  }
  while (!c.eof()) {
    insn.ops.push_back(parse_operand(c, branch && !insn.indirect));
    c.skip_ws();
    if (c.peek() == ',') {
      c.get();
      c.skip_ws();
      if (c.eof()) c.fail("trailing comma");
      continue;
    }
    break;
  }
  c.skip_ws();
  if (!c.eof()) c.fail("trailing characters after operands");

  // Derive width from register operands when no suffix was given.
  if (insn.width == 0) {
    uint8_t w = revealed_width(insn);
    if (w == 0) {
      switch (insn.mn) {
        case Mnemonic::Push:
        case Mnemonic::Pop:
        case Mnemonic::Movabs:
        case Mnemonic::Call:
        case Mnemonic::Ret:
        case Mnemonic::Jmp:
        case Mnemonic::Nop:
          w = 64;
          break;
        default:
          if (is_cond_jump(insn.mn)) w = 64;
          break;
      }
    }
    insn.width = w;
  }
  if (is_control_transfer(insn.mn) || insn.mn == Mnemonic::Push ||
      insn.mn == Mnemonic::Pop || insn.mn == Mnemonic::Movabs) {
    insn.width = 64;
    insn.explicit_width = false;
  }

  if (auto err = validate_instruction(insn)) {
    Cursor fc{stmt, 0, line_no};
    fc.fail(*err);
  }
  return insn;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

}  // namespace

Program parse_program(const std::string& text, ParseOptions opts) {
  Program p;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::string s = raw;

    // Full-line comments and directives pass through verbatim.
    size_t first = s.find_first_not_of(" \t");
    if (first == std::string::npos) continue;  // blank lines are canonicalized away
    if (s[first] == '#' || s[first] == '.') {
      // .-prefixed could still be a local label like ".L3:"
      size_t colon = s.find(':');
      bool label_like = s[first] == '.' && colon != std::string::npos &&
                        looks_like_symbol(s.substr(first, colon - first));
      if (!label_like) {
        Line l;
        l.kind = Line::Kind::Opaque;
        l.text = raw;
        p.lines.push_back(std::move(l));
        continue;
      }
    }

    // Strip a trailing comment on a code line.
    if (size_t hash = s.find('#'); hash != std::string::npos) s = s.substr(0, hash);
    if (blank(s)) continue;

    // Leading labels ("sym:"), possibly followed by a statement.
    size_t pos = s.find_first_not_of(" \t");
    while (pos != std::string::npos) {
      size_t tok_end = pos;
      while (tok_end < s.size() && is_label_char(s[tok_end])) ++tok_end;
      if (tok_end < s.size() && s[tok_end] == ':' && tok_end > pos) {
        std::string name = s.substr(pos, tok_end - pos);
        if (p.symtab.count(name))
          throw SyntaxError(line_no, static_cast<int>(pos) + 1,
                            "duplicate label " + name);
        Line l;
        l.kind = Line::Kind::Label;
        l.label = name;
        p.symtab[name] = p.lines.size();
        p.lines.push_back(std::move(l));
        pos = s.find_first_not_of(" \t", tok_end + 1);
        continue;
      }
      break;
    }
    if (pos == std::string::npos) continue;

    std::string stmt = s.substr(pos);
    std::optional<Instruction> insn;
    try {
      insn = parse_statement(stmt, line_no);
    } catch (const SyntaxError&) {
      throw;
    }
    if (!insn) {
      if (opts.strict) throw UnsupportedInstruction(line_no, stmt);
      Line l;
      l.kind = Line::Kind::Opaque;
      l.text = raw;
      p.lines.push_back(std::move(l));
      continue;
    }
    Line l;
    l.kind = Line::Kind::Instr;
    l.insn = std::move(*insn);
    p.lines.push_back(std::move(l));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace {

std::string hex_imm(int64_t v) {
  std::ostringstream os;
  if (v < 0) {
    os << "-0x" << std::hex << static_cast<uint64_t>(-v);
  } else {
    os << "0x" << std::hex << static_cast<uint64_t>(v);
  }
  return os.str();
}

bool needs_suffix(const Instruction& i) {
  switch (i.mn) {
    case Mnemonic::Ret:
    case Mnemonic::Call:
    case Mnemonic::Jmp:
    case Mnemonic::Push:
    case Mnemonic::Pop:
    case Mnemonic::Nop:
    case Mnemonic::Movabs:
      return false;
    default:
      if (is_cond_jump(i.mn)) return false;
      return revealed_width(i) == 0;
  }
}

char suffix_char(uint8_t w) {
  switch (w) {
    case 8: return 'b';
    case 16: return 'w';
    case 32: return 'l';
    default: return 'q';
  }
}

}  // namespace

std::string render_operand(const Operand& o, bool indirect) {
  std::string s;
  if (indirect) s = "*";
  switch (o.kind) {
    case K::Imm: return s + "$" + hex_imm(o.imm);
    case K::SymAddr: return s + "$" + o.sym;
    case K::Reg: return s + "%" + register_name(o.reg);
    case K::Label: return s + o.sym;
    case K::Mem: {
      const MemRef& m = o.mem;
      std::string out = s;
      if (m.disp != 0 || (!m.base && !m.index)) out += hex_imm(m.disp);
      out += "(";
      if (m.base) out += "%" + register_name(*m.base);
      if (m.index) {
        out += ",%" + register_name(*m.index);
        out += "," + std::to_string(static_cast<int>(m.scale));
      }
      out += ")";
      return out;
    }
  }
  return s;
}

std::string render_instruction(const Instruction& i) {
  std::string out = mnemonic_name(i.mn);
  if (needs_suffix(i)) out += suffix_char(i.width);
  for (size_t k = 0; k < i.ops.size(); ++k) {
    out += k == 0 ? " " : ", ";
    out += render_operand(i.ops[k], i.indirect && k == 0);
  }
  return out;
}

std::string render_program(const Program& p) {
  std::string out;
  for (const auto& l : p.lines) {
    switch (l.kind) {
      case Line::Kind::Label:
        out += l.label + ":\n";
        break;
      case Line::Kind::Instr:
        out += render_instruction(l.insn) + "\n";
        break;
      case Line::Kind::Opaque:
        out += l.text + "\n";
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical encoded length
// ---------------------------------------------------------------------------

namespace {

bool is_ext(Gpr g) { return static_cast<int>(g) >= 8; }

// REX needed to address the 8-bit low forms of rsp/rbp/rsi/rdi.
bool byte_reg_needs_rex(const Register& r) {
  if (r.width != 8) return false;
  return r.parent == Gpr::Rsp || r.parent == Gpr::Rbp || r.parent == Gpr::Rsi ||
         r.parent == Gpr::Rdi;
}

struct MemEnc {
  int extra;     // SIB + displacement bytes beyond the ModRM byte
  bool rex_xb;   // base or index is an extended register
};

MemEnc mem_encoding(const MemRef& m) {
  MemEnc e{0, false};
  if (m.base && is_ext(m.base->parent)) e.rex_xb = true;
  if (m.index && is_ext(m.index->parent)) e.rex_xb = true;
  bool need_sib = m.index.has_value() || !m.base ||
                  m.base->parent == Gpr::Rsp || m.base->parent == Gpr::R12;
  if (need_sib) e.extra += 1;
  if (!m.base) {
    e.extra += 4;  // disp32, no base
    return e;
  }
  bool base_is_bp = m.base->parent == Gpr::Rbp || m.base->parent == Gpr::R13;
  if (m.disp == 0 && !base_is_bp) {
    // no displacement
  } else if (m.disp >= -128 && m.disp <= 127) {
    e.extra += 1;
  } else {
    e.extra += 4;
  }
  return e;
}


bool fits_i8(int64_t v) { return v >= -128 && v <= 127; }

}  // namespace

int encoded_length(const Instruction& i) {
  const auto& ops = i.ops;
  const uint8_t w = i.width;
  const bool p66 = w == 16;

  auto rr = [&](const Register& a, const Register& b) {
    bool rex = w == 64 || is_ext(a.parent) || is_ext(b.parent) ||
               byte_reg_needs_rex(a) || byte_reg_needs_rex(b);
    return (p66 ? 1 : 0) + (rex ? 1 : 0) + 2;
  };
  auto rm = [&](const Register& r, const MemRef& m) {
    MemEnc e = mem_encoding(m);
    bool rex = w == 64 || is_ext(r.parent) || byte_reg_needs_rex(r) || e.rex_xb;
    return (p66 ? 1 : 0) + (rex ? 1 : 0) + 2 + e.extra;
  };
  auto m_only = [&](const MemRef& m, bool rexw) {
    MemEnc e = mem_encoding(m);
    bool rex = rexw || e.rex_xb;
    return (p66 ? 1 : 0) + (rex ? 1 : 0) + 2 + e.extra;
  };
  auto r_only = [&](const Register& r, bool rexw) {
    bool rex = rexw || is_ext(r.parent) || byte_reg_needs_rex(r);
    return (p66 ? 1 : 0) + (rex ? 1 : 0) + 2;
  };
  auto is_acc = [&](const Operand& o) {
    return o.kind == K::Reg && o.reg.parent == Gpr::Rax;
  };

  switch (i.mn) {
    case Mnemonic::Ret:
    case Mnemonic::Nop:
      return 1;
    case Mnemonic::Call:
    case Mnemonic::Jmp: {
      if (!i.indirect) return 5;  // rel32
      if (ops[0].kind == K::Reg) {
        bool rex = is_ext(ops[0].reg.parent);
        return (rex ? 1 : 0) + 2;  // FF /2 or /4
      }
      MemEnc e = mem_encoding(ops[0].mem);
      return (e.rex_xb ? 1 : 0) + 2 + e.extra;
    }
    case Mnemonic::Push: {
      if (ops[0].kind == K::Reg)
        return is_ext(ops[0].reg.parent) ? 2 : 1;
      if (ops[0].kind == K::Imm)
        return fits_i8(ops[0].imm) ? 2 : 5;
      if (ops[0].kind == K::SymAddr) return 5;  // push $sym -> imm32
      MemEnc e = mem_encoding(ops[0].mem);
      return (e.rex_xb ? 1 : 0) + 2 + e.extra;  // FF /6
    }
    case Mnemonic::Pop: {
      if (ops[0].kind == K::Reg)
        return is_ext(ops[0].reg.parent) ? 2 : 1;
      MemEnc e = mem_encoding(ops[0].mem);
      return (e.rex_xb ? 1 : 0) + 2 + e.extra;  // 8F /0
    }
    case Mnemonic::Movabs:
      return 10;
    case Mnemonic::Lea:
      return rm(ops[1].reg, ops[0].mem);
    case Mnemonic::Mov: {
      if (ops[0].kind == K::Reg && ops[1].kind == K::Reg)
        return rr(ops[0].reg, ops[1].reg);
      if (ops[0].kind == K::Reg && ops[1].kind == K::Mem)
        return rm(ops[0].reg, ops[1].mem);
      if (ops[0].kind == K::Mem && ops[1].kind == K::Reg)
        return rm(ops[1].reg, ops[0].mem);
      if (ops[0].kind == K::SymAddr && ops[1].kind == K::Reg) {
        if (w == 32) {
          bool rex = is_ext(ops[1].reg.parent);
          return (rex ? 1 : 0) + 5;  // B8+r imm32
        }
        return r_only(ops[1].reg, true) + 4;  // REX.W C7 /0 imm32
      }
      if ((ops[0].kind == K::Imm) && ops[1].kind == K::Reg) {
        const Register& d = ops[1].reg;
        if (w == 64) return 7;  // REX.W C7 /0 imm32
        // B0+r / B8+r forms
        bool rex = is_ext(d.parent) || byte_reg_needs_rex(d);
        return (p66 ? 1 : 0) + (rex ? 1 : 0) + 1 + (w == 8 ? 1 : w == 16 ? 2 : 4);
      }
      // imm -> mem: C6/C7 /0
      return m_only(ops[1].mem, w == 64) + (w == 8 ? 1 : p66 ? 2 : 4);
    }
    case Mnemonic::Add:
    case Mnemonic::Sub:
    case Mnemonic::Xor:
    case Mnemonic::And:
    case Mnemonic::Or:
    case Mnemonic::Cmp: {
      if (ops[0].kind == K::Reg && ops[1].kind == K::Reg)
        return rr(ops[0].reg, ops[1].reg);
      if (ops[0].kind == K::Reg && ops[1].kind == K::Mem)
        return rm(ops[0].reg, ops[1].mem);
      if (ops[0].kind == K::Mem && ops[1].kind == K::Reg)
        return rm(ops[1].reg, ops[0].mem);
      // immediate forms
      int64_t v = ops[0].imm;
      if (ops[1].kind == K::Reg) {
        const Register& d = ops[1].reg;
        bool rexw = w == 64;
        bool rex = rexw || is_ext(d.parent) || byte_reg_needs_rex(d);
        if (w != 8 && fits_i8(v))
          return (p66 ? 1 : 0) + (rex ? 1 : 0) + 3;  // 83 /n ib
        if (is_acc(ops[1]))  // short accumulator form: 04/05-class
          return (p66 ? 1 : 0) + (rex ? 1 : 0) + 1 + (w == 8 ? 1 : p66 ? 2 : 4);
        return (p66 ? 1 : 0) + (rex ? 1 : 0) + 2 + (w == 8 ? 1 : p66 ? 2 : 4);
      }
      if (w != 8 && fits_i8(v)) return m_only(ops[1].mem, w == 64) + 1;
      return m_only(ops[1].mem, w == 64) + (w == 8 ? 1 : p66 ? 2 : 4);
    }
    case Mnemonic::Test: {
      // no imm8 form
      if (ops[0].kind == K::Reg && ops[1].kind == K::Reg)
        return rr(ops[0].reg, ops[1].reg);
      if (ops[0].kind == K::Reg && ops[1].kind == K::Mem)
        return rm(ops[0].reg, ops[1].mem);
      if (ops[1].kind == K::Reg) {
        bool rexw = w == 64;
        if (is_acc(ops[1])) {  // A8/A9
          bool rex = rexw;
          return (p66 ? 1 : 0) + (rex ? 1 : 0) + 1 + (w == 8 ? 1 : p66 ? 2 : 4);
        }
        const Register& d = ops[1].reg;
        bool rex = rexw || is_ext(d.parent) || byte_reg_needs_rex(d);
        return (p66 ? 1 : 0) + (rex ? 1 : 0) + 2 + (w == 8 ? 1 : p66 ? 2 : 4);
      }
      return m_only(ops[1].mem, w == 64) + (w == 8 ? 1 : p66 ? 2 : 4);
    }
    case Mnemonic::Inc:
    case Mnemonic::Dec:
    case Mnemonic::Neg:
    case Mnemonic::Not: {
      if (ops[0].kind == K::Reg) return r_only(ops[0].reg, w == 64);
      return m_only(ops[0].mem, w == 64);
    }
    case Mnemonic::Shl:
    case Mnemonic::Shr:
    case Mnemonic::Sar: {
      int body;
      if (ops[1].kind == K::Reg)
        body = r_only(ops[1].reg, w == 64);
      else
        body = m_only(ops[1].mem, w == 64);
      if (ops[0].kind == K::Reg) return body;        // D2/D3 %cl form
      if (ops[0].imm == 1) return body;              // D0/D1 shift-by-1 form
      return body + 1;                               // C0/C1 ib
    }
    default:
      if (is_cond_jump(i.mn)) return 6;  // 0F 8x rel32
      return 0;
  }
}

int encoded_length(const std::vector<Instruction>& seq) {
  int total = 0;
  for (const auto& i : seq) total += encoded_length(i);
  return total;
}

}  // namespace divasm
