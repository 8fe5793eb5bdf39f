#include "divasm/emulator.hpp"

#include <algorithm>
#include <bit>

namespace divasm {

const char* flag_name(FlagBit f) {
  switch (f) {
    case FlagCF: return "CF";
    case FlagPF: return "PF";
    case FlagZF: return "ZF";
    case FlagSF: return "SF";
    case FlagOF: return "OF";
  }
  return "?";
}

const char* fault_name(Fault::Kind k) {
  switch (k) {
    case Fault::Kind::OutOfFootprint: return "OutOfFootprint";
    case Fault::Kind::StackOverflow: return "StackOverflow";
    case Fault::Kind::DivideByZero: return "DivideByZero";
    case Fault::Kind::UnsupportedInstruction: return "UnsupportedInstruction";
  }
  return "?";
}

void Footprint::add(uint64_t lo, uint64_t hi) {
  if (lo >= hi) return;
  ranges.emplace_back(lo, hi);
  std::sort(ranges.begin(), ranges.end());
  std::vector<std::pair<uint64_t, uint64_t>> merged;
  for (auto& r : ranges) {
    if (!merged.empty() && r.first <= merged.back().second)
      merged.back().second = std::max(merged.back().second, r.second);
    else
      merged.push_back(r);
  }
  ranges = std::move(merged);
}

bool Footprint::contains(uint64_t addr) const {
  auto it = std::upper_bound(ranges.begin(), ranges.end(),
                             std::make_pair(addr, UINT64_MAX));
  if (it == ranges.begin()) return false;
  --it;
  return addr >= it->first && addr < it->second;
}

MachineState make_default_state() {
  MachineState s;
  s.stack_lo = 0x7fff0000;
  s.stack_hi = 0x7fff8000;
  s.reg(Gpr::Rsp) = 0x7fff4000;
  auto fp = std::make_shared<Footprint>();
  fp->add(s.stack_lo, s.stack_hi);
  s.fp = std::move(fp);
  return s;
}

bool eval_cond(Cond c, uint8_t f) {
  bool cf = f & FlagCF, zf = f & FlagZF, sf = f & FlagSF, of = f & FlagOF;
  switch (c) {
    case Cond::E: return zf;
    case Cond::Ne: return !zf;
    case Cond::L: return sf != of;
    case Cond::Le: return zf || sf != of;
    case Cond::G: return !zf && sf == of;
    case Cond::Ge: return sf == of;
    case Cond::B: return cf;
    case Cond::Be: return cf || zf;
    case Cond::A: return !cf && !zf;
    case Cond::Ae: return !cf;
    case Cond::S: return sf;
    case Cond::Ns: return !sf;
  }
  return false;
}

// ---------------------------------------------------------------------------
// step
// ---------------------------------------------------------------------------

namespace {

uint64_t width_mask(uint8_t w) { return w >= 64 ? ~0ull : (1ull << w) - 1; }

uint64_t sign_bit(uint8_t w) { return 1ull << (w - 1); }

int64_t sign_extend(uint64_t v, uint8_t w) {
  if (w >= 64) return static_cast<int64_t>(v);
  uint64_t m = 1ull << (w - 1);
  return static_cast<int64_t>((v ^ m) - m);
}

struct Ctx {
  MachineState& s;
  const ProgramImage* image;
  std::optional<Fault> fault;

  void fail(Fault::Kind k) {
    if (!fault) fault = Fault{k, 0};
  }

  uint64_t mem_addr(const MemRef& m) {
    uint64_t a = static_cast<uint64_t>(static_cast<int64_t>(m.disp));
    if (m.base) a += s.reg(m.base->parent);
    if (m.index) a += s.reg(m.index->parent) * m.scale;
    return a;
  }

  uint64_t read_mem(uint64_t addr, int bytes) {
    uint64_t v = 0;
    for (int k = 0; k < bytes; ++k) {
      uint64_t a = addr + k;
      const uint8_t* found = s.mem.find_byte(a);
      uint8_t byte;
      if (found) {
        byte = *found;
      } else if (s.fp && s.fp->contains(a)) {
        byte = 0;
      } else {
        fail(Fault::Kind::OutOfFootprint);
        return 0;
      }
      v |= static_cast<uint64_t>(byte) << (8 * k);
    }
    return v;
  }

  void write_mem(uint64_t addr, uint64_t v, int bytes, bool stack_op = false) {
    for (int k = 0; k < bytes; ++k) {
      uint64_t a = addr + k;
      if (!s.fp || !s.fp->contains(a)) {
        fail(stack_op ? Fault::Kind::StackOverflow : Fault::Kind::OutOfFootprint);
        return;
      }
    }
    for (int k = 0; k < bytes; ++k) {
      uint64_t a = addr + k;
      s.mem[a] = static_cast<uint8_t>(v >> (8 * k));
      s.dirty.insert(a);
    }
  }

  uint64_t read_operand(const Operand& o, uint8_t w) {
    switch (o.kind) {
      case Operand::Kind::Imm:
        return static_cast<uint64_t>(o.imm) & width_mask(w);
      case Operand::Kind::SymAddr: {
        if (image) {
          if (auto a = image->symbol_address(o.sym)) return *a;
        }
        fail(Fault::Kind::UnsupportedInstruction);
        return 0;
      }
      case Operand::Kind::Reg:
        return s.reg(o.reg.parent) & width_mask(w);
      case Operand::Kind::Mem:
        return read_mem(mem_addr(o.mem), w / 8);
      case Operand::Kind::Label:
        fail(Fault::Kind::UnsupportedInstruction);
        return 0;
    }
    return 0;
  }

  void write_operand(const Operand& o, uint64_t v, uint8_t w) {
    if (o.kind == Operand::Kind::Reg) {
      uint64_t& r = s.reg(o.reg.parent);
      if (w == 64)
        r = v;
      else if (w == 32)
        r = v & 0xffffffffull;  // zero-extends
      else
        r = (r & ~width_mask(w)) | (v & width_mask(w));  // 8/16-bit writes merge
      return;
    }
    if (o.kind == Operand::Kind::Mem) {
      write_mem(mem_addr(o.mem), v, w / 8);
      return;
    }
    fail(Fault::Kind::UnsupportedInstruction);
  }

  void set_szp(uint64_t r, uint8_t w) {
    s.set_flag(FlagZF, (r & width_mask(w)) == 0);
    s.set_flag(FlagSF, (r & sign_bit(w)) != 0);
    s.set_flag(FlagPF, (std::popcount(static_cast<unsigned>(r & 0xff)) & 1) == 0);
  }
};

}  // namespace

std::optional<Fault> step(MachineState& s, const Instruction& i,
                          const ProgramImage* image) {
  Ctx c{s, image, std::nullopt};
  const uint8_t w = i.width;
  const uint64_t mask = width_mask(w);

  switch (i.mn) {
    case Mnemonic::Nop:
      break;
    case Mnemonic::Mov:
    case Mnemonic::Movabs: {
      uint64_t v = c.read_operand(i.ops[0], w);
      if (!c.fault) c.write_operand(i.ops[1], v, w);
      break;
    }
    case Mnemonic::Lea: {
      uint64_t a = c.mem_addr(i.ops[0].mem);
      c.write_operand(i.ops[1], a & mask, w);
      break;
    }
    case Mnemonic::Add:
    case Mnemonic::Sub:
    case Mnemonic::Cmp: {
      uint64_t b = c.read_operand(i.ops[0], w);
      uint64_t a = c.read_operand(i.ops[1], w);
      if (c.fault) break;
      uint64_t r;
      if (i.mn == Mnemonic::Add) {
        unsigned __int128 wide = static_cast<unsigned __int128>(a) + b;
        r = static_cast<uint64_t>(wide) & mask;
        s.set_flag(FlagCF, (wide >> w) & 1);
        s.set_flag(FlagOF, (~(a ^ b) & (a ^ r) & sign_bit(w)) != 0);
      } else {
        r = (a - b) & mask;
        s.set_flag(FlagCF, a < b);
        s.set_flag(FlagOF, ((a ^ b) & (a ^ r) & sign_bit(w)) != 0);
      }
      c.set_szp(r, w);
      if (i.mn != Mnemonic::Cmp && !c.fault) c.write_operand(i.ops[1], r, w);
      break;
    }
    case Mnemonic::Inc:
    case Mnemonic::Dec: {
      uint64_t a = c.read_operand(i.ops[0], w);
      if (c.fault) break;
      uint64_t r;
      if (i.mn == Mnemonic::Inc) {
        r = (a + 1) & mask;
        s.set_flag(FlagOF, a == sign_bit(w) - 1);
      } else {
        r = (a - 1) & mask;
        s.set_flag(FlagOF, a == sign_bit(w));
      }
      c.set_szp(r, w);  // CF preserved
      c.write_operand(i.ops[0], r, w);
      break;
    }
    case Mnemonic::Neg: {
      uint64_t a = c.read_operand(i.ops[0], w);
      if (c.fault) break;
      uint64_t r = (0 - a) & mask;
      s.set_flag(FlagCF, a != 0);
      s.set_flag(FlagOF, a == sign_bit(w));
      c.set_szp(r, w);
      c.write_operand(i.ops[0], r, w);
      break;
    }
    case Mnemonic::Xor:
    case Mnemonic::And:
    case Mnemonic::Or:
    case Mnemonic::Test: {
      uint64_t b = c.read_operand(i.ops[0], w);
      uint64_t a = c.read_operand(i.ops[1], w);
      if (c.fault) break;
      uint64_t r = i.mn == Mnemonic::Xor ? (a ^ b)
                 : i.mn == Mnemonic::Or  ? (a | b)
                                         : (a & b);
      r &= mask;
      s.set_flag(FlagCF, false);
      s.set_flag(FlagOF, false);
      c.set_szp(r, w);
      if (i.mn != Mnemonic::Test && !c.fault) c.write_operand(i.ops[1], r, w);
      break;
    }
    case Mnemonic::Not: {
      uint64_t a = c.read_operand(i.ops[0], w);
      if (c.fault) break;
      c.write_operand(i.ops[0], ~a & mask, w);  // no flags
      break;
    }
    case Mnemonic::Shl:
    case Mnemonic::Shr:
    case Mnemonic::Sar: {
      uint64_t count = c.read_operand(i.ops[0], 8);
      uint64_t a = c.read_operand(i.ops[1], w);
      if (c.fault) break;
      count &= (w == 64) ? 63 : 31;
      if (count == 0) break;  // value and flags unchanged
      uint64_t r;
      bool cf;
      if (i.mn == Mnemonic::Shl) {
        r = count >= w ? 0 : (a << count) & mask;
        cf = count <= w && ((a >> (w - count)) & 1) != 0;
        if (count == 1) s.set_flag(FlagOF, (((r & sign_bit(w)) != 0) != cf));
      } else if (i.mn == Mnemonic::Shr) {
        r = count >= w ? 0 : (a >> count);
        cf = count <= w && ((a >> (count - 1)) & 1) != 0;
        if (count == 1) s.set_flag(FlagOF, (a & sign_bit(w)) != 0);
      } else {
        int64_t sa = sign_extend(a, w);
        int64_t shifted = count >= w ? (sa < 0 ? -1 : 0) : (sa >> count);
        r = static_cast<uint64_t>(shifted) & mask;
        cf = count <= w ? ((sa >> (count - 1)) & 1) != 0 : sa < 0;
        if (count == 1) s.set_flag(FlagOF, false);
      }
      s.set_flag(FlagCF, cf);
      c.set_szp(r, w);
      c.write_operand(i.ops[1], r, w);
      break;
    }
    case Mnemonic::Push: {
      uint64_t v;
      if (i.ops[0].kind == Operand::Kind::Imm)
        v = static_cast<uint64_t>(i.ops[0].imm);  // sign-extended imm32
      else
        v = c.read_operand(i.ops[0], 64);
      if (c.fault) break;
      uint64_t nsp = s.reg(Gpr::Rsp) - 8;
      if (nsp < s.stack_lo || nsp + 8 > s.stack_hi) {
        c.fail(Fault::Kind::StackOverflow);
        break;
      }
      c.write_mem(nsp, v, 8, /*stack_op=*/true);
      if (!c.fault) s.reg(Gpr::Rsp) = nsp;
      break;
    }
    case Mnemonic::Pop: {
      uint64_t sp = s.reg(Gpr::Rsp);
      if (sp < s.stack_lo || sp + 8 > s.stack_hi) {
        c.fail(Fault::Kind::StackOverflow);
        break;
      }
      uint64_t v = c.read_mem(sp, 8);
      if (c.fault) break;
      s.reg(Gpr::Rsp) = sp + 8;  // a pop mem operand addresses with the new rsp
      c.write_operand(i.ops[0], v, 64);
      break;
    }
    default:
      c.fail(Fault::Kind::UnsupportedInstruction);
      break;
  }

  if (!c.fault && s.stack_hi != 0) {
    uint64_t sp = s.reg(Gpr::Rsp);
    if (sp < s.stack_lo || sp > s.stack_hi)
      c.fault = Fault{Fault::Kind::StackOverflow, 0};
  }
  return c.fault;
}

ExecResult run_block(const MachineState& in, std::span<const Instruction> seq,
                     int fuel, const ProgramImage* image) {
  if (fuel < static_cast<int>(seq.size()))
    throw std::invalid_argument("run_block: fuel below sequence length");
  ExecResult res;
  res.state = in;
  for (int k = 0; k < static_cast<int>(seq.size()); ++k) {
    const Instruction& i = seq[k];
    if (is_control_transfer(i.mn)) {
      std::optional<bool> taken;
      if (is_cond_jump(i.mn)) taken = eval_cond(cond_of(i.mn), res.state.flags);
      res.path.emplace_back(k, taken);
      break;  // terminator recorded, not followed
    }
    if (auto f = step(res.state, i, image)) {
      f->at = k;
      res.fault = f;
      break;
    }
  }
  return res;
}

uint64_t project_and_compare(const MachineState& a, const MachineState& b,
                             bool check_flags, uint64_t flag_weight) {
  uint64_t d = 0;
  for (int k = 0; k < kGprCount; ++k)
    d += std::popcount(a.gpr[k] ^ b.gpr[k]);
  // union of dirtied bytes; an untouched byte reads as the shared input value
  auto byte_of = [](const MachineState& s, uint64_t addr) -> uint8_t {
    const uint8_t* p = s.mem.find_byte(addr);
    return p ? *p : 0;
  };
  auto scan = [&](const AddrSet& set, const AddrSet& other) {
    for (uint64_t addr : set) {
      if (other.contains(addr)) continue;  // counted once via the first set
      d += std::popcount(static_cast<unsigned>(byte_of(a, addr) ^ byte_of(b, addr)));
    }
  };
  for (uint64_t addr : a.dirty)
    d += std::popcount(static_cast<unsigned>(byte_of(a, addr) ^ byte_of(b, addr)));
  scan(b.dirty, a.dirty);
  if (check_flags) {
    for (uint8_t f : {FlagCF, FlagPF, FlagZF, FlagSF, FlagOF})
      if (a.flag(static_cast<FlagBit>(f)) != b.flag(static_cast<FlagBit>(f)))
        d += flag_weight;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Program image + whole-program execution
// ---------------------------------------------------------------------------

std::optional<size_t> ProgramImage::index_of_addr(uint64_t a) const {
  if (a < code_base || a >= code_base + code.size()) return std::nullopt;
  return static_cast<size_t>(a - code_base);
}

std::optional<uint64_t> ProgramImage::symbol_address(const std::string& s) const {
  if (auto it = code_labels.find(s); it != code_labels.end())
    return addr_of_index(it->second);
  if (auto it = data_addrs.find(s); it != data_addrs.end()) return it->second;
  return std::nullopt;
}

void ProgramImage::add_data_footprint(Footprint& fp) const {
  for (auto& [sym, addr] : data_addrs) fp.add(addr, addr + data_page);
}

ProgramImage build_image(const Program& p) {
  ProgramImage img;
  std::vector<size_t> line_to_index(p.lines.size(), SIZE_MAX);
  for (size_t k = 0; k < p.lines.size(); ++k) {
    if (p.lines[k].kind == Line::Kind::Instr) {
      line_to_index[k] = img.code.size();
      img.code.push_back(p.lines[k].insn);
    }
  }
  // labels attach to the next instruction; labels followed only by opaque
  // lines (or nothing) are data labels
  uint64_t next_data = img.data_base;
  for (size_t k = 0; k < p.lines.size(); ++k) {
    if (p.lines[k].kind != Line::Kind::Label) continue;
    size_t j = k + 1;
    while (j < p.lines.size() && p.lines[j].kind != Line::Kind::Instr &&
           p.lines[j].kind != Line::Kind::Label)
      ++j;
    while (j < p.lines.size() && p.lines[j].kind == Line::Kind::Label) ++j;
    bool code = false;
    for (size_t t = k + 1; t < p.lines.size(); ++t) {
      if (p.lines[t].kind == Line::Kind::Instr) {
        // code label only if no opaque data line intervenes
        code = true;
        img.code_labels[p.lines[k].label] = line_to_index[t];
        break;
      }
      if (p.lines[t].kind == Line::Kind::Opaque) break;
    }
    if (!code) {
      img.data_addrs[p.lines[k].label] = next_data;
      next_data += img.data_page;
    }
  }
  return img;
}

ProgramRunResult run_program(const ProgramImage& image, const std::string& entry,
                             MachineState state, uint64_t max_steps) {
  ProgramRunResult out;
  auto eit = image.code_labels.find(entry);
  if (eit == image.code_labels.end()) {
    out.stop_reason = "unknown-entry:" + entry;
    out.state = std::move(state);
    return out;
  }
  size_t pc = eit->second;

  // plant the exit sentinel as the entry frame's return address
  {
    uint64_t nsp = state.reg(Gpr::Rsp) - 8;
    for (int k = 0; k < 8; ++k)
      state.mem[nsp + k] = static_cast<uint8_t>(image.exit_sentinel >> (8 * k));
    state.reg(Gpr::Rsp) = nsp;
  }

  auto read_u64 = [&](uint64_t addr, uint64_t& v) -> bool {
    v = 0;
    for (int k = 0; k < 8; ++k) {
      if (const uint8_t* p = state.mem.find_byte(addr + k))
        v |= static_cast<uint64_t>(*p) << (8 * k);
      else if (!state.fp || !state.fp->contains(addr + k))
        return false;
    }
    return true;
  };

  while (out.steps < max_steps) {
    if (pc >= image.code.size()) {
      out.stop_reason = "fell-off-code";
      break;
    }
    const Instruction& i = image.code[pc];
    ++out.steps;

    if (!is_control_transfer(i.mn)) {
      if (auto f = step(state, i, &image)) {
        out.stop_reason = std::string("fault:") + fault_name(f->kind);
        break;
      }
      ++pc;
      continue;
    }

    if (i.mn == Mnemonic::Ret) {
      uint64_t sp = state.reg(Gpr::Rsp);
      uint64_t addr;
      if (!read_u64(sp, addr)) {
        out.stop_reason = "fault:OutOfFootprint";
        break;
      }
      state.reg(Gpr::Rsp) = sp + 8;
      if (addr == image.exit_sentinel) {
        out.ok = true;
        out.stop_reason = "exit";
        break;
      }
      auto idx = image.index_of_addr(addr);
      if (!idx) {
        out.stop_reason = "bad-return";
        break;
      }
      pc = *idx;
      continue;
    }

    auto resolve_target = [&]() -> std::optional<size_t> {
      if (i.indirect) {
        uint64_t v = 0;
        if (i.ops[0].kind == Operand::Kind::Reg) {
          v = state.reg(i.ops[0].reg.parent);
        } else {
          uint64_t addr =
              static_cast<uint64_t>(static_cast<int64_t>(i.ops[0].mem.disp));
          if (i.ops[0].mem.base) addr += state.reg(i.ops[0].mem.base->parent);
          if (i.ops[0].mem.index)
            addr += state.reg(i.ops[0].mem.index->parent) * i.ops[0].mem.scale;
          if (!read_u64(addr, v)) return std::nullopt;
        }
        return image.index_of_addr(v);
      }
      auto it = image.code_labels.find(i.ops[0].sym);
      if (it == image.code_labels.end()) return std::nullopt;
      return it->second;
    };

    if (i.mn == Mnemonic::Jmp) {
      auto t = resolve_target();
      if (!t) {
        out.stop_reason = i.indirect ? "bad-jump" : "external-jump:" + i.ops[0].sym;
        break;
      }
      pc = *t;
      continue;
    }
    if (is_cond_jump(i.mn)) {
      if (eval_cond(cond_of(i.mn), state.flags)) {
        auto t = resolve_target();
        if (!t) {
          out.stop_reason = "external-jump:" + i.ops[0].sym;
          break;
        }
        pc = *t;
      } else {
        ++pc;
      }
      continue;
    }
    // call
    auto t = resolve_target();
    if (!t) {
      out.stop_reason = i.indirect ? "bad-call" : "external-call:" + i.ops[0].sym;
      break;
    }
    uint64_t nsp = state.reg(Gpr::Rsp) - 8;
    if (nsp < state.stack_lo) {
      out.stop_reason = "fault:StackOverflow";
      break;
    }
    uint64_t ra = image.addr_of_index(pc + 1);
    for (int k = 0; k < 8; ++k)
      state.mem[nsp + k] = static_cast<uint8_t>(ra >> (8 * k));
    state.reg(Gpr::Rsp) = nsp;
    pc = *t;
  }
  if (out.steps >= max_steps && out.stop_reason.empty())
    out.stop_reason = "step-budget";
  out.state = std::move(state);
  return out;
}

}  // namespace divasm
