#include "divasm/liveness.hpp"

#include <json.hpp>
#include <sstream>

#include "divasm/emulator.hpp"

namespace divasm {

uint8_t cond_flag_uses(Cond c) {
  switch (c) {
    case Cond::E:
    case Cond::Ne: return FlagZF;
    case Cond::L:
    case Cond::Ge: return FlagSF | FlagOF;
    case Cond::Le:
    case Cond::G: return FlagZF | FlagSF | FlagOF;
    case Cond::B:
    case Cond::Ae: return FlagCF;
    case Cond::Be:
    case Cond::A: return FlagCF | FlagZF;
    case Cond::S:
    case Cond::Ns: return FlagSF;
  }
  return 0;
}

namespace {

std::string hex_disp(int64_t v) {
  std::ostringstream os;
  if (v < 0)
    os << "-0x" << std::hex << static_cast<uint64_t>(-v);
  else
    os << "+0x" << std::hex << static_cast<uint64_t>(v);
  return os.str();
}

}  // namespace

std::string MemAccess::key() const {
  std::string s = "mem[";
  if (base) s += gpr_name(*base);
  if (index) {
    if (base) s += "+";
    s += gpr_name(*index) + "*" + std::to_string(static_cast<int>(scale));
  }
  s += hex_disp(disp);
  s += ":" + std::to_string(static_cast<int>(bytes)) + "]";
  return s;
}

namespace {

struct Walk {
  LiveSet ls;
  std::set<Gpr> defined;   // registers fully defined so far
  uint8_t flags_defined = 0;
  std::set<std::string> mem_written;  // slot keys written so far
  int64_t rsp_delta = 0;
  bool rsp_tracked = true;

  void use_reg(Gpr g) {
    if (!defined.count(g)) ls.read_regs.insert(g);
  }
  void def_reg(Gpr g) {
    defined.insert(g);
    ls.written_regs.insert(g);
  }
  void use_flags(uint8_t mask) {
    ls.read_flags |= mask & ~flags_defined;
  }
  void def_flags(uint8_t mask) {
    flags_defined |= mask;
    ls.written_flags |= mask;
  }

  void record_mem(MemAccess a) {
    if (a.is_read && !mem_written.count(a.key())) {
      // stays a read; a prior write to the same slot satisfies it locally
    }
    if (a.is_read && mem_written.count(a.key())) a.is_read = false;
    if (!a.is_read && !a.is_write) {
      // fully satisfied read: still record the slot for footprint purposes
      a.is_read = false;
      a.is_write = false;
    }
    if (a.is_write) mem_written.insert(a.key());
    for (auto& m : ls.mem) {
      if (m.same_slot(a)) {
        m.is_read |= a.is_read;
        m.is_write |= a.is_write;
        return;
      }
    }
    ls.mem.push_back(a);
  }

  // resolve a memory operand to a symbolic slot; returns nullopt when the
  // base/index was defined in-block (location unnameable)
  std::optional<MemAccess> slot_of(const MemRef& m, uint8_t bytes) {
    MemAccess a;
    a.scale = m.scale;
    a.disp = m.disp;
    a.bytes = bytes;
    if (m.base) {
      Gpr g = m.base->parent;
      use_reg(g);
      if (g == Gpr::Rsp) {
        if (!rsp_tracked) return std::nullopt;
        a.base = Gpr::Rsp;
        a.disp += rsp_delta;
      } else if (defined.count(g)) {
        return std::nullopt;
      } else {
        a.base = g;
      }
    }
    if (m.index) {
      Gpr g = m.index->parent;
      use_reg(g);
      if (defined.count(g) || g == Gpr::Rsp) return std::nullopt;
      a.index = g;
    }
    return a;
  }

  void mem_operand(const MemRef& m, uint8_t bytes, bool read, bool write) {
    auto a = slot_of(m, bytes);
    if (!a) {
      ls.indirect_pointer = true;
      return;
    }
    a->is_read = read;
    a->is_write = write;
    record_mem(*a);
  }

  void src_operand(const Operand& o, uint8_t w) {
    switch (o.kind) {
      case Operand::Kind::Reg: use_reg(o.reg.parent); break;
      case Operand::Kind::Mem: mem_operand(o.mem, w / 8, true, false); break;
      default: break;  // Imm/SymAddr/Label read nothing
    }
  }

  // destination register def; widths below 32 merge into the old value
  void dst_reg(const Register& r, bool reads_old) {
    if (reads_old || r.width <= 16) use_reg(r.parent);
    def_reg(r.parent);
  }
};

}  // namespace

LiveSet compute_live_sets(const BasicBlock& b) {
  Walk w;
  for (const auto& i : b.insns) {
    const uint8_t width = i.width;
    switch (i.mn) {
      case Mnemonic::Mov:
      case Mnemonic::Movabs: {
        w.src_operand(i.ops[0], width);
        if (i.ops[1].kind == Operand::Kind::Reg)
          w.dst_reg(i.ops[1].reg, false);
        else
          w.mem_operand(i.ops[1].mem, width / 8, false, true);
        break;
      }
      case Mnemonic::Lea: {
        // address computation only: base/index register uses, no memory access
        if (i.ops[0].mem.base) w.use_reg(i.ops[0].mem.base->parent);
        if (i.ops[0].mem.index) w.use_reg(i.ops[0].mem.index->parent);
        bool was_rsp_lea = i.ops[0].mem.base &&
                           i.ops[0].mem.base->parent == Gpr::Rsp &&
                           !i.ops[0].mem.index;
        int64_t lea_disp = i.ops[0].mem.disp;
        Gpr dst = i.ops[1].reg.parent;
        w.dst_reg(i.ops[1].reg, false);
        if (dst == Gpr::Rsp) {
          if (was_rsp_lea && w.rsp_tracked && i.ops[1].reg.width == 64)
            w.rsp_delta += lea_disp;
          else
            w.rsp_tracked = false;
        }
        break;
      }
      case Mnemonic::Add:
      case Mnemonic::Sub:
      case Mnemonic::Xor:
      case Mnemonic::And:
      case Mnemonic::Or: {
        bool zero_idiom =
            (i.mn == Mnemonic::Xor || i.mn == Mnemonic::Sub) && width >= 32 &&
            i.ops[0].kind == Operand::Kind::Reg &&
            i.ops[1].kind == Operand::Kind::Reg &&
            i.ops[0].reg.parent == i.ops[1].reg.parent;
        if (!zero_idiom) w.src_operand(i.ops[0], width);
        if (i.ops[1].kind == Operand::Kind::Reg) {
          bool rsp_adjust = i.ops[1].reg.parent == Gpr::Rsp &&
                            (i.mn == Mnemonic::Add || i.mn == Mnemonic::Sub) &&
                            i.ops[0].kind == Operand::Kind::Imm && width == 64;
          w.dst_reg(i.ops[1].reg, !zero_idiom);
          if (i.ops[1].reg.parent == Gpr::Rsp) {
            if (rsp_adjust && w.rsp_tracked)
              w.rsp_delta += i.mn == Mnemonic::Add ? i.ops[0].imm : -i.ops[0].imm;
            else
              w.rsp_tracked = false;
          }
        } else {
          w.mem_operand(i.ops[1].mem, width / 8, true, true);
        }
        w.def_flags(kAllFlags);
        break;
      }
      case Mnemonic::Cmp:
      case Mnemonic::Test: {
        w.src_operand(i.ops[0], width);
        w.src_operand(i.ops[1], width);
        w.def_flags(kAllFlags);
        break;
      }
      case Mnemonic::Inc:
      case Mnemonic::Dec: {
        if (i.ops[0].kind == Operand::Kind::Reg) {
          w.dst_reg(i.ops[0].reg, true);
          if (i.ops[0].reg.parent == Gpr::Rsp) w.rsp_tracked = false;
        } else {
          w.mem_operand(i.ops[0].mem, width / 8, true, true);
        }
        w.def_flags(FlagPF | FlagZF | FlagSF | FlagOF);  // CF preserved
        break;
      }
      case Mnemonic::Neg:
      case Mnemonic::Not: {
        if (i.ops[0].kind == Operand::Kind::Reg) {
          w.dst_reg(i.ops[0].reg, true);
          if (i.ops[0].reg.parent == Gpr::Rsp) w.rsp_tracked = false;
        } else {
          w.mem_operand(i.ops[0].mem, width / 8, true, true);
        }
        if (i.mn == Mnemonic::Neg) w.def_flags(kAllFlags);
        break;
      }
      case Mnemonic::Shl:
      case Mnemonic::Shr:
      case Mnemonic::Sar: {
        bool by_cl = i.ops[0].kind == Operand::Kind::Reg;
        if (by_cl) w.use_reg(Gpr::Rcx);
        if (i.ops[1].kind == Operand::Kind::Reg) {
          w.dst_reg(i.ops[1].reg, true);
          if (i.ops[1].reg.parent == Gpr::Rsp) w.rsp_tracked = false;
        } else {
          w.mem_operand(i.ops[1].mem, width / 8, true, true);
        }
        if (by_cl) {
          // count may be zero: flags pass through, so they are read and
          // (possibly) written
          w.use_flags(kAllFlags);
          w.def_flags(kAllFlags);
        } else if (i.ops[0].imm == 0) {
          // no flag effect
        } else if (i.ops[0].imm == 1) {
          w.def_flags(kAllFlags);
        } else {
          w.def_flags(FlagCF | FlagPF | FlagZF | FlagSF);  // OF undefined -> unchanged
        }
        break;
      }
      case Mnemonic::Push: {
        w.use_reg(Gpr::Rsp);
        w.src_operand(i.ops[0], 64);
        if (w.rsp_tracked) {
          MemAccess a;
          a.base = Gpr::Rsp;
          a.disp = w.rsp_delta - 8;
          a.bytes = 8;
          a.is_write = true;
          w.record_mem(a);
          w.mem_written.insert(a.key());
          w.rsp_delta -= 8;
        } else {
          w.ls.indirect_pointer = true;
        }
        w.def_reg(Gpr::Rsp);
        break;
      }
      case Mnemonic::Pop: {
        w.use_reg(Gpr::Rsp);
        if (w.rsp_tracked) {
          MemAccess a;
          a.base = Gpr::Rsp;
          a.disp = w.rsp_delta;
          a.bytes = 8;
          a.is_read = true;
          w.record_mem(a);
          w.rsp_delta += 8;
        } else {
          w.ls.indirect_pointer = true;
        }
        if (i.ops[0].kind == Operand::Kind::Reg)
          w.dst_reg(i.ops[0].reg, false);
        else
          w.mem_operand(i.ops[0].mem, 8, false, true);
        w.def_reg(Gpr::Rsp);
        break;
      }
      case Mnemonic::Ret:
      case Mnemonic::Jmp:
      case Mnemonic::Call:
        break;  // terminators execute in the successor's context
      default:
        if (is_cond_jump(i.mn)) w.use_flags(cond_flag_uses(cond_of(i.mn)));
        break;
    }
  }

  // distinct base identities with at least one write: conservative may-alias
  std::set<std::string> bases;
  bool any_write = false;
  for (auto& m : w.ls.mem) {
    std::string id = m.base ? gpr_name(*m.base) : "-";
    if (m.index) id += "+" + gpr_name(*m.index);
    bases.insert(id);
    any_write |= m.is_write;
  }
  w.ls.may_alias = bases.size() > 1 && any_write;
  return w.ls;
}

std::string liveset_to_json(const LiveSet& ls) {
  nlohmann::json j;
  auto reads = nlohmann::json::array();
  auto writes = nlohmann::json::array();
  for (Gpr g : ls.read_regs) reads.push_back(gpr_name(g));
  for (Gpr g : ls.written_regs) writes.push_back(gpr_name(g));
  for (uint8_t f : {FlagCF, FlagPF, FlagZF, FlagSF, FlagOF}) {
    if (ls.read_flags & f) reads.push_back(flag_name(static_cast<FlagBit>(f)));
    if (ls.written_flags & f) writes.push_back(flag_name(static_cast<FlagBit>(f)));
  }
  for (const auto& m : ls.mem) {
    if (m.is_read) reads.push_back(m.key());
    if (m.is_write) writes.push_back(m.key());
  }
  j["reads"] = std::move(reads);
  j["writes"] = std::move(writes);
  j["may_alias"] = ls.may_alias;
  j["indirect_pointer"] = ls.indirect_pointer;
  return j.dump(2);
}

}  // namespace divasm
