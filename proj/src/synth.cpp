#include "divasm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace divasm {

SynthesisUnit to_synthesis_unit(const BasicBlock& b, const LiveSet& live) {
  if (!b.diversifiable)
    throw NonDiversifiable("block " + b.label + " is not diversifiable");
  if (b.term.kind == Terminator::Kind::FallThrough)
    throw NonDiversifiable("block " + b.label +
                           " is a fallthrough fragment (flags may be live-out)");
  if (b.term.indirect)
    throw NonDiversifiable("block " + b.label + " ends in an indirect transfer");
  if (live.indirect_pointer)
    throw NonDiversifiable("block " + b.label + " computes pointers in-block");

  SynthesisUnit u;
  u.block = b;
  u.body = b.body();
  Instruction ret;
  ret.mn = Mnemonic::Ret;
  ret.width = 64;
  u.body.push_back(ret);
  u.original_terminator = b.insns.back();
  u.check_flags = b.term.kind == Terminator::Kind::CondJmp;
  u.live = live;
  u.size_budget = encoded_length(b.insns);
  return u;
}

std::string canonical_text(const std::vector<Instruction>& body) {
  std::string out;
  for (const auto& i : body) {
    out += render_instruction(i);
    out += '\n';
  }
  return out;
}

namespace {

// restored length: body without the trailing ret, plus the original terminator
int restored_length(const std::vector<Instruction>& body,
                    const Instruction& original_terminator) {
  int n = encoded_length(body);
  if (!body.empty() && body.back().mn == Mnemonic::Ret) {
    n -= 1;  // trailing ret stands in for the terminator
    n += encoded_length(original_terminator);
  }
  return n;
}

}  // namespace

CostRecord cost(const std::vector<Instruction>& candidate_body,
                const SynthesisUnit& unit, const std::vector<TestCase>& suite,
                const SynthesisConfig& cfg, const ProgramImage* image,
                uint64_t bail_above) {
  CostRecord rec;
  rec.size_excess = std::max(
      0, restored_length(candidate_body, unit.original_terminator) - unit.size_budget);
  rec.total = cfg.size_penalty_weight * static_cast<uint64_t>(rec.size_excess);

  int fuel = static_cast<int>(candidate_body.size()) + 4;
  for (const auto& tc : suite) {
    ExecResult r = run_block(tc.input, candidate_body, fuel, image);
    uint64_t d;
    if (!r.normal())
      d = cfg.fault_penalty;
    else
      d = project_and_compare(tc.expected, r.state, unit.check_flags,
                              cfg.flag_weight);
    rec.correctness += d;
    rec.total += d;
    if (rec.total > bail_above) break;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Proposal machinery
// ---------------------------------------------------------------------------

namespace {

struct Pools {
  std::vector<int64_t> imms;
  std::vector<Register> regs64;  // width variants derived on use
  std::vector<MemRef> mems;
  std::vector<std::string> sym_addrs;
  std::vector<Mnemonic> insert_mns;
};

Pools build_pools(const SynthesisUnit& unit) {
  Pools p;
  std::set<int64_t> imms{0, 1, 2, 4, 8, 16, 32, 64, 128, -1, -2, -4, -8, 0x7f, -0x80};
  std::set<Gpr> regs;
  std::set<std::string> mem_keys, syms;

  for (const auto& i : unit.body) {
    for (const auto& o : i.ops) {
      switch (o.kind) {
        case Operand::Kind::Imm:
          imms.insert(o.imm);
          imms.insert(-o.imm);
          break;
        case Operand::Kind::Reg:
          regs.insert(o.reg.parent);
          break;
        case Operand::Kind::Mem:
          if (mem_keys.insert(render_operand(o)).second) p.mems.push_back(o.mem);
          if (o.mem.base) regs.insert(o.mem.base->parent);
          if (o.mem.index) regs.insert(o.mem.index->parent);
          break;
        case Operand::Kind::SymAddr:
          if (syms.insert(o.sym).second) p.sym_addrs.push_back(o.sym);
          break;
        default:
          break;
      }
    }
  }
  for (Gpr g : unit.live.read_regs) regs.insert(g);
  for (Gpr g : unit.live.written_regs) regs.insert(g);

  p.imms.assign(imms.begin(), imms.end());
  for (Gpr g : regs) p.regs64.push_back(Register{g, 64});
  p.insert_mns = {Mnemonic::Mov, Mnemonic::Add, Mnemonic::Sub, Mnemonic::Xor,
                  Mnemonic::And, Mnemonic::Or,  Mnemonic::Inc, Mnemonic::Dec,
                  Mnemonic::Neg, Mnemonic::Not, Mnemonic::Test, Mnemonic::Cmp,
                  Mnemonic::Shl, Mnemonic::Shr, Mnemonic::Sar, Mnemonic::Push,
                  Mnemonic::Pop, Mnemonic::Lea};
  return p;
}

struct Proposer {
  const SynthesisUnit& unit;
  const SynthesisConfig& cfg;
  Pools pools;
  std::mt19937_64& rng;

  Register pick_reg(uint8_t width) {
    const Register& r = pools.regs64[rng() % pools.regs64.size()];
    return Register{r.parent, width};
  }
  int64_t pick_imm(uint8_t width) {
    for (int tries = 0; tries < 8; ++tries) {
      int64_t v = pools.imms[rng() % pools.imms.size()];
      if (width >= 64) return v;
      if (width == 32 && v >= INT32_MIN && v <= static_cast<int64_t>(UINT32_MAX))
        return v;
      if (width == 16 && v >= -32768 && v <= 65535) return v;
      if (width == 8 && v >= -128 && v <= 255) return v;
    }
    return 1;
  }

  // one random well-formed non-control instruction from the pools
  std::optional<Instruction> random_instruction() {
    if (pools.regs64.empty()) return std::nullopt;
    Instruction i;
    i.mn = pools.insert_mns[rng() % pools.insert_mns.size()];
    static const uint8_t widths[] = {64, 64, 32, 32, 16, 8};
    uint8_t w = widths[rng() % 6];
    switch (i.mn) {
      case Mnemonic::Inc:
      case Mnemonic::Dec:
      case Mnemonic::Neg:
      case Mnemonic::Not:
        i.width = w;
        i.ops = {Operand::make_reg(pick_reg(w))};
        break;
      case Mnemonic::Push:
      case Mnemonic::Pop:
        i.width = 64;
        i.ops = {Operand::make_reg(pick_reg(64))};
        break;
      case Mnemonic::Shl:
      case Mnemonic::Shr:
      case Mnemonic::Sar:
        i.width = w;
        i.ops = {Operand::make_imm(1 + static_cast<int64_t>(rng() % (w - 1))),
                 Operand::make_reg(pick_reg(w))};
        break;
      case Mnemonic::Lea: {
        if (pools.mems.empty()) return std::nullopt;
        i.width = w == 8 ? 64 : w;
        i.ops = {Operand::make_mem(pools.mems[rng() % pools.mems.size()]),
                 Operand::make_reg(pick_reg(i.width))};
        break;
      }
      default: {  // binary group
        i.width = w;
        int shape = rng() % 4;
        Operand dst = Operand::make_reg(pick_reg(w));
        Operand src;
        if (shape == 0)
          src = Operand::make_reg(pick_reg(w));
        else if (shape == 1)
          src = Operand::make_imm(pick_imm(w));
        else if (shape == 2 && !pools.mems.empty())
          src = Operand::make_mem(pools.mems[rng() % pools.mems.size()]);
        else if (shape == 3 && !pools.mems.empty()) {
          // reg -> mem store
          i.ops = {Operand::make_reg(pick_reg(w)),
                   Operand::make_mem(pools.mems[rng() % pools.mems.size()])};
          if (validate_instruction(i)) return std::nullopt;
          return i;
        } else {
          src = Operand::make_reg(pick_reg(w));
        }
        i.ops = {src, dst};
        break;
      }
    }
    if (validate_instruction(i)) return std::nullopt;
    return i;
  }

  bool substitute_operand(Instruction& i) {
    if (i.ops.empty()) return false;
    size_t slot = rng() % i.ops.size();
    Operand& o = i.ops[slot];
    switch (o.kind) {
      case Operand::Kind::Reg: {
        if (i.mn == Mnemonic::Shl || i.mn == Mnemonic::Shr || i.mn == Mnemonic::Sar)
          if (slot == 0) return false;  // %cl count is fixed
        uint8_t w = o.reg.width;
        if (rng() % 3 == 0) w = rng() % 2 ? 32 : 64;  // width flip
        o = Operand::make_reg(pick_reg(w));
        if (w != i.width) {
          Instruction probe = i;
          probe.width = w;
          if (!validate_instruction(probe)) i.width = w;
        }
        break;
      }
      case Operand::Kind::Imm:
        o = Operand::make_imm(pick_imm(i.width ? i.width : 64));
        break;
      case Operand::Kind::Mem:
        if (pools.mems.empty()) return false;
        o = Operand::make_mem(pools.mems[rng() % pools.mems.size()]);
        break;
      case Operand::Kind::SymAddr:
        if (pools.sym_addrs.empty()) return false;
        o = Operand::make_sym_addr(pools.sym_addrs[rng() % pools.sym_addrs.size()]);
        break;
      case Operand::Kind::Label:
        return false;
    }
    return !validate_instruction(i).has_value();
  }

  bool substitute_opcode(Instruction& i) {
    static const Mnemonic kGroups[][8] = {
        {Mnemonic::Mov, Mnemonic::Add, Mnemonic::Sub, Mnemonic::Xor,
         Mnemonic::And, Mnemonic::Or, Mnemonic::Cmp, Mnemonic::Test},
        {Mnemonic::Inc, Mnemonic::Dec, Mnemonic::Neg, Mnemonic::Not,
         Mnemonic::Inc, Mnemonic::Dec, Mnemonic::Neg, Mnemonic::Not},
        {Mnemonic::Shl, Mnemonic::Shr, Mnemonic::Sar, Mnemonic::Shl,
         Mnemonic::Shr, Mnemonic::Sar, Mnemonic::Shl, Mnemonic::Sar},
    };
    int group = -1;
    for (int g = 0; g < 3; ++g)
      for (Mnemonic m : kGroups[g])
        if (i.mn == m) group = g;
    if (group < 0) return false;
    Mnemonic next = kGroups[group][rng() % 8];
    if (next == i.mn) return false;
    Mnemonic old = i.mn;
    i.mn = next;
    if (validate_instruction(i)) {
      i.mn = old;
      return false;
    }
    return true;
  }

  // one proposal; positions exclude the trailing ret
  std::vector<Instruction> propose(const std::vector<Instruction>& cur) {
    std::vector<Instruction> body = cur;
    int editable = static_cast<int>(body.size()) - 1;
    int weight_sum = 0;
    for (int w : cfg.move_weights) weight_sum += w;
    for (int tries = 0; tries < 4; ++tries) {
      int pickw = static_cast<int>(rng() % std::max(weight_sum, 1));
      int move = 0;
      for (; move < 4; ++move) {
        pickw -= cfg.move_weights[move];
        if (pickw < 0) break;
      }
      if (editable == 0 && move != 3) move = 3;  // only insertion applies

      switch (move) {
        case 0: {  // opcode
          Instruction& i = body[rng() % editable];
          if (substitute_opcode(i)) return body;
          break;
        }
        case 1: {  // operand
          Instruction& i = body[rng() % editable];
          if (substitute_operand(i)) return body;
          break;
        }
        case 2: {  // adjacent swap
          if (editable < 2) break;
          int k = static_cast<int>(rng() % (editable - 1));
          std::swap(body[k], body[k + 1]);
          return body;
        }
        case 3: {  // insert
          if (auto insn = random_instruction()) {
            int at = static_cast<int>(rng() % (editable + 1));
            body.insert(body.begin() + at, *insn);
            return body;
          }
          break;
        }
        default: {  // delete
          if (editable < 1) break;
          int k = static_cast<int>(rng() % editable);
          body.erase(body.begin() + k);
          return body;
        }
      }
      body = cur;  // failed attempt: reset and retry
    }
    return cur;
  }
};

}  // namespace

int input_entropy_bits(const SynthesisUnit& unit) {
  std::set<Gpr> pointers;
  for (const auto& m : unit.live.mem) {
    if (m.base && *m.base != Gpr::Rsp) pointers.insert(*m.base);
    if (m.index) pointers.insert(*m.index);
  }
  int bits = 0;
  for (Gpr g : unit.live.read_regs)
    if (g != Gpr::Rsp && !pointers.count(g)) bits += 64;
  for (const auto& m : unit.live.mem)
    if (m.is_read) bits += 8 * m.bytes;
  if (unit.check_flags || unit.live.read_flags) bits += 5;
  return bits;
}

bool exhaustive_check(const SynthesisUnit& unit,
                      const std::vector<Instruction>& candidate_body,
                      const SynthesisConfig& cfg, const ProgramImage* image) {
  // enumerate flags x read memory bytes; sample the untouched remainder
  std::vector<const MemAccess*> read_mem;
  for (const auto& m : unit.live.mem)
    if (m.is_read) read_mem.push_back(&m);
  int mem_bytes = 0;
  for (auto* m : read_mem) mem_bytes += m->bytes;
  if (mem_bytes > 1) return true;  // beyond the enumerable regime (entropy gate)

  std::mt19937_64 rng(cfg.seed ^ 0xE4A);
  int fuel = static_cast<int>(
                 std::max(unit.block.insns.size(), candidate_body.size())) + 4;
  for (int fill = 0; fill < 3; ++fill) {
    MachineState base = make_input_state(unit.block, unit.live, rng, image);
    for (int flags = 0; flags < 32; ++flags) {
      for (int byte = 0; byte < (mem_bytes ? 256 : 1); ++byte) {
        MachineState in = base;
        in.flags = static_cast<uint8_t>(flags);
        if (mem_bytes) {
          const MemAccess* m = read_mem[0];
          uint64_t addr = static_cast<uint64_t>(m->disp);
          if (m->base) addr += in.reg(*m->base);
          if (m->index) addr += in.reg(*m->index) * m->scale;
          in.mem[addr] = static_cast<uint8_t>(byte);
        }
        ExecResult orig = run_block(in, unit.block.insns, fuel, image);
        ExecResult cand = run_block(in, candidate_body, fuel, image);
        if (!orig.normal() || !cand.normal()) return false;
        if (project_and_compare(orig.state, cand.state, unit.check_flags,
                                cfg.flag_weight) != 0)
          return false;
      }
    }
  }
  return true;
}

std::optional<RewriteCandidate> mcmc_search(const SynthesisUnit& unit,
                                            const std::vector<TestCase>& suite,
                                            const SynthesisConfig& cfg,
                                            const std::set<std::string>& forbidden,
                                            const ProgramImage* image) {
  if (suite.empty()) throw std::invalid_argument("mcmc_search: empty suite");

  std::mt19937_64 rng(cfg.seed);
  Pools pools = build_pools(unit);

  auto validate = [&](const std::vector<Instruction>& body,
                      const CostRecord& c) -> std::optional<RewriteCandidate> {
    // fresh held-out suite, larger and independently seeded
    auto holdout = gen_random_cases(
        unit.block, unit.live,
        static_cast<int>(suite.size()) * cfg.holdout_factor,
        cfg.seed ^ 0x401D0117ull, image);
    CostRecord hc = cost(body, unit, holdout, cfg, image);
    if (hc.total != 0) return std::nullopt;
    if (input_entropy_bits(unit) <= 16 &&
        !exhaustive_check(unit, body, cfg, image))
      return std::nullopt;
    RewriteCandidate rc;
    rc.body = body;
    rc.cost = c;
    rc.validated = true;
    rc.canonical = canonical_text(body);
    return rc;
  };

  for (int restart = 0; restart < std::max(cfg.restarts, 1); ++restart) {
    std::vector<Instruction> cur = unit.body;
    CostRecord cur_cost = cost(cur, unit, suite, cfg, image);
    Proposer proposer{unit, cfg, pools, rng};

    for (long iter = 0; iter < cfg.iterations; ++iter) {
      std::vector<Instruction> prop = proposer.propose(cur);
      if (prop == cur) continue;  // no-op proposal
      uint64_t bail = cur_cost.total + 64;
      CostRecord pc = cost(prop, unit, suite, cfg, image, bail);

      if (pc.total == 0) {
        std::string canon = canonical_text(prop);
        if (!forbidden.count(canon)) {
          if (auto rc = validate(prop, pc)) return rc;
        }
      }
      bool accept;
      if (pc.total <= cur_cost.total) {
        accept = true;
      } else {
        double p = std::exp(-cfg.beta * static_cast<double>(pc.total - cur_cost.total));
        accept = std::generate_canonical<double, 53>(rng) < p;
      }
      if (accept) {
        cur = std::move(prop);
        cur_cost = pc;
      }
    }
  }
  return std::nullopt;
}

NRewriteResult generate_n_rewrites(const BasicBlock& b, const LiveSet& live,
                                   const std::vector<TestCase>& suite,
                                   const SynthesisConfig& cfg,
                                   const ProgramImage* image) {
  SynthesisUnit unit = to_synthesis_unit(b, live);
  NRewriteResult out;
  out.requested = cfg.n_rewrites;

  std::set<std::string> forbidden{canonical_text(unit.body)};

  for (int k = 0; k < cfg.n_rewrites; ++k) {
    SynthesisConfig attempt = cfg;
    attempt.seed = cfg.seed ^ (0x9E3779B97F4A7C15ull * (k + 1));
    auto rc = mcmc_search(unit, suite, attempt, forbidden, image);
    if (!rc) continue;
    forbidden.insert(rc->canonical);

    // restore the original terminator verbatim
    RewriteCandidate restored = *rc;
    restored.body.back() = unit.original_terminator;

    // the restored body must still pass the suite against the original block
    CostRecord final_check = cost(restored.body, unit, suite, cfg, image);
    if (final_check.total != 0) continue;  // restoration bug guard
    out.rewrites.push_back(std::move(restored));
  }
  return out;
}

}  // namespace divasm
