#include "divasm/taint.hpp"

#include <json.hpp>

#include <algorithm>
#include <deque>

namespace divasm {

namespace {

const Gpr kArgRegs[6] = {Gpr::Rdi, Gpr::Rsi, Gpr::Rdx, Gpr::Rcx, Gpr::R8, Gpr::R9};

const std::map<std::string, int>& builtin_arg_counts() {
  static const std::map<std::string, int> t = {
      {"strcpy", 2},  {"strcat", 2}, {"memcpy", 3}, {"sprintf", 2},
      {"gets", 1},    {"memmove", 3}, {"memset", 3}, {"printf", 1},
      {"puts", 1},    {"read", 3},   {"recv", 4},   {"fgets", 3},
      {"getenv", 1},  {"system", 1}, {"execve", 3}, {"execlp", 2},
      {"popen", 2},   {"mprotect", 3},
  };
  return t;
}

}  // namespace

int examined_arg_count(const std::string& callee, const TaintOptions& opts) {
  if (auto it = opts.arg_counts.find(callee); it != opts.arg_counts.end())
    return it->second;
  if (auto it = builtin_arg_counts().find(callee); it != builtin_arg_counts().end())
    return it->second;
  return opts.default_arg_count;
}

std::vector<ObservationPoint> default_observation_points(const Cfg& cfg,
                                                         const TaintOptions& opts) {
  std::vector<ObservationPoint> points;
  for (const auto& b : cfg.blocks) {
    if (b.term.kind != Terminator::Kind::Call || b.term.indirect) continue;
    if (cfg.label_map.count(b.term.target)) continue;  // defined in-program
    ObservationPoint p;
    p.block = b.id;
    p.index = static_cast<int>(b.insns.size()) - 1;
    p.callee = b.term.target;
    int n = std::clamp(examined_arg_count(p.callee, opts), 0, 6);
    for (int k = 0; k < n; ++k) p.args.push_back(kArgRegs[k]);
    points.push_back(std::move(p));
  }
  return points;
}

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

namespace {

struct AbsVal {
  enum class K : uint8_t { Top, Imm, Sym, StackAddr };
  K k = K::Top;
  int64_t n = 0;    // Imm value / StackAddr offset / Sym offset
  std::string sym;  // Sym

  bool operator==(const AbsVal&) const = default;
  static AbsVal top() { return {}; }
  static AbsVal imm(int64_t v) { return {K::Imm, v, ""}; }
  static AbsVal symbol(std::string s, int64_t off = 0) {
    return {K::Sym, off, std::move(s)};
  }
  static AbsVal stack(int64_t off) { return {K::StackAddr, off, ""}; }
};

struct SlotKey {
  bool global = false;
  int64_t off = 0;     // stack slot offset from function-entry rsp
  std::string sym;     // global symbol

  auto operator<=>(const SlotKey&) const = default;
  static SlotKey stack(int64_t o) { return {false, o, ""}; }
  static SlotKey glob(std::string s) { return {true, 0, std::move(s)}; }
};

struct TState {
  std::array<uint8_t, 16> taint{};
  std::array<AbsVal, 16> val{};
  std::map<SlotKey, bool> mem;
  bool reached = false;

  bool reg_taint(Gpr g) const { return taint[static_cast<size_t>(g)]; }
  void set_taint(Gpr g, bool t) { taint[static_cast<size_t>(g)] = t; }
  AbsVal& v(Gpr g) { return val[static_cast<size_t>(g)]; }
  const AbsVal& v(Gpr g) const { return val[static_cast<size_t>(g)]; }

  bool operator==(const TState&) const = default;
};

TState join(const TState& a, const TState& b) {
  if (!a.reached) return b;
  if (!b.reached) return a;
  TState o;
  o.reached = true;
  for (int k = 0; k < 16; ++k) {
    o.taint[k] = a.taint[k] || b.taint[k];
    o.val[k] = a.val[k] == b.val[k] ? a.val[k] : AbsVal::top();
  }
  o.mem = a.mem;
  for (auto& [key, t] : b.mem) {
    auto it = o.mem.find(key);
    if (it == o.mem.end())
      o.mem[key] = t;
    else
      it->second = it->second || t;
  }
  return o;
}

struct FnSummary {
  std::array<uint8_t, 16> exit_taint{};
  std::map<std::string, bool> globals;  // taint of global symbols on exit
};

constexpr Gpr kCallerSaved[] = {Gpr::Rax, Gpr::Rcx, Gpr::Rdx, Gpr::Rsi,
                                Gpr::Rdi, Gpr::R8,  Gpr::R9,  Gpr::R10,
                                Gpr::R11};

class Rda {
 public:
  Rda(const Cfg& cfg, const std::vector<ObservationPoint>& points,
      const TaintOptions& opts)
      : cfg_(cfg), opts_(opts) {
    for (const auto& p : points) points_.emplace(std::make_pair(p.block, p.index), &p);
    input_callees_.insert(opts.input_callees.begin(), opts.input_callees.end());
  }

  void run(const std::string& entry) {
    std::array<uint8_t, 6> args{};
    if (opts_.entry_args_tainted) {
      args[0] = 1;  // %rdi
      args[1] = 1;  // %rsi
    }
    analyze_function(entry, args, {}, 1);
  }

  std::vector<PointResult> results(const std::vector<ObservationPoint>& points) const {
    std::vector<PointResult> out;
    for (const auto& p : points) {
      PointResult r;
      r.point = p;
      auto key = std::make_pair(p.block, p.index);
      auto it = observations_.find(key);
      for (Gpr g : p.args)
        r.tainted[g] = it != observations_.end() && it->second.count(g)
                           ? it->second.at(g)
                           : false;
      if (auto w = point_warnings_.find(key); w != point_warnings_.end())
        r.warnings = w->second;
      out.push_back(std::move(r));
    }
    return out;
  }

  const std::set<std::string>& warnings() const { return active_warnings_; }

 private:
  const Cfg& cfg_;
  const TaintOptions& opts_;
  std::map<std::pair<int, int>, const ObservationPoint*> points_;
  std::set<std::string> input_callees_;
  std::map<std::pair<int, int>, std::map<Gpr, bool>> observations_;
  std::map<std::pair<int, int>, std::set<std::string>> point_warnings_;
  std::set<std::string> active_warnings_;  // sticky across the whole analysis
  std::vector<std::string> call_stack_;
  std::map<std::string, FnSummary> memo_;

  bool is_internal(const std::string& sym) const {
    return cfg_.label_map.count(sym) != 0;
  }

  void warn(const std::string& w) { active_warnings_.insert(w); }

  // intra-procedural successors
  std::vector<int> successors(int block) const {
    std::vector<int> out;
    for (const auto& e : cfg_.edges) {
      if (e.from != block || e.to < 0) continue;
      if (e.kind == EdgeKind::Call) continue;
      out.push_back(e.to);
    }
    return out;
  }

  static std::optional<SlotKey> resolve(const TState& st, const MemRef& m) {
    if (m.index) return std::nullopt;
    if (!m.base) return std::nullopt;
    const AbsVal& base = st.v(m.base->parent);
    if (base.k == AbsVal::K::StackAddr) return SlotKey::stack(base.n + m.disp);
    if (base.k == AbsVal::K::Sym) return SlotKey::glob(base.sym);
    return std::nullopt;
  }

  void transfer_call(TState& st, const std::string& callee, int depth) {
    // argument taint snapshot
    std::array<uint8_t, 6> args{};
    for (int k = 0; k < 6; ++k) args[k] = st.reg_taint(kArgRegs[k]);

    if (is_internal(callee)) {
      bool recursing =
          std::find(call_stack_.begin(), call_stack_.end(), callee) !=
          call_stack_.end();
      if (recursing || depth >= opts_.depth_limit) {
        warn("RecursionLimit:" + callee);
        st.set_taint(Gpr::Rax, true);
        st.v(Gpr::Rax) = AbsVal::top();
        return;
      }
      std::map<std::string, bool> globals_in;
      for (auto& [key, t] : st.mem)
        if (key.global) globals_in[key.sym] = t;
      FnSummary sum = analyze_function(callee, args, globals_in, depth + 1);
      for (Gpr g : kCallerSaved) {
        st.set_taint(g, sum.exit_taint[static_cast<size_t>(g)]);
        st.v(g) = AbsVal::top();
      }
      for (auto& [sym, t] : sum.globals) {
        auto key = SlotKey::glob(sym);
        st.mem[key] = st.mem.count(key) ? (st.mem[key] || t) : t;
      }
      return;
    }

    // external callee: caller-saved registers are clobbered with
    // callee-internal values
    bool source = input_callees_.count(callee) != 0;
    if (source) {
      // memory reachable through pointer arguments receives external data
      int argc = std::clamp(examined_arg_count(callee, opts_), 0, 6);
      for (int k = 0; k < argc; ++k) {
        const AbsVal& v = st.v(kArgRegs[k]);
        if (v.k == AbsVal::K::Sym) st.mem[SlotKey::glob(v.sym)] = true;
        if (v.k == AbsVal::K::StackAddr) st.mem[SlotKey::stack(v.n)] = true;
      }
    } else {
      warn("unknown-callee:" + callee);
    }
    for (Gpr g : kCallerSaved) {
      st.set_taint(g, false);
      st.v(g) = AbsVal::top();
    }
    st.set_taint(Gpr::Rax, true);  // return value: external input or unknown
    st.v(Gpr::Rax) = AbsVal::top();
  }

  void transfer_insn(TState& st, const Instruction& i) {
    auto src_taint = [&](const Operand& o) -> bool {
      switch (o.kind) {
        case Operand::Kind::Imm:
        case Operand::Kind::SymAddr:
        case Operand::Kind::Label:
          return false;
        case Operand::Kind::Reg:
          return st.reg_taint(o.reg.parent);
        case Operand::Kind::Mem: {
          if (auto key = resolve(st, o.mem)) {
            auto it = st.mem.find(*key);
            return it != st.mem.end() && it->second;
          }
          // unresolved load: conservatively external
          return true;
        }
      }
      return true;
    };
    auto src_val = [&](const Operand& o) -> AbsVal {
      switch (o.kind) {
        case Operand::Kind::Imm: return AbsVal::imm(o.imm);
        case Operand::Kind::SymAddr: return AbsVal::symbol(o.sym);
        case Operand::Kind::Reg: return st.v(o.reg.parent);
        default: return AbsVal::top();
      }
    };

    switch (i.mn) {
      case Mnemonic::Mov:
      case Mnemonic::Movabs: {
        bool t = src_taint(i.ops[0]);
        AbsVal v = src_val(i.ops[0]);
        if (i.ops[1].kind == Operand::Kind::Reg) {
          Gpr d = i.ops[1].reg.parent;
          if (i.width <= 16) t = t || st.reg_taint(d);  // partial writes merge
          st.set_taint(d, t);
          st.v(d) = i.width >= 32 ? v : AbsVal::top();
          if (d == Gpr::Rsp) st.v(d) = AbsVal::top();
        } else if (auto key = resolve(st, i.ops[1].mem)) {
          st.mem[*key] = t;
        } else if (t) {
          warn("unresolved-store");
        }
        break;
      }
      case Mnemonic::Lea: {
        const MemRef& m = i.ops[0].mem;
        AbsVal v = AbsVal::top();
        if (m.base && !m.index) {
          const AbsVal& base = st.v(m.base->parent);
          if (base.k == AbsVal::K::StackAddr) v = AbsVal::stack(base.n + m.disp);
          if (base.k == AbsVal::K::Sym) v = AbsVal::symbol(base.sym, base.n + m.disp);
          if (base.k == AbsVal::K::Imm) v = AbsVal::imm(base.n + m.disp);
        }
        Gpr d = i.ops[1].reg.parent;
        st.set_taint(d, false);
        st.v(d) = v;
        break;
      }
      case Mnemonic::Add:
      case Mnemonic::Sub: {
        if (i.ops[1].kind != Operand::Kind::Reg) {
          if (auto key = resolve(st, i.ops[1].mem)) {
            bool t = src_taint(i.ops[0]) ||
                     (st.mem.count(*key) && st.mem[*key]);
            st.mem[*key] = t;
          }
          break;
        }
        Gpr d = i.ops[1].reg.parent;
        bool self_zero = i.mn == Mnemonic::Sub &&
                         i.ops[0].kind == Operand::Kind::Reg &&
                         i.ops[0].reg.parent == d && i.width >= 32;
        if (self_zero) {
          st.set_taint(d, false);
          st.v(d) = AbsVal::imm(0);
          break;
        }
        st.set_taint(d, st.reg_taint(d) || src_taint(i.ops[0]));
        if (i.ops[0].kind == Operand::Kind::Imm && i.width == 64) {
          int64_t delta = i.mn == Mnemonic::Add ? i.ops[0].imm : -i.ops[0].imm;
          AbsVal& v = st.v(d);
          if (v.k != AbsVal::K::Top) v.n += delta;
        } else {
          st.v(d) = AbsVal::top();
        }
        break;
      }
      case Mnemonic::Xor:
      case Mnemonic::And:
      case Mnemonic::Or: {
        if (i.ops[1].kind != Operand::Kind::Reg) {
          if (auto key = resolve(st, i.ops[1].mem)) {
            bool t = src_taint(i.ops[0]) ||
                     (st.mem.count(*key) && st.mem[*key]);
            st.mem[*key] = t;
          }
          break;
        }
        Gpr d = i.ops[1].reg.parent;
        bool self_zero = i.mn == Mnemonic::Xor &&
                         i.ops[0].kind == Operand::Kind::Reg &&
                         i.ops[0].reg.parent == d && i.width >= 32;
        if (self_zero) {
          st.set_taint(d, false);
          st.v(d) = AbsVal::imm(0);
        } else {
          st.set_taint(d, st.reg_taint(d) || src_taint(i.ops[0]));
          st.v(d) = AbsVal::top();
        }
        break;
      }
      case Mnemonic::Inc:
      case Mnemonic::Dec:
      case Mnemonic::Neg:
      case Mnemonic::Not: {
        if (i.ops[0].kind == Operand::Kind::Reg) {
          Gpr d = i.ops[0].reg.parent;
          AbsVal& v = st.v(d);
          if ((i.mn == Mnemonic::Inc || i.mn == Mnemonic::Dec) &&
              v.k != AbsVal::K::Top && i.width == 64)
            v.n += i.mn == Mnemonic::Inc ? 1 : -1;
          else
            v = AbsVal::top();
        }
        break;
      }
      case Mnemonic::Shl:
      case Mnemonic::Shr:
      case Mnemonic::Sar: {
        if (i.ops[1].kind == Operand::Kind::Reg) {
          Gpr d = i.ops[1].reg.parent;
          if (i.ops[0].kind == Operand::Kind::Reg)
            st.set_taint(d, st.reg_taint(d) || st.reg_taint(Gpr::Rcx));
          st.v(d) = AbsVal::top();
        }
        break;
      }
      case Mnemonic::Push: {
        AbsVal& rsp = st.v(Gpr::Rsp);
        if (rsp.k == AbsVal::K::StackAddr) {
          st.mem[SlotKey::stack(rsp.n - 8)] = src_taint(i.ops[0]);
          rsp.n -= 8;
        }
        break;
      }
      case Mnemonic::Pop: {
        AbsVal& rsp = st.v(Gpr::Rsp);
        bool t = true;  // untracked stack reads are conservatively external
        if (rsp.k == AbsVal::K::StackAddr) {
          auto it = st.mem.find(SlotKey::stack(rsp.n));
          t = it != st.mem.end() && it->second;
          rsp.n += 8;
        }
        if (i.ops[0].kind == Operand::Kind::Reg) {
          Gpr d = i.ops[0].reg.parent;
          st.set_taint(d, t);
          st.v(d) = AbsVal::top();
        }
        break;
      }
      default:
        break;  // cmp/test/nop and terminators carry no data definitions
    }
  }

  FnSummary analyze_function(const std::string& fn, const std::array<uint8_t, 6>& args,
                             const std::map<std::string, bool>& globals_in,
                             int depth) {
    std::string memo_key = fn + "/";
    for (int k = 0; k < 6; ++k) memo_key += args[k] ? '1' : '0';
    for (auto& [sym, t] : globals_in)
      if (t) memo_key += "/" + sym;
    if (auto it = memo_.find(memo_key); it != memo_.end()) return it->second;

    auto entry_it = cfg_.label_map.find(fn);
    FnSummary sum;
    if (entry_it == cfg_.label_map.end()) return sum;
    int entry_block = entry_it->second.first;

    call_stack_.push_back(fn);

    TState init;
    init.reached = true;
    for (int k = 0; k < 6; ++k) init.set_taint(kArgRegs[k], args[k]);
    init.v(Gpr::Rsp) = AbsVal::stack(0);
    for (auto& [sym, t] : globals_in) init.mem[SlotKey::glob(sym)] = t;

    std::map<int, TState> in_states;
    in_states[entry_block] = init;
    std::deque<int> work{entry_block};
    TState exit_state;
    int iterations = 0;
    const int max_iterations =
        static_cast<int>(cfg_.blocks.size()) * 64 + 256;  // fixpoint bound

    while (!work.empty() && ++iterations < max_iterations) {
      int blk = work.front();
      work.pop_front();
      TState st = in_states[blk];
      if (!st.reached) continue;
      const BasicBlock& b = cfg_.blocks[blk];

      for (size_t k = 0; k < b.insns.size(); ++k) {
        const Instruction& insn = b.insns[k];
        bool is_call_term = b.term.kind == Terminator::Kind::Call &&
                            k + 1 == b.insns.size();
        if (is_call_term) {
          auto pkey = std::make_pair(blk, static_cast<int>(k));
          if (auto it = points_.find(pkey); it != points_.end()) {
            auto& obs = observations_[pkey];
            for (Gpr g : it->second->args) {
              bool t = st.reg_taint(g);
              obs[g] = obs.count(g) ? (obs[g] || t) : t;
            }
            point_warnings_[pkey].insert(active_warnings_.begin(),
                                         active_warnings_.end());
          }
          if (!b.term.indirect) {
            transfer_call(st, b.term.target, depth);
          } else {
            warn("indirect-call");
            for (Gpr g : kCallerSaved) {
              st.set_taint(g, g == Gpr::Rax);
              st.v(g) = AbsVal::top();
            }
          }
        } else if (!is_control_transfer(insn.mn)) {
          transfer_insn(st, insn);
        }
      }

      if (b.term.kind == Terminator::Kind::Ret)
        exit_state = join(exit_state, st);

      for (int succ : successors(blk)) {
        TState merged = join(in_states[succ], st);
        if (!(merged == in_states[succ])) {
          in_states[succ] = merged;
          if (std::find(work.begin(), work.end(), succ) == work.end())
            work.push_back(succ);
        }
      }
    }

    call_stack_.pop_back();

    if (exit_state.reached) {
      sum.exit_taint = exit_state.taint;
      for (auto& [key, t] : exit_state.mem)
        if (key.global) sum.globals[key.sym] = t;
    } else {
      // no reachable ret (infinite loop or external tail jump): play it safe
      sum.exit_taint.fill(1);
    }
    memo_[memo_key] = sum;
    return sum;
  }
};

}  // namespace

std::vector<PointResult> analyze_reaching_definitions(
    const Cfg& cfg, const std::string& entry,
    const std::vector<ObservationPoint>& points, const TaintOptions& opts) {
  Rda rda(cfg, points, opts);
  rda.run(entry);
  return rda.results(points);
}

std::set<int> select_type_m(std::vector<PointResult>& results,
                            const std::vector<std::string>& risky) {
  std::set<std::string> risk(risky.begin(), risky.end());
  std::set<int> out;
  for (auto& r : results) {
    r.selected = risk.count(r.point.callee) != 0 && r.any_tainted();
    if (r.selected) out.insert(r.point.block);
  }
  return out;
}

std::string taint_to_json(const std::vector<PointResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json e;
    e["call_site"]["block"] = r.point.block;
    e["call_site"]["index"] = r.point.index;
    e["callee"] = r.point.callee;
    auto tainted = nlohmann::json::array();
    for (auto& [g, t] : r.tainted)
      if (t) tainted.push_back(gpr_name(g));
    e["tainted_args"] = std::move(tainted);
    e["selected"] = r.selected;
    e["warnings"] = r.warnings;
    arr.push_back(std::move(e));
  }
  return arr.dump(2);
}

}  // namespace divasm
