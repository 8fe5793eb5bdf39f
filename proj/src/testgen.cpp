#include "divasm/testgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <sstream>

namespace divasm {

namespace {

const Gpr kInputRegs[6] = {Gpr::Rdi, Gpr::Rsi, Gpr::Rdx, Gpr::Rcx, Gpr::R8, Gpr::R9};

// registers that serve as memory bases/indexes: structural, pinned, never
// fuzz targets
std::set<Gpr> pointer_regs(const LiveSet& live) {
  std::set<Gpr> out;
  for (const auto& m : live.mem) {
    if (m.base && *m.base != Gpr::Rsp) out.insert(*m.base);
    if (m.index) out.insert(*m.index);
  }
  return out;
}

uint64_t pin_address(int ordinal) {
  return 0x00100000ull + static_cast<uint64_t>(ordinal) * 0x10000;
}

}  // namespace

Harness build_harness(const BasicBlock& b, const LiveSet& live) {
  if (live.indirect_pointer)
    throw UndeclarableFootprint("block " + b.label +
                                " computes pointers in-block");
  Harness h;
  h.body = b.insns;

  std::set<Gpr> pointers = pointer_regs(live);

  // data locations, registers first (sorted), then memory slots
  std::vector<Gpr> reg_locs;
  for (Gpr g : live.read_regs)
    if (g != Gpr::Rsp && !pointers.count(g)) reg_locs.push_back(g);
  std::vector<const MemAccess*> mem_locs;
  for (const auto& m : live.mem)
    if (m.is_read) mem_locs.push_back(&m);

  // identity assignments first so no input register is clobbered before use
  std::set<Gpr> available(std::begin(kInputRegs), std::end(kInputRegs));
  std::map<Gpr, Gpr> reg_assign;  // location <- input
  for (Gpr in : kInputRegs)
    if (std::find(reg_locs.begin(), reg_locs.end(), in) != reg_locs.end()) {
      reg_assign[in] = in;
      available.erase(in);
      h.inputs_used.push_back(in);
    }
  auto next_input = [&]() -> std::optional<Gpr> {
    for (Gpr g : kInputRegs)
      if (available.count(g)) {
        available.erase(g);
        h.inputs_used.push_back(g);
        return g;
      }
    return std::nullopt;
  };
  for (Gpr loc : reg_locs) {
    if (reg_assign.count(loc)) continue;
    if (auto in = next_input()) {
      reg_assign[loc] = *in;
    } else {
      h.warnings.push_back("MultiSlotUnsupported: register " + gpr_name(loc) +
                           " filled randomly");
    }
  }
  for (auto& [loc, in] : reg_assign) {
    if (loc == in) continue;  // identity: value already in place
    Instruction mov;
    mov.mn = Mnemonic::Mov;
    mov.width = 64;
    mov.ops = {Operand::make_reg(Register{in, 64}),
               Operand::make_reg(Register{loc, 64})};
    h.preamble.push_back(mov);
  }
  for (const MemAccess* m : mem_locs) {
    auto in = next_input();
    if (!in) {
      h.warnings.push_back("MultiSlotUnsupported: slot " + m->key() +
                           " filled randomly");
      continue;
    }
    MemRef ref;
    if (m->base) ref.base = Register{*m->base, 64};
    if (m->index) ref.index = Register{*m->index, 64};
    ref.scale = m->scale;
    // liveness folded the rsp delta into disp relative to block entry; the
    // preamble runs at block entry, so the folded displacement addresses the
    // same bytes
    ref.disp = static_cast<int32_t>(m->disp);
    Instruction mov;
    mov.mn = Mnemonic::Mov;
    mov.width = 64;
    mov.ops = {Operand::make_reg(Register{*in, 64}), Operand::make_mem(ref)};
    h.preamble.push_back(mov);
  }

  h.num_sites = b.term.kind == Terminator::Kind::CondJmp ? 2 : 1;
  return h;
}

MachineState make_input_state(const BasicBlock& b, const LiveSet& live,
                              std::mt19937_64& rng, const ProgramImage* image) {
  if (live.indirect_pointer)
    throw UndeclarableFootprint("block " + b.label +
                                " computes pointers in-block");
  MachineState s = make_default_state();
  auto fp = std::make_shared<Footprint>(*s.fp);

  // pin pointer registers to disjoint regions, deterministically by name
  std::set<Gpr> pointers = pointer_regs(live);
  std::map<Gpr, uint64_t> pins;
  int ordinal = 0;
  for (Gpr g : pointers) pins[g] = pin_address(ordinal++);

  for (int k = 0; k < kGprCount; ++k) {
    Gpr g = static_cast<Gpr>(k);
    if (g == Gpr::Rsp) continue;
    if (auto it = pins.find(g); it != pins.end())
      s.gpr[k] = it->second;
    else
      s.gpr[k] = rng();
  }
  // indexes stay small so indexed slots remain inside their pinned region
  for (const auto& m : live.mem)
    if (m.index) s.reg(*m.index) = rng() % 8;
  s.flags = static_cast<uint8_t>(rng() % 32);

  // footprint: exactly the declared slots, filled with random bytes
  for (const auto& m : live.mem) {
    uint64_t addr = static_cast<uint64_t>(m.disp);
    if (m.base) addr += s.reg(*m.base);
    if (m.index) addr += s.reg(*m.index) * m.scale;
    fp->add(addr, addr + m.bytes);
    for (uint64_t a = addr; a < addr + m.bytes; ++a)
      s.mem[a] = static_cast<uint8_t>(rng());
  }
  if (image) image->add_data_footprint(*fp);
  s.fp = std::move(fp);
  return s;
}

namespace {

std::optional<TestCase> case_from_input(const BasicBlock& b, MachineState input,
                                        std::string origin,
                                        const ProgramImage* image) {
  ExecResult r = run_block(input, b.insns, static_cast<int>(b.insns.size()) + 4,
                           image);
  if (!r.normal()) return std::nullopt;
  TestCase tc;
  tc.input = std::move(input);
  tc.expected = std::move(r.state);
  tc.expected_path = std::move(r.path);
  tc.origin = std::move(origin);
  return tc;
}

}  // namespace

std::vector<TestCase> gen_random_cases(const BasicBlock& b, const LiveSet& live,
                                       int n, uint64_t seed,
                                       const ProgramImage* image) {
  if (n < 1) throw std::invalid_argument("gen_random_cases: InvalidCount");
  std::mt19937_64 rng(seed);
  std::vector<TestCase> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < n && attempts < n * 64 + 256) {
    ++attempts;
    MachineState input = make_input_state(b, live, rng, image);
    if (auto tc = case_from_input(b, std::move(input), "random", image))
      out.push_back(std::move(*tc));
  }
  if (static_cast<int>(out.size()) < n)
    throw std::runtime_error("gen_random_cases: block faults on its declared inputs");
  return out;
}

// ---------------------------------------------------------------------------
// Fuzzing
// ---------------------------------------------------------------------------

namespace {

struct FuzzVector {
  std::array<uint64_t, 6> regs{};
  uint8_t flags = 0;
};

std::vector<FuzzVector> seed_corpus() {
  // boundary values guarantee the interesting cases (zero operands, sign
  // boundaries) deterministically rather than probabilistically
  const uint64_t values[] = {0,
                             1,
                             ~0ull,
                             0x8000000000000000ull,
                             0x7fffffffffffffffull,
                             2,
                             0x80,
                             0x8000,
                             0x80000000ull,
                             1ull << 32,
                             1ull << 48};
  const uint8_t flag_sets[] = {0,    kAllFlags, FlagCF | FlagOF, FlagCF,
                               FlagPF, FlagZF,  FlagSF,          FlagOF};
  std::vector<FuzzVector> corpus;
  for (uint64_t v : values) {
    FuzzVector f;
    f.regs.fill(v);
    corpus.push_back(f);
  }
  for (uint8_t fs : flag_sets) {
    FuzzVector f;  // zero registers
    f.flags = fs;
    corpus.push_back(f);
    FuzzVector g;
    g.regs.fill(1);
    g.flags = fs;
    corpus.push_back(g);
  }
  return corpus;
}

FuzzVector mutate(const FuzzVector& in, std::mt19937_64& rng,
                  const std::vector<FuzzVector>& corpus) {
  FuzzVector f = in;
  switch (rng() % 5) {
    case 0: {  // bit flip
      int slot = rng() % 6;
      f.regs[slot] ^= 1ull << (rng() % 64);
      break;
    }
    case 1: {  // arithmetic step
      int slot = rng() % 6;
      const int64_t ks[] = {1, 2, 4, 8, 16, 32};
      int64_t k = ks[rng() % 6];
      f.regs[slot] += (rng() % 2) ? k : -k;
      break;
    }
    case 2: {  // byte splice from another corpus entry
      const FuzzVector& other = corpus[rng() % corpus.size()];
      int slot = rng() % 6;
      int byte = rng() % 8;
      uint64_t m = 0xffull << (8 * byte);
      f.regs[slot] = (f.regs[slot] & ~m) | (other.regs[slot] & m);
      break;
    }
    case 3:  // flag toggle
      f.flags ^= static_cast<uint8_t>(1u << (rng() % 5));
      break;
    default: {  // fresh random slot
      f.regs[rng() % 6] = rng();
      break;
    }
  }
  return f;
}

}  // namespace

FuzzResult gen_fuzz_cases(const BasicBlock& b, const LiveSet& live, int budget,
                          uint64_t seed, const ProgramImage* image) {
  if (budget < 1) throw std::invalid_argument("gen_fuzz_cases: InvalidCount");
  FuzzResult result;
  Harness h = build_harness(b, live);
  result.warnings = h.warnings;

  std::mt19937_64 rng(seed ^ 0xF0220000);
  // one pinned scaffold for every execution; inputs shuffled per vector
  MachineState scaffold = make_input_state(b, live, rng, image);

  std::vector<Instruction> harness_code = h.preamble;
  harness_code.insert(harness_code.end(), h.body.begin(), h.body.end());
  int fuel = static_cast<int>(harness_code.size()) + 4;

  auto apply_vector = [&](const FuzzVector& v) {
    MachineState s = scaffold;
    for (size_t k = 0; k < h.inputs_used.size() && k < 6; ++k)
      s.reg(h.inputs_used[k]) = v.regs[k];
    s.flags = static_cast<uint8_t>(v.flags & kAllFlags);
    return s;
  };
  auto site_of = [&](const ExecResult& r) -> std::optional<int> {
    if (!r.normal()) return std::nullopt;
    if (r.path.empty()) return 1;
    if (b.term.kind == Terminator::Kind::CondJmp)
      return r.path[0].second.value_or(false) ? 1 : 2;
    return 1;
  };

  std::vector<FuzzVector> corpus = seed_corpus();
  std::map<int, FuzzVector> site_reps;
  int executions = 0;

  auto try_vector = [&](const FuzzVector& v) {
    if (executions >= budget) return;
    ++executions;
    ExecResult r = run_block(apply_vector(v), harness_code, fuel, image);
    if (auto site = site_of(r)) {
      if (!site_reps.count(*site)) {
        site_reps[*site] = v;
        corpus.push_back(v);
      }
    }
  };

  for (const auto& v : corpus) {
    try_vector(v);
    if (static_cast<int>(site_reps.size()) >= h.num_sites) break;
  }
  size_t base_corpus = corpus.size();
  while (executions < budget &&
         static_cast<int>(site_reps.size()) < h.num_sites) {
    const FuzzVector& parent = corpus[rng() % std::max(corpus.size(), size_t{1})];
    try_vector(mutate(parent, rng, corpus));
    if (corpus.size() > base_corpus + 4096) corpus.resize(base_corpus);  // cap
  }

  result.buckets = static_cast<int>(site_reps.size());
  result.coverage_incomplete = b.term.kind == Terminator::Kind::CondJmp &&
                               result.buckets < h.num_sites;
  if (result.coverage_incomplete)
    result.warnings.push_back("CoverageIncomplete: only " +
                              std::to_string(result.buckets) + " of " +
                              std::to_string(h.num_sites) + " sites reached");

  // convert representatives to test cases on the unharnessed block: run the
  // preamble alone to place the inputs, then record the original's outputs
  for (auto& [site, vec] : site_reps) {
    MachineState placed = apply_vector(vec);
    if (!h.preamble.empty()) {
      ExecResult pre = run_block(placed, h.preamble,
                                 static_cast<int>(h.preamble.size()) + 2, image);
      if (!pre.normal()) continue;
      placed = pre.state;
      placed.dirty.clear();  // preamble stores are inputs, not block effects
    }
    if (auto tc = case_from_input(b, std::move(placed),
                                  "fuzz:" + std::to_string(site), image))
      result.cases.push_back(std::move(*tc));
  }
  return result;
}

Suite make_suite(const BasicBlock& b, const LiveSet& live, const SuiteConfig& cfg,
                 const ProgramImage* image) {
  Suite suite;
  int fuzz_target = std::max(1, static_cast<int>(cfg.suite_size * cfg.fuzz_fraction));
  FuzzResult fr = gen_fuzz_cases(b, live, cfg.fuzz_budget, cfg.seed, image);
  suite.coverage_incomplete = fr.coverage_incomplete;
  suite.warnings = fr.warnings;

  // at least one representative per bucket, cycling if the quota allows
  for (int k = 0; k < fuzz_target && !fr.cases.empty(); ++k)
    suite.cases.push_back(fr.cases[k % fr.cases.size()]);

  int need = cfg.suite_size - static_cast<int>(suite.cases.size());
  if (need > 0) {
    auto rnd = gen_random_cases(b, live, need, cfg.seed ^ 0x5EED, image);
    suite.cases.insert(suite.cases.end(), rnd.begin(), rnd.end());
  }
  return suite;
}

int verify_suite(const BasicBlock& b, const std::vector<TestCase>& cases,
                 const ProgramImage* image) {
  int mismatches = 0;
  for (const auto& tc : cases) {
    ExecResult r = run_block(tc.input, b.insns,
                             static_cast<int>(b.insns.size()) + 4, image);
    if (!r.normal() || project_and_compare(r.state, tc.expected, true) != 0)
      ++mismatches;
  }
  return mismatches;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

uint64_t parse_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

nlohmann::json state_to_json(const MachineState& s, bool with_footprint) {
  nlohmann::json j;
  nlohmann::json regs = nlohmann::json::object();
  for (int k = 0; k < kGprCount; ++k)
    regs[gpr_name(static_cast<Gpr>(k))] = hex64(s.gpr[k]);
  j["regs"] = std::move(regs);
  j["flags"] = {{"cf", s.flag(FlagCF) ? 1 : 0}, {"pf", s.flag(FlagPF) ? 1 : 0},
                {"zf", s.flag(FlagZF) ? 1 : 0}, {"sf", s.flag(FlagSF) ? 1 : 0},
                {"of", s.flag(FlagOF) ? 1 : 0}};
  nlohmann::json mem = nlohmann::json::array();
  // contiguous runs of bytes
  auto it = s.mem.begin();
  while (it != s.mem.end()) {
    uint64_t start = it->first;
    std::string bytes;
    uint64_t addr = start;
    while (it != s.mem.end() && it->first == addr) {
      char buf[3];
      snprintf(buf, sizeof buf, "%02x", it->second);
      bytes += buf;
      ++addr;
      ++it;
    }
    mem.push_back({{"addr", hex64(start)}, {"bytes", bytes}});
  }
  j["mem"] = std::move(mem);
  if (!s.dirty.empty()) {
    nlohmann::json dirty = nlohmann::json::array();
    for (uint64_t a : s.dirty) dirty.push_back(hex64(a));
    j["dirty"] = std::move(dirty);
  }
  if (with_footprint) {
    nlohmann::json fp = nlohmann::json::array();
    if (s.fp)
      for (auto& [lo, hi] : s.fp->ranges) fp.push_back({hex64(lo), hex64(hi)});
    j["footprint"] = std::move(fp);
    j["stack"] = {hex64(s.stack_lo), hex64(s.stack_hi)};
  }
  return j;
}

MachineState state_from_json(const nlohmann::json& j, const MachineState& base) {
  MachineState s = base;
  for (auto& [name, val] : j.at("regs").items()) {
    auto r = lookup_register(name);
    if (r) s.reg(r->parent) = parse_hex(val.get<std::string>());
  }
  const auto& f = j.at("flags");
  s.set_flag(FlagCF, f.at("cf").get<int>() != 0);
  s.set_flag(FlagPF, f.at("pf").get<int>() != 0);
  s.set_flag(FlagZF, f.at("zf").get<int>() != 0);
  s.set_flag(FlagSF, f.at("sf").get<int>() != 0);
  s.set_flag(FlagOF, f.at("of").get<int>() != 0);
  s.mem.clear();
  for (auto& e : j.at("mem")) {
    uint64_t addr = parse_hex(e.at("addr").get<std::string>());
    std::string bytes = e.at("bytes").get<std::string>();
    for (size_t k = 0; k + 2 <= bytes.size(); k += 2)
      s.mem[addr + k / 2] =
          static_cast<uint8_t>(std::stoul(bytes.substr(k, 2), nullptr, 16));
  }
  s.dirty.clear();
  if (j.contains("dirty"))
    for (auto& a : j.at("dirty")) s.dirty.insert(parse_hex(a.get<std::string>()));
  if (j.contains("footprint")) {
    auto fp = std::make_shared<Footprint>();
    for (auto& r : j.at("footprint"))
      fp->add(parse_hex(r.at(0).get<std::string>()),
              parse_hex(r.at(1).get<std::string>()));
    s.fp = std::move(fp);
    s.stack_lo = parse_hex(j.at("stack").at(0).get<std::string>());
    s.stack_hi = parse_hex(j.at("stack").at(1).get<std::string>());
  }
  return s;
}

}  // namespace

std::string suite_to_json(const std::string& block_label, const Suite& suite) {
  nlohmann::json j;
  j["block"] = block_label;
  j["coverage_incomplete"] = suite.coverage_incomplete;
  j["warnings"] = suite.warnings;
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& tc : suite.cases) {
    nlohmann::json c;
    c["input"] = state_to_json(tc.input, true);
    c["expected"] = state_to_json(tc.expected, false);
    c["origin"] = tc.origin;
    cases.push_back(std::move(c));
  }
  j["cases"] = std::move(cases);
  return j.dump(2);
}

Suite suite_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Suite suite;
  suite.coverage_incomplete = j.value("coverage_incomplete", false);
  for (auto& w : j.value("warnings", nlohmann::json::array()))
    suite.warnings.push_back(w.get<std::string>());
  for (auto& c : j.at("cases")) {
    TestCase tc;
    tc.input = state_from_json(c.at("input"), MachineState{});
    tc.expected = state_from_json(c.at("expected"), tc.input);
    tc.origin = c.value("origin", "manual");
    suite.cases.push_back(std::move(tc));
  }
  return suite;
}

}  // namespace divasm
