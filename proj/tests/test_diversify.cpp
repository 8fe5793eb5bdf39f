#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "divasm/diversify.hpp"
#include "support/fixtures.hpp"

using namespace divasm;
using divasm::testsupport::load_fixture;

namespace {

RewriteCandidate mk_candidate(const std::string& src) {
  Program p = parse_program(src, {.strict = true});
  RewriteCandidate rc;
  for (auto& l : p.lines)
    if (l.kind == Line::Kind::Instr) rc.body.push_back(l.insn);
  rc.validated = true;
  rc.canonical = canonical_text(rc.body);
  return rc;
}

struct Firmware {
  Program program;
  Cfg cfg;
};

Firmware toy() {
  Firmware f;
  f.program = parse_program(load_fixture("toy_firmware.s"));
  f.cfg = build_cfg(f.program, "main");
  return f;
}

std::string temp_dir(const std::string& tag) {
  auto d = std::filesystem::temp_directory_path() / ("divasm_test_" + tag);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

}  // namespace

TEST_CASE("splice: empty plan reproduces the canonicalized original") {
  Firmware f = toy();
  DiversityPlan plan;
  SpliceResult sr = splice(f.program, f.cfg, plan, 0);
  CHECK(render_program(sr.program) == render_program(f.program));
  CHECK(sr.dropped_labels.empty());
}

TEST_CASE("splice: locality — only the selected block's lines change") {
  Firmware f = toy();
  auto q = block_at(f.cfg, "reset_status");
  REQUIRE(q.has_value());
  DiversityPlan plan;
  plan.selections[q->block->id] = {mk_candidate("xor %eax, %eax\nret\n")};

  std::string before = render_program(f.program);
  std::string after = render_program(splice(f.program, f.cfg, plan, 0).program);

  std::vector<std::string> a, b;
  std::istringstream ia(before), ib(after);
  for (std::string line; std::getline(ia, line);) a.push_back(line);
  for (std::string line; std::getline(ib, line);) b.push_back(line);
  // same number of lines here (2-instruction block replaced by 2 instructions)
  REQUIRE(a.size() == b.size());
  int diffs = 0;
  for (size_t k = 0; k < a.size(); ++k)
    if (a[k] != b[k]) ++diffs;
  CHECK(diffs == 1);  // exactly the mov -> xor line
}

TEST_CASE("splice: interior labels of replaced blocks are dropped and reported") {
  Firmware f = toy();
  auto q = block_at(f.cfg, "load_rdi_arg");
  REQUIRE(q.has_value());
  DiversityPlan plan;
  plan.selections[q->block->id] = {
      mk_candidate("pop %rdi\nand $0x0, %eax\nret\n")};
  SpliceResult sr = splice(f.program, f.cfg, plan, 0);
  REQUIRE(sr.dropped_labels.size() == 1);
  CHECK(sr.dropped_labels[0] == "g_pop_rdi");
  CHECK(!sr.program.has_label("g_pop_rdi"));
  CHECK(sr.program.has_label("load_rdi_arg"));  // head label preserved
}

TEST_CASE("emit_firmware_rewrites: distinct variants, manifest, isomorphic CFGs") {
  Firmware f = toy();
  auto q = block_at(f.cfg, "reset_status");
  DiversityPlan plan;
  plan.selections[q->block->id] = {mk_candidate("xor %eax, %eax\nret\n"),
                                   mk_candidate("sub %eax, %eax\nret\n")};
  std::string dir = temp_dir("emit");
  EmitResult er = emit_firmware_rewrites(f.program, f.cfg, plan, 2, dir, 7);
  REQUIRE(er.variants.size() == 2);
  CHECK(er.variants[0].checksum != er.variants[1].checksum);
  CHECK(std::filesystem::exists(dir + "/variant_0.s"));
  CHECK(std::filesystem::exists(dir + "/variant_1.s"));
  CHECK(std::filesystem::exists(dir + "/manifest.json"));
  CHECK(er.manifest_json.find("\"checksum\"") != std::string::npos);

  // variants reparse and their CFGs stay isomorphic to the original
  for (auto& v : er.variants) {
    Program vp = parse_program(divasm::testsupport::read_file(dir + "/" + v.file));
    Cfg vcfg = build_cfg(vp, "main");
    CHECK(vcfg.blocks.size() == f.cfg.blocks.size());
    auto edge_set = [](const Cfg& c) {
      std::multiset<std::tuple<int, int, int>> s;
      for (auto& e : c.edges)
        s.insert({e.from, e.to, static_cast<int>(e.kind)});
      return s;
    };
    CHECK(edge_set(vcfg) == edge_set(f.cfg));
  }
}

TEST_CASE("emit_firmware_rewrites: cycling warning and identity checksum") {
  Firmware f = toy();
  DiversityPlan plan;  // empty
  std::string dir = temp_dir("emit_id");
  EmitResult er = emit_firmware_rewrites(f.program, f.cfg, plan, 1, dir, 3);
  REQUIRE(er.variants.size() == 1);
  char buf[19];
  snprintf(buf, sizeof buf, "%016llx",
           static_cast<unsigned long long>(fnv1a64(render_program(f.program))));
  CHECK(er.variants[0].checksum == buf);

  auto q = block_at(f.cfg, "reset_status");
  plan.selections[q->block->id] = {mk_candidate("xor %eax, %eax\nret\n")};
  EmitResult er2 = emit_firmware_rewrites(f.program, f.cfg, plan, 3, dir, 3);
  CHECK(!er2.warnings.empty());  // 3 variants, 1 rewrite: cycling
}

TEST_CASE("emit_firmware_rewrites: size regression is a hard error") {
  Firmware f = toy();
  auto q = block_at(f.cfg, "reset_status");
  DiversityPlan plan;
  plan.selections[q->block->id] = {
      mk_candidate("mov $0x0, %eax\nmov $0x0, %eax\nmov $0x0, %eax\nret\n")};
  std::string dir = temp_dir("emit_fat");
  CHECK_THROWS_AS(emit_firmware_rewrites(f.program, f.cfg, plan, 1, dir, 3),
                  std::logic_error);
}

TEST_CASE("gadget survival is judged semantically, not textually") {
  Firmware f = toy();
  auto records = scan_gadgets(f.cfg);
  auto q = block_at(f.cfg, "load_rdi_arg");
  REQUIRE(q.has_value());

  // restrict to this block's records
  std::vector<GadgetRecord> block_records;
  for (auto& r : records)
    if (r.block == q->block->id &&
        r.cls == GadgetClass::change_register(Gpr::Rdi))
      block_records.push_back(r);
  REQUIRE(!block_records.empty());

  // a syntactic change that preserves the load-from-stack effect: survived
  DiversityPlan survives;
  survives.selections[q->block->id] = {
      mk_candidate("mov $0x0, %eax\nmov (%rsp), %rdi\nadd $0x8, %rsp\nret\n")};
  // (this body is longer than the original: bypass emit's size check by
  // judging survival on the spliced program alone)
  Cfg vcfg1 = build_cfg(splice(f.program, f.cfg, survives, 0).program, "main");
  SurvivalReport r1 = gadget_survival_report(f.cfg, vcfg1, block_records);
  CHECK(r1.survived == r1.total);

  // rdi now comes from a register, not the stack/immediate: eliminated
  DiversityPlan eliminates;
  eliminates.selections[q->block->id] = {
      mk_candidate("mov $0x0, %eax\nmov %r10, %rdi\nret\n")};
  Cfg vcfg2 = build_cfg(splice(f.program, f.cfg, eliminates, 0).program, "main");
  SurvivalReport r2 = gadget_survival_report(f.cfg, vcfg2, block_records);
  CHECK(r2.survived == 0);
  CHECK(r2.elimination_rate() == 1.0);

  // identity: everything survives
  SurvivalReport r0 = gadget_survival_report(f.cfg, f.cfg, records);
  CHECK(r0.survived == r0.total);
}

TEST_CASE("payload_check: baseline feasible, diversified chain broken") {
  Firmware f = toy();
  PayloadSpec payload = payload_from_json(load_fixture("payload.json"));
  REQUIRE(payload.gadgets.size() == 4);

  // baseline: the unmodified program satisfies the whole chain
  PayloadCheckResult base = payload_check(f.cfg, f.program, "main", payload);
  CHECK(base.feasible);
  for (auto& v : base.verdicts) CHECK(v.held());

  // diversify the first gadget's block with an offset-shifting rewrite
  auto q = block_at(f.cfg, "load_rdi_arg");
  DiversityPlan plan;
  plan.selections[q->block->id] = {
      mk_candidate("pop %rdi\nand $0x0, %eax\nret\n")};
  Program variant = splice(f.program, f.cfg, plan, 0).program;
  PayloadCheckResult res = payload_check(f.cfg, variant, "main", payload);
  CHECK(!res.feasible);
  REQUIRE(res.first_broken.has_value());
  CHECK(*res.first_broken == 0);
  CHECK(res.verdicts[0].verdict == "misaligned");
  // untouched gadgets still hold
  CHECK(res.verdicts[1].held());
  CHECK(res.verdicts[2].held());
  CHECK(res.verdicts[3].held());

  // empty payload: vacuous chain
  PayloadSpec empty;
  CHECK(payload_check(f.cfg, f.program, "main", empty).feasible);
}

TEST_CASE("payload_check: monotone defense — more diversification never helps "
          "the attacker") {
  Firmware f = toy();
  PayloadSpec payload = payload_from_json(load_fixture("payload.json"));

  DiversityPlan small;
  auto q1 = block_at(f.cfg, "load_rdi_arg");
  small.selections[q1->block->id] = {
      mk_candidate("pop %rdi\nand $0x0, %eax\nret\n")};

  DiversityPlan big = small;
  auto q2 = block_at(f.cfg, "load_rsi_arg");
  big.selections[q2->block->id] = {
      mk_candidate("pop %rsi\nand $0x0, %eax\nret\n")};

  auto feasible_count = [&](const DiversityPlan& plan) {
    Program v = splice(f.program, f.cfg, plan, 0).program;
    PayloadCheckResult r = payload_check(f.cfg, v, "main", payload);
    return r.feasible ? 1 : 0;
  };
  CHECK(feasible_count(big) <= feasible_count(small));
}

TEST_CASE("whole-program semantics preserved across synthesized variants") {
  Program p = parse_program(load_fixture("exec_fixture.s"), {.strict = true});
  Cfg cfg = build_cfg(p, "exec_main");

  // diversify every change-register block of the fixture with real synthesis
  auto records = scan_gadgets(cfg);
  TypeRFilter filter;
  filter.kinds = {GadgetClass::Kind::ChangeRegister};
  DiversityPlan plan;
  for (int blk : select_type_r(records, filter)) {
    const BasicBlock& b = cfg.blocks[blk];
    if (!b.diversifiable) continue;
    LiveSet live = compute_live_sets(b);
    SuiteConfig sc;
    sc.seed = 51;
    Suite suite = make_suite(b, live, sc);
    SynthesisConfig syn;
    syn.iterations = 30000;
    syn.restarts = 4;
    syn.seed = 51;
    syn.n_rewrites = 2;
    auto res = generate_n_rewrites(b, live, suite.cases, syn);
    if (!res.rewrites.empty()) plan.selections[blk] = res.rewrites;
  }
  REQUIRE(!plan.selections.empty());

  ProgramImage orig_image = build_image(p);
  ProgramRunResult orig = run_program(orig_image, "exec_main", make_default_state());
  REQUIRE(orig.ok);
  CHECK(orig.state.reg(Gpr::Rax) == 0x18);

  for (int v = 0; v < 2; ++v) {
    Program variant = splice(p, cfg, plan, v).program;
    ProgramImage vi = build_image(variant);
    ProgramRunResult r = run_program(vi, "exec_main", make_default_state());
    REQUIRE(r.ok);
    CHECK(r.state.reg(Gpr::Rax) == orig.state.reg(Gpr::Rax));
    CHECK(r.state.reg(Gpr::Rbx) == orig.state.reg(Gpr::Rbx));
  }
}

TEST_CASE("payload JSON round trip") {
  PayloadSpec p = payload_from_json(load_fixture("payload.json"));
  PayloadSpec p2 = payload_from_json(payload_to_json(p));
  REQUIRE(p2.gadgets.size() == p.gadgets.size());
  for (size_t k = 0; k < p.gadgets.size(); ++k) {
    CHECK(p2.gadgets[k].label == p.gadgets[k].label);
    CHECK(p2.gadgets[k].cls == p.gadgets[k].cls);
  }
}
