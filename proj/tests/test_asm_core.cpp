#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "divasm/asm_core.hpp"
#include "support/genprog.hpp"

using namespace divasm;

namespace {

struct EncodingCase {
  const char* text;
  int bytes;
};

// Byte lengths produced by GNU as 2.38 for each instruction, frozen as the
// reference-assembler oracle for the canonical length model.
const EncodingCase kEncodingOracle[] = {
#include "support/encoding_oracle.inc"
};

Instruction parse_one(const std::string& text) {
  Program p = parse_program(text + "\n", {.strict = true});
  REQUIRE(p.lines.size() == 1);
  REQUIRE(p.lines[0].kind == Line::Kind::Instr);
  return p.lines[0].insn;
}

}  // namespace

TEST_CASE("register lookup and canonicalization") {
  auto eax = lookup_register("eax");
  REQUIRE(eax.has_value());
  CHECK(eax->parent == Gpr::Rax);
  CHECK(eax->width == 32);
  CHECK(lookup_register("r11b")->parent == Gpr::R11);
  CHECK(lookup_register("r11b")->width == 8);
  CHECK(lookup_register("sil")->parent == Gpr::Rsi);
  CHECK(!lookup_register("ah").has_value());   // high-byte forms excluded
  CHECK(!lookup_register("xmm0").has_value());
  CHECK(register_name(Register{Gpr::Rbp, 16}) == "bp");
}

TEST_CASE("parse: fig 2a style block") {
  Program p = parse_program("add $0x4, %eax\n test %eax, %eax\n je L1\n");
  REQUIRE(p.lines.size() == 3);
  CHECK(p.lines[0].insn.mn == Mnemonic::Add);
  CHECK(p.lines[0].insn.ops[0].imm == 4);
  CHECK(p.lines[0].insn.width == 32);
  CHECK(p.lines[1].insn.mn == Mnemonic::Test);
  CHECK(p.lines[2].insn.mn == Mnemonic::Je);
  CHECK(p.lines[2].insn.ops[0].sym == "L1");
}

TEST_CASE("parse: empty program") {
  Program p = parse_program("");
  CHECK(p.lines.empty());
  CHECK(p.symtab.empty());
}

TEST_CASE("parse: unsupported instruction") {
  CHECK_THROWS_AS(parse_program("frob %rax\n", {.strict = true}),
                  UnsupportedInstruction);
  // non-strict mode keeps it as an opaque line
  Program p = parse_program("frob %rax\n");
  REQUIRE(p.lines.size() == 1);
  CHECK(p.lines[0].kind == Line::Kind::Opaque);
  CHECK(p.lines[0].text == "frob %rax");
}

TEST_CASE("parse: numeric branch targets kept verbatim") {
  Instruction i = parse_one("je 0x112346608");
  CHECK(i.ops[0].kind == Operand::Kind::Label);
  CHECK(i.ops[0].sym == "0x112346608");
  CHECK(render_instruction(i) == "je 0x112346608");
}

TEST_CASE("parse: directives and labels") {
  Program p = parse_program(".text\nmain:\n  push %rbp\n.L2:\n  ret\n# note\n");
  CHECK(p.lines[0].kind == Line::Kind::Opaque);
  CHECK(p.symtab.at("main") == 1);
  CHECK(p.symtab.at(".L2") == 3);
  CHECK(p.lines[5].kind == Line::Kind::Opaque);
  CHECK_THROWS_AS(parse_program("a:\na:\nret\n"), SyntaxError);
}

TEST_CASE("parse: syntax errors carry position") {
  try {
    parse_program("mov %eax,\n");
    FAIL("expected SyntaxError");
  } catch (const SyntaxError& e) {
    CHECK(e.line == 1);
    CHECK(e.column > 0);
  }
  CHECK_THROWS_AS(parse_program("mov %eax, %rbx\n"), SyntaxError);   // width mismatch
  CHECK_THROWS_AS(parse_program("mov $0x0, $0x1\n"), SyntaxError);   // imm dest
  CHECK_THROWS_AS(parse_program("mov (%rax), (%rbx)\n"), SyntaxError);
  CHECK_THROWS_AS(parse_program("add $1, (%rax)\n"), SyntaxError);   // needs suffix
  CHECK_THROWS_AS(parse_program("mov (%eax), %ebx\n"), SyntaxError); // 32-bit base
  CHECK_THROWS_AS(parse_program("mov (%rax,%rsp,2), %ebx\n"), SyntaxError);
  CHECK_THROWS_AS(parse_program("mov $0x123456789, %rax\n"), SyntaxError);
  CHECK_NOTHROW(parse_program("movabs $0x123456789, %rax\n"));
}

TEST_CASE("parse: indirect call and jump") {
  Instruction c = parse_one("call *%rax");
  CHECK(c.indirect);
  CHECK(c.ops[0].kind == Operand::Kind::Reg);
  CHECK(render_instruction(c) == "call *%rax");
  Instruction j = parse_one("jmp *0x8(%rbx)");
  CHECK(j.indirect);
  CHECK(j.ops[0].kind == Operand::Kind::Mem);
}

TEST_CASE("parse: symbol-address immediates") {
  Instruction i = parse_one("mov $pkt_buf, %rsi");
  CHECK(i.ops[0].kind == Operand::Kind::SymAddr);
  CHECK(i.ops[0].sym == "pkt_buf");
  CHECK(render_instruction(i) == "mov $pkt_buf, %rsi");
  Instruction p = parse_one("push $after_label");
  CHECK(p.ops[0].kind == Operand::Kind::SymAddr);
}

TEST_CASE("render: single ret program") {
  Program p = parse_program("  ret \n");
  CHECK(render_program(p) == "ret\n");
}

TEST_CASE("render: fig 2a round trip preserves structure") {
  std::string src = "blk:\nadd $0x4, %eax\ntest %eax, %eax\nje 0x112346608\n";
  Program p1 = parse_program(src);
  std::string r1 = render_program(p1);
  Program p2 = parse_program(r1);
  REQUIRE(p1.lines.size() == p2.lines.size());
  for (size_t k = 0; k < p1.lines.size(); ++k) {
    CHECK(p1.lines[k].kind == p2.lines[k].kind);
    if (p1.lines[k].kind == Line::Kind::Instr)
      CHECK(p1.lines[k].insn == p2.lines[k].insn);
  }
  CHECK(render_program(p2) == r1);
}

TEST_CASE("property: render/parse fixed point over random corpus") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    std::string text = testsupport::rand_program_text(seed, 600);
    Program p1 = parse_program(text);
    std::string c1 = render_program(p1);
    Program p2 = parse_program(c1);
    std::string c2 = render_program(p2);
    CHECK(c1 == c2);
    REQUIRE(p1.lines.size() == p2.lines.size());
    for (size_t k = 0; k < p1.lines.size(); ++k)
      if (p1.lines[k].kind == Line::Kind::Instr)
        CHECK(p1.lines[k].insn == p2.lines[k].insn);
  }
}

TEST_CASE("encoded_length: frozen reference-assembler oracle") {
  int checked = 0;
  for (const auto& c : kEncodingOracle) {
    Instruction i = parse_one(c.text);
    INFO(c.text);
    CHECK(encoded_length(i) == c.bytes);
    ++checked;
  }
  CHECK(checked > 900);
}

TEST_CASE("encoded_length: spec examples and fixed control sizes") {
  CHECK(encoded_length(parse_one("ret")) == 1);
  CHECK(encoded_length(std::vector<Instruction>{}) == 0);
  int xor_len = encoded_length(parse_one("xor %eax, %eax"));
  int mov_len = encoded_length(parse_one("mov $0x0, %eax"));
  CHECK(xor_len < mov_len);
  CHECK(encoded_length(parse_one("call f")) == 5);
  CHECK(encoded_length(parse_one("jmp f")) == 5);
  CHECK(encoded_length(parse_one("jne f")) == 6);
  CHECK(encoded_length(parse_one("mov $sym, %rdi")) == 7);
  CHECK(encoded_length(parse_one("push $sym")) == 5);
}

TEST_CASE("encoded_length: sum over sequence, strictly positive elements") {
  Program p = parse_program("push %rbp\nmov %rsp, %rbp\npop %rdi\nret\n");
  std::vector<Instruction> seq;
  for (auto& l : p.lines) seq.push_back(l.insn);
  int total = encoded_length(seq);
  int sum = 0;
  for (auto& i : seq) {
    int n = encoded_length(i);
    CHECK(n > 0);
    sum += n;
  }
  CHECK(total == sum);
  seq.pop_back();
  CHECK(encoded_length(seq) < total);
}
