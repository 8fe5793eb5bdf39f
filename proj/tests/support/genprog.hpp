#pragma once

// Seeded random generator for subset programs, used by the round-trip and
// CFG property tests.

#include <random>
#include <string>
#include <vector>

#include "divasm/asm_core.hpp"

namespace divasm::testsupport {

inline Register rand_reg(std::mt19937_64& rng, uint8_t width) {
  static const Gpr pool[] = {Gpr::Rax, Gpr::Rcx, Gpr::Rdx, Gpr::Rbx,
                             Gpr::Rbp, Gpr::Rsi, Gpr::Rdi, Gpr::R8,
                             Gpr::R9,  Gpr::R10, Gpr::R11, Gpr::R12,
                             Gpr::R13, Gpr::R14, Gpr::R15};
  return Register{pool[rng() % std::size(pool)], width};
}

inline Operand rand_mem(std::mt19937_64& rng) {
  MemRef m;
  m.base = Register{rand_reg(rng, 64).parent, 64};
  if (rng() % 3 == 0) {
    Register idx = rand_reg(rng, 64);
    m.index = idx;
    m.scale = static_cast<uint8_t>(1 << (rng() % 4));
  }
  switch (rng() % 4) {
    case 0: m.disp = 0; break;
    case 1: m.disp = static_cast<int32_t>(rng() % 128); break;
    case 2: m.disp = -static_cast<int32_t>(rng() % 128); break;
    default: m.disp = static_cast<int32_t>(rng() % 0x10000) - 0x8000; break;
  }
  return Operand::make_mem(m);
}

// One random non-control instruction.
inline Instruction rand_alu(std::mt19937_64& rng) {
  static const uint8_t widths[] = {8, 16, 32, 64};
  Instruction i;
  uint8_t w = widths[rng() % 4];
  switch (rng() % 9) {
    case 0: {  // binary reg,reg
      static const Mnemonic mns[] = {Mnemonic::Mov, Mnemonic::Add, Mnemonic::Sub,
                                     Mnemonic::Xor, Mnemonic::And, Mnemonic::Or,
                                     Mnemonic::Cmp, Mnemonic::Test};
      i.mn = mns[rng() % 8];
      i.width = w;
      i.ops = {Operand::make_reg(rand_reg(rng, w)), Operand::make_reg(rand_reg(rng, w))};
      break;
    }
    case 1: {  // imm,reg
      static const Mnemonic mns[] = {Mnemonic::Add, Mnemonic::Sub, Mnemonic::Xor,
                                     Mnemonic::And, Mnemonic::Or, Mnemonic::Cmp};
      i.mn = mns[rng() % 6];
      i.width = w;
      int64_t imm = static_cast<int64_t>(rng() % 0x200) - 0x100;
      if (w == 8) imm = static_cast<int64_t>(rng() % 0x80);
      i.ops = {Operand::make_imm(imm), Operand::make_reg(rand_reg(rng, w))};
      break;
    }
    case 2: {  // mov imm,reg
      i.mn = Mnemonic::Mov;
      i.width = w;
      int64_t imm = static_cast<int64_t>(rng() % (w == 8 ? 0x100 : 0x1000));
      i.ops = {Operand::make_imm(imm), Operand::make_reg(rand_reg(rng, w))};
      break;
    }
    case 3: {  // mem,reg
      static const Mnemonic mns[] = {Mnemonic::Mov, Mnemonic::Add, Mnemonic::Cmp};
      i.mn = mns[rng() % 3];
      i.width = w;
      i.ops = {rand_mem(rng), Operand::make_reg(rand_reg(rng, w))};
      break;
    }
    case 4: {  // reg,mem
      static const Mnemonic mns[] = {Mnemonic::Mov, Mnemonic::Sub, Mnemonic::Or};
      i.mn = mns[rng() % 3];
      i.width = w;
      i.ops = {Operand::make_reg(rand_reg(rng, w)), rand_mem(rng)};
      break;
    }
    case 5: {  // unary
      static const Mnemonic mns[] = {Mnemonic::Inc, Mnemonic::Dec, Mnemonic::Neg,
                                     Mnemonic::Not};
      i.mn = mns[rng() % 4];
      i.width = w;
      i.ops = {Operand::make_reg(rand_reg(rng, w))};
      break;
    }
    case 6: {  // shift
      static const Mnemonic mns[] = {Mnemonic::Shl, Mnemonic::Shr, Mnemonic::Sar};
      i.mn = mns[rng() % 3];
      i.width = w;
      Operand count = rng() % 4 == 0 ? Operand::make_reg(Register{Gpr::Rcx, 8})
                                     : Operand::make_imm(1 + rng() % (w - 1));
      i.ops = {count, Operand::make_reg(rand_reg(rng, w))};
      break;
    }
    case 7: {  // push
      i.mn = Mnemonic::Push;
      i.width = 64;
      i.ops = {rng() % 2 ? Operand::make_reg(rand_reg(rng, 64))
                         : Operand::make_imm(static_cast<int64_t>(rng() % 0x100))};
      break;
    }
    default: {  // lea
      i.mn = Mnemonic::Lea;
      i.width = w == 8 ? 64 : w;
      i.ops = {rand_mem(rng), Operand::make_reg(rand_reg(rng, i.width))};
      break;
    }
  }
  return i;
}

// Random subset program text with labels, directives, and terminators.
inline std::string rand_program_text(uint64_t seed, int min_instructions) {
  std::mt19937_64 rng(seed);
  std::string out = ".text\n";
  int emitted = 0;
  int label_n = 0;
  while (emitted < min_instructions) {
    out += "f" + std::to_string(label_n++) + ":\n";
    int n = 2 + static_cast<int>(rng() % 6);
    for (int k = 0; k < n; ++k, ++emitted)
      out += "    " + render_instruction(rand_alu(rng)) + "\n";
    switch (rng() % 4) {
      case 0: out += "    ret\n"; break;
      case 1: out += "    jmp f" + std::to_string(rng() % (label_n + 4)) + "\n"; break;
      case 2: {
        Instruction j;
        j.mn = jump_for(static_cast<Cond>(rng() % 12));
        j.width = 64;
        j.ops = {Operand::make_label("f" + std::to_string(rng() % (label_n + 4)))};
        out += "    " + render_instruction(j) + "\n";
        break;
      }
      default: out += "    call f" + std::to_string(rng() % (label_n + 4)) + "\n"; break;
    }
    emitted += 1;
    if (rng() % 5 == 0) out += "    .p2align 4\n";
  }
  // make dangling targets real
  for (int k = label_n; k < label_n + 4; ++k)
    out += "f" + std::to_string(k) + ":\n    ret\n";
  return out;
}

}  // namespace divasm::testsupport
