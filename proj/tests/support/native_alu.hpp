#pragma once

// Native-execution oracle for ALU flag semantics: runs each instruction on
// the host CPU with a caller-supplied RFLAGS image and captures the result
// plus the full flag state. x86-64 only; the translation unit including this
// must be compiled with -mno-red-zone (the stubs push below %rsp).

#include <cstdint>

#if !defined(__x86_64__)
#error "native_alu.hpp requires an x86-64 host"
#endif

namespace divasm::testsupport {

struct NativeOut {
  uint64_t value;
  uint64_t rflags;
};

// RFLAGS bit positions
inline constexpr uint64_t kNativeCF = 1ull << 0;
inline constexpr uint64_t kNativePF = 1ull << 2;
inline constexpr uint64_t kNativeZF = 1ull << 6;
inline constexpr uint64_t kNativeSF = 1ull << 7;
inline constexpr uint64_t kNativeOF = 1ull << 11;
inline constexpr uint64_t kNativeBase = 0x202;  // reserved bit 1 + IF

#define DIVASM_NATIVE_BIN(name, insn, ctype, constraint)                    \
  inline NativeOut name(uint64_t a, uint64_t b, uint64_t rflags_in) {       \
    ctype out = static_cast<ctype>(a);                                      \
    uint64_t rf;                                                            \
    asm volatile("pushq %2\n\tpopfq\n\t" insn                               \
                 " %3, %0\n\tpushfq\n\tpopq %1"                             \
                 : "+" constraint(out), "=r"(rf)                            \
                 : "r"(rflags_in), constraint(static_cast<ctype>(b))        \
                 : "cc");                                                   \
    return {static_cast<uint64_t>(out), rf};                                \
  }

#define DIVASM_NATIVE_RO(name, insn, ctype, constraint)                     \
  inline NativeOut name(uint64_t a, uint64_t b, uint64_t rflags_in) {       \
    ctype lhs = static_cast<ctype>(a);                                      \
    uint64_t rf;                                                            \
    asm volatile("pushq %2\n\tpopfq\n\t" insn                               \
                 " %3, %0\n\tpushfq\n\tpopq %1"                             \
                 : "+" constraint(lhs), "=r"(rf)                            \
                 : "r"(rflags_in), constraint(static_cast<ctype>(b))        \
                 : "cc");                                                   \
    return {static_cast<uint64_t>(lhs), rf};                                \
  }

#define DIVASM_NATIVE_UN(name, insn, ctype, constraint)                     \
  inline NativeOut name(uint64_t a, uint64_t, uint64_t rflags_in) {         \
    ctype out = static_cast<ctype>(a);                                      \
    uint64_t rf;                                                            \
    asm volatile("pushq %2\n\tpopfq\n\t" insn                               \
                 " %0\n\tpushfq\n\tpopq %1"                                 \
                 : "+" constraint(out), "=r"(rf)                            \
                 : "r"(rflags_in)                                           \
                 : "cc");                                                   \
    return {static_cast<uint64_t>(out), rf};                                \
  }

#define DIVASM_NATIVE_SHIFT(name, insn, ctype, constraint)                  \
  inline NativeOut name(uint64_t a, uint64_t count, uint64_t rflags_in) {   \
    ctype out = static_cast<ctype>(a);                                      \
    uint64_t rf;                                                            \
    asm volatile("pushq %2\n\tpopfq\n\t" insn                               \
                 " %%cl, %0\n\tpushfq\n\tpopq %1"                           \
                 : "+" constraint(out), "=r"(rf)                            \
                 : "r"(rflags_in), "c"(static_cast<uint8_t>(count))         \
                 : "cc");                                                   \
    return {static_cast<uint64_t>(out), rf};                                \
  }

#define DIVASM_NATIVE_WIDTHS(kind, base, insn)                              \
  DIVASM_NATIVE_##kind(base##_8, insn "b", uint8_t, "q")                    \
  DIVASM_NATIVE_##kind(base##_16, insn "w", uint16_t, "r")                  \
  DIVASM_NATIVE_##kind(base##_32, insn "l", uint32_t, "r")                  \
  DIVASM_NATIVE_##kind(base##_64, insn "q", uint64_t, "r")

DIVASM_NATIVE_WIDTHS(BIN, native_add, "add")
DIVASM_NATIVE_WIDTHS(BIN, native_sub, "sub")
DIVASM_NATIVE_WIDTHS(BIN, native_xor, "xor")
DIVASM_NATIVE_WIDTHS(BIN, native_and, "and")
DIVASM_NATIVE_WIDTHS(BIN, native_or, "or")
DIVASM_NATIVE_WIDTHS(RO, native_cmp, "cmp")
DIVASM_NATIVE_WIDTHS(RO, native_test, "test")
DIVASM_NATIVE_WIDTHS(UN, native_inc, "inc")
DIVASM_NATIVE_WIDTHS(UN, native_dec, "dec")
DIVASM_NATIVE_WIDTHS(UN, native_neg, "neg")
DIVASM_NATIVE_WIDTHS(UN, native_not, "not")
DIVASM_NATIVE_WIDTHS(SHIFT, native_shl, "shl")
DIVASM_NATIVE_WIDTHS(SHIFT, native_shr, "shr")
DIVASM_NATIVE_WIDTHS(SHIFT, native_sar, "sar")

#undef DIVASM_NATIVE_BIN
#undef DIVASM_NATIVE_RO
#undef DIVASM_NATIVE_UN
#undef DIVASM_NATIVE_SHIFT
#undef DIVASM_NATIVE_WIDTHS

using NativeFn = NativeOut (*)(uint64_t, uint64_t, uint64_t);

}  // namespace divasm::testsupport
