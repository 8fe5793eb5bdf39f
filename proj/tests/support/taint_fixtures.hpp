#pragma once

// Six hand-traced taint fixtures. Expected verdicts derive from manual
// data-flow traces of each program, written down before the analysis existed.

#include <string>
#include <vector>

namespace divasm::testsupport {

struct TaintFixture {
  const char* name;
  const char* source;
  const char* callee;        // observation point of interest
  bool expect_selected;      // Type M verdict for that call site
  bool expect_warning;       // a RecursionLimit warning must be present
};

inline const std::vector<TaintFixture>& taint_fixtures() {
  static const std::vector<TaintFixture> fx = {
      // 1. main's argument flows straight into strcpy's source operand
      {"tainted-strcpy",
       "main:\n"
       "push %rbp\n"
       "mov %rdi, %rsi\n"
       "mov $dst_buf, %rdi\n"
       "call strcpy\n"
       "pop %rbp\n"
       "ret\n"
       "dst_buf:\n"
       ".zero 64\n",
       "strcpy", true, false},

      // 2. both strcpy operands are program constants
      {"constant-strcpy",
       "main:\n"
       "mov $greeting, %rsi\n"
       "mov $dst_buf, %rdi\n"
       "call strcpy\n"
       "ret\n"
       "greeting:\n"
       ".ascii \"hi\"\n"
       "dst_buf:\n"
       ".zero 64\n",
       "strcpy", false, false},

      // 3. taint returns through one callee: helper copies its argument to
      // %rax, the caller moves it into strcpy's source register
      {"one-level-indirection",
       "main:\n"
       "call helper\n"
       "mov %rax, %rsi\n"
       "mov $dst_buf, %rdi\n"
       "call strcpy\n"
       "ret\n"
       "helper:\n"
       "mov %rdi, %rax\n"
       "ret\n"
       "dst_buf:\n"
       ".zero 64\n",
       "strcpy", true, false},

      // 4. self-recursive helper exceeds the analysis stack: the degraded
      // result is conservatively tainted and carries a warning
      {"depth-limit-recursion",
       "main:\n"
       "call rec\n"
       "mov %rax, %rsi\n"
       "mov $dst_buf, %rdi\n"
       "call strcpy\n"
       "ret\n"
       "rec:\n"
       "test %rdi, %rdi\n"
       "je rec_done\n"
       "sub $0x1, %rdi\n"
       "call rec\n"
       "ret\n"
       "rec_done:\n"
       "mov %rdi, %rax\n"
       "ret\n",
       "strcpy", true, true},

      // 5. getenv's return value is external input
      {"input-callee-source",
       "main:\n"
       "mov $var_name, %rdi\n"
       "call getenv\n"
       "mov %rax, %rsi\n"
       "mov $dst_buf, %rdi\n"
       "call strcpy\n"
       "ret\n"
       "var_name:\n"
       ".ascii \"CFG\"\n"
       "dst_buf:\n"
       ".zero 64\n",
       "strcpy", true, false},

      // 6. tainted argument, but printf is not on the risky list
      {"non-risky-callee",
       "main:\n"
       "mov %rdi, %rsi\n"
       "mov $fmt, %rdi\n"
       "call printf\n"
       "ret\n"
       "fmt:\n"
       ".ascii \"%p\"\n",
       "printf", false, false},
  };
  return fx;
}

}  // namespace divasm::testsupport
