#include "divasm/gadgets.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>

namespace divasm {

std::string gadget_class_name(GadgetClass::Kind k) {
  switch (k) {
    case GadgetClass::Kind::ChangeRegister: return "change-register";
    case GadgetClass::Kind::ChangeMemory: return "change-memory";
    case GadgetClass::Kind::Call: return "call";
  }
  return "?";
}

namespace {

// registers an instruction writes (canonical parents)
std::set<Gpr> defined_gprs(const Instruction& i) {
  std::set<Gpr> out;
  auto dst_reg = [&](const Operand& o) {
    if (o.kind == Operand::Kind::Reg) out.insert(o.reg.parent);
  };
  switch (i.mn) {
    case Mnemonic::Mov:
    case Mnemonic::Movabs:
    case Mnemonic::Lea:
    case Mnemonic::Add:
    case Mnemonic::Sub:
    case Mnemonic::Xor:
    case Mnemonic::And:
    case Mnemonic::Or:
      dst_reg(i.ops[1]);
      break;
    case Mnemonic::Inc:
    case Mnemonic::Dec:
    case Mnemonic::Neg:
    case Mnemonic::Not:
      dst_reg(i.ops[0]);
      break;
    case Mnemonic::Shl:
    case Mnemonic::Shr:
    case Mnemonic::Sar:
      dst_reg(i.ops[1]);
      break;
    case Mnemonic::Push:
      out.insert(Gpr::Rsp);
      break;
    case Mnemonic::Pop:
      dst_reg(i.ops[0]);
      out.insert(Gpr::Rsp);
      break;
    default:
      break;
  }
  return out;
}

// the ChangeRegister-defining load an instruction performs, if any
std::optional<Gpr> cr_load_target(const Instruction& i) {
  switch (i.mn) {
    case Mnemonic::Pop:
      if (i.ops[0].kind == Operand::Kind::Reg &&
          i.ops[0].reg.parent != Gpr::Rsp)
        return i.ops[0].reg.parent;
      return std::nullopt;
    case Mnemonic::Mov:
    case Mnemonic::Movabs:
      if (i.ops[1].kind == Operand::Kind::Reg &&
          i.ops[1].reg.parent != Gpr::Rsp &&
          (i.ops[0].kind == Operand::Kind::Imm ||
           i.ops[0].kind == Operand::Kind::SymAddr ||
           i.ops[0].kind == Operand::Kind::Mem))
        return i.ops[1].reg.parent;
      return std::nullopt;
    default:
      return std::nullopt;
  }
}

bool stores_register_to_memory(const Instruction& i) {
  switch (i.mn) {
    case Mnemonic::Mov:
    case Mnemonic::Add:
    case Mnemonic::Sub:
    case Mnemonic::Xor:
    case Mnemonic::And:
    case Mnemonic::Or:
      return i.ops[0].kind == Operand::Kind::Reg &&
             i.ops[1].kind == Operand::Kind::Mem;
    default:
      return false;
  }
}

bool ends_in_transfer(std::span<const Instruction> seq) {
  if (seq.empty()) return false;
  Mnemonic m = seq.back().mn;
  return m == Mnemonic::Ret || m == Mnemonic::Jmp || m == Mnemonic::Call;
}

}  // namespace

std::set<GadgetClass> classify_sequence(std::span<const Instruction> seq) {
  std::set<GadgetClass> out;
  if (!ends_in_transfer(seq)) return out;

  for (size_t k = 0; k < seq.size(); ++k) {
    if (auto target = cr_load_target(seq[k])) {
      bool overwritten = false;
      for (size_t j = k + 1; j < seq.size(); ++j)
        if (defined_gprs(seq[j]).count(*target)) overwritten = true;
      if (!overwritten) out.insert(GadgetClass::change_register(*target));
    }
    if (stores_register_to_memory(seq[k]))
      out.insert(GadgetClass::change_memory());
  }
  const Instruction& last = seq.back();
  if (last.mn == Mnemonic::Call && !last.indirect)
    out.insert(GadgetClass::call(last.ops[0].sym));
  return out;
}

std::vector<GadgetRecord> scan_gadgets(const Cfg& cfg, const ScanOptions& opts) {
  std::vector<GadgetRecord> records;
  std::set<std::string> risky(opts.risky_callees.begin(), opts.risky_callees.end());

  for (const auto& b : cfg.blocks) {
    const auto& insns = b.insns;
    if (insns.empty()) continue;
    if (ends_in_transfer(insns)) {
      int max_len = std::min<int>(opts.max_len, static_cast<int>(insns.size()));
      for (int len = 1; len <= max_len; ++len) {
        int start = static_cast<int>(insns.size()) - len;
        std::span<const Instruction> suffix(insns.data() + start, len);
        for (const auto& cls : classify_sequence(suffix)) {
          if (cls.kind == GadgetClass::Kind::Call) continue;  // via call edges
          GadgetRecord r;
          r.block = b.id;
          r.index = start;
          r.cls = cls;
          r.sequence.assign(suffix.begin(), suffix.end());
          r.source_scanner = "suffix-scan";
          records.push_back(std::move(r));
        }
      }
    }
    if (b.term.kind == Terminator::Kind::Call && !b.term.indirect &&
        risky.count(b.term.target)) {
      GadgetRecord r;
      r.block = b.id;
      r.index = static_cast<int>(insns.size()) - 1;
      r.cls = GadgetClass::call(b.term.target);
      r.sequence = {insns.back()};
      r.source_scanner = "call-edge-scan";
      records.push_back(std::move(r));
    }
  }

  std::sort(records.begin(), records.end(),
            [](const GadgetRecord& a, const GadgetRecord& b) {
              if (a.block != b.block) return a.block < b.block;
              if (a.index != b.index) return a.index < b.index;
              return a.cls < b.cls;
            });
  return records;
}

std::set<int> select_type_r(const std::vector<GadgetRecord>& records,
                            const TypeRFilter& filter) {
  std::set<int> out;
  for (const auto& r : records) {
    if (!filter.kinds.empty() && !filter.kinds.count(r.cls.kind)) continue;
    if (r.cls.kind == GadgetClass::Kind::ChangeRegister &&
        !filter.registers.empty() && !filter.registers.count(r.cls.target))
      continue;
    out.insert(r.block);
  }
  return out;
}

std::string census_to_json(const Cfg& cfg, const std::vector<GadgetRecord>& records) {
  std::map<Gpr, std::set<int>> cr_blocks;
  std::set<int> cm_blocks;
  std::set<std::string> call_callees;
  std::set<int> call_blocks;
  int call_total = 0;
  std::map<int, std::set<GadgetClass::Kind>> kinds_per_block;

  for (const auto& r : records) {
    kinds_per_block[r.block].insert(r.cls.kind);
    switch (r.cls.kind) {
      case GadgetClass::Kind::ChangeRegister:
        cr_blocks[r.cls.target].insert(r.block);
        break;
      case GadgetClass::Kind::ChangeMemory:
        cm_blocks.insert(r.block);
        break;
      case GadgetClass::Kind::Call:
        call_callees.insert(r.cls.callee);
        call_blocks.insert(r.block);
        ++call_total;
        break;
    }
  }

  nlohmann::json j;
  j["total_blocks"] = cfg.blocks.size();
  nlohmann::json cr = nlohmann::json::object();
  for (auto& [g, blocks] : cr_blocks) cr[gpr_name(g)] = blocks.size();
  j["change_register"] = std::move(cr);
  j["change_memory"]["blocks"] = cm_blocks.size();
  j["call"]["unique"] = call_callees.size();
  j["call"]["total"] = call_total;
  j["call"]["blocks"] = call_blocks.size();
  int overlap = 0;
  for (auto& [blk, kinds] : kinds_per_block)
    if (kinds.size() > 1) ++overlap;
  j["overlap"]["criterion"] = "same-block";
  j["overlap"]["blocks"] = overlap;
  return j.dump(2);
}

std::string records_to_json(const std::vector<GadgetRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json e;
    e["block"] = r.block;
    e["index"] = r.index;
    e["class"] = gadget_class_name(r.cls.kind);
    if (r.cls.kind == GadgetClass::Kind::ChangeRegister)
      e["target"] = gpr_name(r.cls.target);
    if (r.cls.kind == GadgetClass::Kind::Call) e["callee"] = r.cls.callee;
    std::string seq;
    for (auto& i : r.sequence) {
      if (!seq.empty()) seq += "; ";
      seq += render_instruction(i);
    }
    e["sequence"] = seq;
    e["scanner"] = r.source_scanner;
    arr.push_back(std::move(e));
  }
  return arr.dump(2);
}

}  // namespace divasm
