#include "divasm/diversify.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "divasm/emulator.hpp"

namespace divasm {

int DiversityPlan::choice_for(int block_id, int variant, int available) const {
  if (available <= 0) return 0;
  if (strategy == Strategy::RoundRobin) return variant % available;
  uint64_t h = seed;
  h ^= 0x9E3779B97F4A7C15ull * (static_cast<uint64_t>(block_id) + 1);
  h ^= 0xC2B2AE3D27D4EB4Full * (static_cast<uint64_t>(variant) + 1);
  h ^= h >> 29;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= h >> 32;
  return static_cast<int>(h % static_cast<uint64_t>(available));
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

SpliceResult splice(const Program& p, const Cfg& cfg, const DiversityPlan& plan,
                    int variant) {
  // selected block spans, checked for overlap
  struct Span {
    size_t first, last;
    const BasicBlock* block;
    const RewriteCandidate* rewrite;
  };
  std::map<size_t, Span> spans;  // keyed by first line
  for (const auto& [block_id, rewrites] : plan.selections) {
    if (block_id < 0 || block_id >= static_cast<int>(cfg.blocks.size()))
      throw SpliceConflict("selection references unknown block " +
                           std::to_string(block_id));
    if (rewrites.empty())
      throw SpliceConflict("no rewrites for block " + std::to_string(block_id));
    const BasicBlock& b = cfg.blocks[block_id];
    int choice = plan.choice_for(block_id, variant,
                                 static_cast<int>(rewrites.size()));
    auto [it, fresh] = spans.emplace(
        b.first_line, Span{b.first_line, b.last_line, &b, &rewrites[choice]});
    if (!fresh) throw SpliceConflict("two selections overlap block " + b.label);
  }
  for (auto it = spans.begin(); it != spans.end(); ++it) {
    auto next = std::next(it);
    if (next != spans.end() && next->second.first <= it->second.last)
      throw SpliceConflict("overlapping selection spans");
  }

  SpliceResult out;
  std::string text;
  size_t k = 0;
  while (k < p.lines.size()) {
    auto it = spans.find(k);
    if (it == spans.end()) {
      const Line& l = p.lines[k];
      switch (l.kind) {
        case Line::Kind::Label: text += l.label + ":\n"; break;
        case Line::Kind::Instr: text += render_instruction(l.insn) + "\n"; break;
        case Line::Kind::Opaque: text += l.text + "\n"; break;
      }
      ++k;
      continue;
    }
    const Span& span = it->second;
    for (size_t j = span.first; j <= span.last; ++j)
      if (p.lines[j].kind == Line::Kind::Label)
        out.dropped_labels.push_back(p.lines[j].label);
    for (const auto& insn : span.rewrite->body)
      text += render_instruction(insn) + "\n";
    k = span.last + 1;
  }
  out.program = parse_program(text);
  return out;
}

EmitResult emit_firmware_rewrites(const Program& p, const Cfg& cfg,
                                  const DiversityPlan& plan, int n,
                                  const std::string& out_dir, uint64_t seed) {
  namespace fs = std::filesystem;
  EmitResult out;
  fs::create_directories(out_dir);

  int min_available = INT32_MAX;
  for (const auto& [blk, rewrites] : plan.selections)
    min_available = std::min(min_available, static_cast<int>(rewrites.size()));
  if (!plan.selections.empty() && n > min_available)
    out.warnings.push_back("variants exceed available rewrites; per-variant "
                           "choices cycle (k mod available)");

  int original_bytes = 0;
  for (const auto& l : p.lines)
    if (l.kind == Line::Kind::Instr) original_bytes += encoded_length(l.insn);

  nlohmann::json jvariants = nlohmann::json::array();
  for (int v = 0; v < n; ++v) {
    SpliceResult sr = splice(p, cfg, plan, v);
    if (v == 0) out.dropped_labels = sr.dropped_labels;
    std::string text = render_program(sr.program);

    int variant_bytes = 0;
    for (const auto& l : sr.program.lines)
      if (l.kind == Line::Kind::Instr) variant_bytes += encoded_length(l.insn);
    if (variant_bytes > original_bytes)
      throw std::logic_error("SizeRegression: variant " + std::to_string(v) +
                             " grew from " + std::to_string(original_bytes) +
                             " to " + std::to_string(variant_bytes) + " bytes");

    VariantInfo info;
    info.variant = v;
    info.file = "variant_" + std::to_string(v) + ".s";
    for (const auto& [blk, rewrites] : plan.selections)
      info.choices[cfg.blocks[blk].label] =
          plan.choice_for(blk, v, static_cast<int>(rewrites.size()));
    char buf[19];
    snprintf(buf, sizeof buf, "%016llx",
             static_cast<unsigned long long>(fnv1a64(text)));
    info.checksum = buf;

    std::ofstream f(fs::path(out_dir) / info.file, std::ios::binary);
    f << text;
    f.close();

    nlohmann::json jv;
    jv["variant"] = info.variant;
    jv["file"] = info.file;
    jv["choices"] = info.choices;
    jv["checksum"] = info.checksum;
    jv["bytes"] = variant_bytes;
    jvariants.push_back(std::move(jv));
    out.variants.push_back(std::move(info));
  }

  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["original_bytes"] = original_bytes;
  manifest["variants"] = std::move(jvariants);
  manifest["dropped_labels"] = out.dropped_labels;
  manifest["warnings"] = out.warnings;
  out.manifest_json = manifest.dump(2);
  std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::binary);
  mf << out.manifest_json << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Gadget survival
// ---------------------------------------------------------------------------

int block_byte_offset(const BasicBlock& b, int index) {
  int off = 0;
  for (int k = 0; k < index && k < static_cast<int>(b.insns.size()); ++k)
    off += encoded_length(b.insns[k]);
  return off;
}

bool gadget_present_at_offset(const std::vector<Instruction>& insns, int off,
                              const GadgetClass& cls, bool* off_boundary) {
  if (off_boundary) *off_boundary = false;
  int cur = 0;
  for (size_t k = 0; k <= insns.size(); ++k) {
    if (cur == off) {
      std::span<const Instruction> suffix(insns.data() + k, insns.size() - k);
      if (suffix.empty()) return false;
      return classify_sequence(suffix).count(cls) != 0;
    }
    if (cur > off || k == insns.size()) break;
    cur += encoded_length(insns[k]);
  }
  if (off_boundary) *off_boundary = true;
  return false;
}

SurvivalReport gadget_survival_report(const Cfg& original_cfg,
                                      const Cfg& variant_cfg,
                                      const std::vector<GadgetRecord>& records) {
  SurvivalReport report;
  for (const auto& rec : records) {
    SurvivalEntry entry;
    entry.record = rec;
    const BasicBlock& ob = original_cfg.blocks[rec.block];

    // corresponding variant block: by head label, or by position (splicing
    // preserves block count and order) for unlabeled blocks
    const BasicBlock* vb = ob.labeled ? variant_cfg.block_by_label(ob.label) : nullptr;
    if (!vb && original_cfg.blocks.size() == variant_cfg.blocks.size())
      vb = &variant_cfg.blocks[rec.block];
    if (vb) {
      // same class (and target) still present among the block's suffixes
      for (size_t len = 1; len <= vb->insns.size() && !entry.survived; ++len) {
        std::span<const Instruction> suffix(vb->insns.data() + vb->insns.size() - len,
                                            len);
        if (classify_sequence(suffix).count(rec.cls)) entry.survived = true;
      }
      // call-class gadgets survive iff the same risky callee is still called
      if (rec.cls.kind == GadgetClass::Kind::Call)
        entry.survived = vb->term.kind == Terminator::Kind::Call &&
                         !vb->term.indirect && vb->term.target == rec.cls.callee;
    }
    report.total += 1;
    report.survived += entry.survived ? 1 : 0;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

std::string survival_to_json(const SurvivalReport& report, int variant) {
  nlohmann::json j;
  j["variant"] = variant;
  j["total"] = report.total;
  j["survived"] = report.survived;
  j["eliminated"] = report.total - report.survived;
  j["elimination_rate"] = report.elimination_rate();
  std::map<std::string, std::pair<int, int>> per_class;  // total, survived
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries) {
    std::string cls = gadget_class_name(e.record.cls.kind);
    per_class[cls].first += 1;
    per_class[cls].second += e.survived ? 1 : 0;
    nlohmann::json je;
    je["block"] = e.record.block;
    je["index"] = e.record.index;
    je["class"] = cls;
    if (e.record.cls.kind == GadgetClass::Kind::ChangeRegister)
      je["target"] = gpr_name(e.record.cls.target);
    je["survived"] = e.survived;
    entries.push_back(std::move(je));
  }
  nlohmann::json pc = nlohmann::json::object();
  for (auto& [cls, counts] : per_class)
    pc[cls] = {{"total", counts.first}, {"survived", counts.second}};
  j["per_class"] = std::move(pc);
  j["records"] = std::move(entries);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Payload simulation
// ---------------------------------------------------------------------------

PayloadSpec payload_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  PayloadSpec spec;
  spec.description = j.value("description", "");
  for (const auto& g : j.at("gadgets")) {
    PayloadGadget pg;
    pg.label = g.at("label").get<std::string>();
    std::string cls = g.at("class").get<std::string>();
    if (cls == "change-register") {
      auto reg = lookup_register(g.at("target_reg").get<std::string>());
      if (!reg) throw std::runtime_error("payload: unknown target_reg");
      pg.cls = GadgetClass::change_register(reg->parent);
    } else if (cls == "change-memory") {
      pg.cls = GadgetClass::change_memory();
    } else if (cls == "call") {
      pg.cls = GadgetClass::call(g.at("callee").get<std::string>());
    } else {
      throw std::runtime_error("payload: unknown class " + cls);
    }
    spec.gadgets.push_back(std::move(pg));
  }
  return spec;
}

std::string payload_to_json(const PayloadSpec& spec) {
  nlohmann::json j;
  j["description"] = spec.description;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : spec.gadgets) {
    nlohmann::json je;
    je["label"] = g.label;
    je["class"] = gadget_class_name(g.cls.kind);
    if (g.cls.kind == GadgetClass::Kind::ChangeRegister)
      je["target_reg"] = gpr_name(g.cls.target);
    if (g.cls.kind == GadgetClass::Kind::Call) je["callee"] = g.cls.callee;
    arr.push_back(std::move(je));
  }
  j["gadgets"] = std::move(arr);
  return j.dump(2);
}

namespace {

// Execute a gadget suffix from an attacker-shaped state: sentinels planted on
// the stack, every other register parked on a readable scratch page.
bool class_effect_holds(std::span<const Instruction> suffix, const GadgetClass& cls,
                        const ProgramImage* image) {
  if (suffix.empty()) return false;
  if (cls.kind == GadgetClass::Kind::Call) {
    const Instruction& last = suffix.back();
    return last.mn == Mnemonic::Call && !last.indirect &&
           last.ops[0].sym == cls.callee;
  }

  MachineState s = make_default_state();
  auto fp = std::make_shared<Footprint>(*s.fp);
  const uint64_t scratch_base = 0x00200000;
  const uint64_t scratch_size = 0x40000;
  fp->add(scratch_base, scratch_base + scratch_size);
  if (image) image->add_data_footprint(*fp);
  s.fp = fp;

  std::set<uint64_t> sentinels;
  for (int slot = 0; slot < 8; ++slot) {
    uint64_t v = 0x5EA7000000000000ull + 0x1111ull * (slot + 1);
    sentinels.insert(v);
    uint64_t addr = s.reg(Gpr::Rsp) + 8 * slot;
    for (int k = 0; k < 8; ++k)
      s.mem[addr + k] = static_cast<uint8_t>(v >> (8 * k));
  }
  for (int g = 0; g < kGprCount; ++g)
    if (static_cast<Gpr>(g) != Gpr::Rsp)
      s.gpr[g] = scratch_base + 0x1000ull * (g + 1);

  ExecResult r = run_block(s, suffix, static_cast<int>(suffix.size()) + 2, image);
  if (!r.normal()) return false;

  if (cls.kind == GadgetClass::Kind::ChangeRegister)
    return sentinels.count(r.state.reg(cls.target)) != 0;

  // ChangeMemory: some non-stack byte was written
  for (uint64_t addr : r.state.dirty)
    if (addr < r.state.stack_lo || addr >= r.state.stack_hi) return true;
  return false;
}

}  // namespace

PayloadCheckResult payload_check(const Cfg& original_cfg, const Program& variant,
                                 const std::string& entry,
                                 const PayloadSpec& payload) {
  PayloadCheckResult out;
  Cfg vcfg = build_cfg(variant, entry);
  ProgramImage vimage = build_image(variant);

  int idx = 0;
  for (const auto& g : payload.gadgets) {
    GadgetVerdict verdict;
    verdict.label = g.label;
    verdict.verdict = "unresolvable";

    // the label may have survived the splice (unselected block, or block head)
    if (auto q = block_at(vcfg, g.label)) {
      std::vector<Instruction> suffix(q->block->insns.begin() + q->insn_index,
                                      q->block->insns.end());
      verdict.verdict =
          class_effect_holds(suffix, g.cls, &vimage) ? "held" : "broken";
    } else if (auto oq = block_at(original_cfg, g.label)) {
      // replaced block: the attacker's address is the original byte offset
      const BasicBlock& ob = *oq->block;
      int off = block_byte_offset(ob, oq->insn_index);
      if (const BasicBlock* vb = vcfg.block_by_label(ob.label)) {
        int cur = 0;
        bool matched = false;
        for (size_t k = 0; k <= vb->insns.size(); ++k) {
          if (cur == off && k < vb->insns.size()) {
            std::vector<Instruction> suffix(vb->insns.begin() + k,
                                            vb->insns.end());
            verdict.verdict =
                class_effect_holds(suffix, g.cls, &vimage) ? "held" : "broken";
            matched = true;
            break;
          }
          if (k == vb->insns.size() || cur > off) break;
          cur += encoded_length(vb->insns[k]);
        }
        if (!matched) verdict.verdict = "misaligned";
      }
    }

    if (!verdict.held() && !out.first_broken) out.first_broken = idx;
    out.verdicts.push_back(std::move(verdict));
    ++idx;
  }
  out.feasible = !out.first_broken.has_value();
  return out;
}

std::string payload_result_to_json(const PayloadCheckResult& r, int variant) {
  nlohmann::json j;
  j["variant"] = variant;
  j["feasible"] = r.feasible;
  if (r.first_broken)
    j["first_broken"] = *r.first_broken;
  else
    j["first_broken"] = nullptr;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : r.verdicts)
    arr.push_back({{"label", v.label}, {"verdict", v.verdict}});
  j["gadgets"] = std::move(arr);
  return j.dump(2);
}

}  // namespace divasm
