#include "divasm/cfg.hpp"

#include <json.hpp>

#include <deque>
#include <set>

namespace divasm {

const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::Taken: return "taken";
    case EdgeKind::FallThrough: return "fallthrough";
    case EdgeKind::Jump: return "jump";
    case EdgeKind::Call: return "call";
    case EdgeKind::CallFallThrough: return "call-fallthrough";
  }
  return "?";
}

const BasicBlock* Cfg::block_by_label(const std::string& l) const {
  auto it = label_map.find(l);
  if (it == label_map.end() || it->second.second != 0) return nullptr;
  return &blocks[it->second.first];
}

Cfg build_cfg(const Program& p, const std::string& entry) {
  if (!p.has_label(entry)) throw UnknownEntry(entry);

  // jump/call target labels split blocks
  std::set<std::string> split_labels{entry};
  for (const auto& l : p.lines) {
    if (l.kind != Line::Kind::Instr) continue;
    const Instruction& i = l.insn;
    if (is_control_transfer(i.mn) && !i.indirect && !i.ops.empty() &&
        i.ops[0].kind == Operand::Kind::Label && p.has_label(i.ops[0].sym))
      split_labels.insert(i.ops[0].sym);
  }

  // leaders: first instruction, instruction after a terminator or opaque
  // line, instruction under a split label
  std::vector<char> is_leader(p.lines.size(), 0);
  bool next_is_leader = true;
  std::vector<std::string> pending_labels;
  std::map<size_t, std::vector<std::string>> labels_at;  // instr line -> labels
  for (size_t k = 0; k < p.lines.size(); ++k) {
    const Line& l = p.lines[k];
    if (l.kind == Line::Kind::Label) {
      pending_labels.push_back(l.label);
      if (split_labels.count(l.label)) next_is_leader = true;
      continue;
    }
    if (l.kind == Line::Kind::Opaque) {
      next_is_leader = true;
      pending_labels.clear();
      continue;
    }
    if (next_is_leader) is_leader[k] = 1;
    next_is_leader = false;
    if (!pending_labels.empty()) {
      labels_at[k] = pending_labels;
      pending_labels.clear();
    }
    if (is_control_transfer(l.insn.mn)) next_is_leader = true;
  }

  Cfg cfg;

  // collect blocks
  for (size_t k = 0; k < p.lines.size(); ++k) {
    if (p.lines[k].kind != Line::Kind::Instr || !is_leader[k]) continue;
    BasicBlock b;
    b.id = static_cast<int>(cfg.blocks.size());
    b.first_line = k;
    for (size_t j = k; j < p.lines.size(); ++j) {
      const Line& l = p.lines[j];
      if (l.kind == Line::Kind::Opaque) break;
      if (l.kind == Line::Kind::Label) continue;  // interior labels stay inside
      if (j != k && is_leader[j]) break;
      b.insns.push_back(l.insn);
      b.last_line = j;
      if (auto it = labels_at.find(j); it != labels_at.end()) {
        int idx = static_cast<int>(b.insns.size()) - 1;
        for (const auto& lab : it->second) cfg.label_map[lab] = {b.id, idx};
      }
      if (is_control_transfer(l.insn.mn)) break;
    }
    // name: first label attached to the head instruction, else synthetic
    if (auto it = labels_at.find(k); it != labels_at.end() && !it->second.empty()) {
      b.label = it->second.front();
      b.labeled = true;
    } else {
      b.label = "bb" + std::to_string(b.id);
    }

    const Instruction& last = b.insns.back();
    if (is_control_transfer(last.mn)) {
      Terminator t;
      t.indirect = last.indirect;
      if (last.mn == Mnemonic::Ret) {
        t.kind = Terminator::Kind::Ret;
      } else if (last.mn == Mnemonic::Jmp) {
        t.kind = Terminator::Kind::Jmp;
        if (!last.indirect) t.target = last.ops[0].sym;
      } else if (last.mn == Mnemonic::Call) {
        t.kind = Terminator::Kind::Call;
        if (!last.indirect) t.target = last.ops[0].sym;
      } else {
        t.kind = Terminator::Kind::CondJmp;
        t.cc = cond_of(last.mn);
        t.target = last.ops[0].sym;
      }
      b.term = t;
      if (t.indirect) b.diversifiable = false;
    } else {
      b.term.kind = Terminator::Kind::FallThrough;
      b.diversifiable = false;  // flags may be live-out across the fallthrough
    }
    cfg.blocks.push_back(std::move(b));
  }

  // block id that starts at a given line, for fallthrough lookups
  std::map<size_t, int> block_at_line;
  for (const auto& b : cfg.blocks) block_at_line[b.first_line] = b.id;

  auto next_block = [&](const BasicBlock& b) -> std::optional<int> {
    for (size_t j = b.last_line + 1; j < p.lines.size(); ++j) {
      if (auto it = block_at_line.find(j); it != block_at_line.end())
        return it->second;
      if (p.lines[j].kind == Line::Kind::Instr) break;
    }
    return std::nullopt;
  };

  auto target_block = [&](const std::string& sym) -> std::optional<int> {
    auto it = cfg.label_map.find(sym);
    if (it == cfg.label_map.end()) return std::nullopt;
    return it->second.first;  // split labels always map to a block head
  };

  for (const auto& b : cfg.blocks) {
    auto add_edge = [&](std::optional<int> to, EdgeKind kind, const std::string& sym) {
      Cfg::Edge e;
      e.from = b.id;
      e.kind = kind;
      if (to)
        e.to = *to;
      else
        e.external_sym = sym.empty() ? "*indirect*" : sym;
      cfg.edges.push_back(std::move(e));
    };
    switch (b.term.kind) {
      case Terminator::Kind::Ret:
        break;
      case Terminator::Kind::Jmp:
        if (b.term.indirect)
          add_edge(std::nullopt, EdgeKind::Jump, "");
        else
          add_edge(target_block(b.term.target), EdgeKind::Jump, b.term.target);
        break;
      case Terminator::Kind::CondJmp: {
        add_edge(target_block(b.term.target), EdgeKind::Taken, b.term.target);
        if (auto nb = next_block(b)) add_edge(nb, EdgeKind::FallThrough, "");
        break;
      }
      case Terminator::Kind::Call: {
        if (b.term.indirect)
          add_edge(std::nullopt, EdgeKind::Call, "");
        else
          add_edge(target_block(b.term.target), EdgeKind::Call, b.term.target);
        if (auto nb = next_block(b)) add_edge(nb, EdgeKind::CallFallThrough, "");
        break;
      }
      case Terminator::Kind::FallThrough:
        if (auto nb = next_block(b)) add_edge(nb, EdgeKind::FallThrough, "");
        break;
    }
  }

  // reachability from the entry block
  if (auto it = cfg.label_map.find(entry); it != cfg.label_map.end()) {
    cfg.entry = it->second.first;
    std::deque<int> work{cfg.entry};
    std::set<int> seen{cfg.entry};
    while (!work.empty()) {
      int cur = work.front();
      work.pop_front();
      cfg.blocks[cur].reachable = true;
      for (const auto& e : cfg.edges)
        if (e.from == cur && e.to >= 0 && seen.insert(e.to).second)
          work.push_back(e.to);
    }
  }
  for (auto& b : cfg.blocks)
    if (!b.reachable) b.diversifiable = false;

  return cfg;
}

std::optional<BlockQuery> block_at(const Cfg& cfg, const std::string& label) {
  auto it = cfg.label_map.find(label);
  if (it == cfg.label_map.end()) return std::nullopt;
  BlockQuery q;
  q.block = &cfg.blocks[it->second.first];
  q.insn_index = it->second.second;
  q.interior = it->second.second != 0;
  return q;
}

std::string cfg_to_json(const Cfg& cfg) {
  nlohmann::json j;
  j["entry"] = cfg.entry;
  j["nodes"] = nlohmann::json::array();
  for (const auto& b : cfg.blocks) {
    nlohmann::json n;
    n["id"] = b.id;
    n["label"] = b.label;
    n["len"] = b.insns.size();
    n["bytes"] = encoded_length(b.insns);
    n["reachable"] = b.reachable;
    n["diversifiable"] = b.diversifiable;
    j["nodes"].push_back(std::move(n));
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& e : cfg.edges) {
    nlohmann::json je;
    je["from"] = e.from;
    je["to"] = e.to;
    je["kind"] = edge_kind_name(e.kind);
    if (e.to < 0) je["external"] = e.external_sym;
    j["edges"].push_back(std::move(je));
  }
  return j.dump(2);
}

}  // namespace divasm
