#include "divasm/pipeline.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace divasm {

namespace fs = std::filesystem;

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StageError("io", "cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string sanitize_label(const std::string& label) {
  std::string out;
  for (char c : label)
    out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

uint64_t derive_seed(uint64_t master, const std::string& tag) {
  uint64_t h = master ^ 0x9E3779B97F4A7C15ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h == 0 ? 1 : h;
}

namespace {

void write_artifact(const std::string& out_dir, const std::string& rel,
                    const std::string& content, PipelineResult* result) {
  fs::path p = fs::path(out_dir) / rel;
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw StageError("io", "cannot write " + p.string());
  f << content;
  if (!content.empty() && content.back() != '\n') f << "\n";
  if (result) result->artifacts.push_back(rel);
}

struct Loaded {
  Program program;
  Cfg cfg;
  ProgramImage image;
};

Loaded load_input(const PipelineConfig& cfg) {
  Loaded l;
  std::string text = read_text_file(cfg.input_path);
  try {
    l.program = parse_program(text);
  } catch (const SyntaxError& e) {
    throw StageError("parse", e.what());
  }
  try {
    l.cfg = build_cfg(l.program, cfg.entry);
  } catch (const UnknownEntry& e) {
    throw StageError("cfg", e.what());
  }
  l.image = build_image(l.program);
  return l;
}

// candidates that eliminate every located gadget record of the block sort
// before gadget-preserving ones
void order_candidates_eliminating_first(
    std::vector<RewriteCandidate>& rewrites, const BasicBlock& original,
    const std::vector<GadgetRecord>& records) {
  std::vector<std::pair<int, int>> keyed;  // (rank, original index)
  for (size_t k = 0; k < rewrites.size(); ++k) {
    int rank = 0;
    for (const auto& rec : records) {
      if (rec.block != original.id) continue;
      int off = block_byte_offset(original, rec.index);
      if (gadget_present_at_offset(rewrites[k].body, off, rec.cls)) rank = 1;
    }
    keyed.emplace_back(rank, static_cast<int>(k));
  }
  std::stable_sort(keyed.begin(), keyed.end());
  std::vector<RewriteCandidate> ordered;
  for (auto& [rank, idx] : keyed) ordered.push_back(std::move(rewrites[idx]));
  rewrites = std::move(ordered);
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  PipelineResult result;
  Stage stop = cfg.dry_run ? Stage::Select : cfg.stop_after;
  Loaded in = load_input(cfg);
  fs::create_directories(cfg.out_dir);

  // --- scan ---
  write_artifact(cfg.out_dir, "cfg.json", cfg_to_json(in.cfg), &result);
  auto records = scan_gadgets(in.cfg, cfg.scan);
  write_artifact(cfg.out_dir, "records.json", records_to_json(records), &result);
  write_artifact(cfg.out_dir, "census.json", census_to_json(in.cfg, records),
                 &result);
  if (stop == Stage::Scan) return result;

  // --- select: Type R ---
  TypeRFilter filter;
  filter.kinds = cfg.type_r_kinds;
  filter.registers = cfg.type_r_registers;
  result.type_r = select_type_r(records, filter);
  {
    nlohmann::json j;
    j["filter"]["classes"] = [&] {
      std::vector<std::string> v;
      for (auto k : cfg.type_r_kinds) v.push_back(gadget_class_name(k));
      return v;
    }();
    j["filter"]["registers"] = [&] {
      std::vector<std::string> v;
      for (auto g : cfg.type_r_registers) v.push_back(gpr_name(g));
      return v;
    }();
    j["blocks"] = result.type_r;
    write_artifact(cfg.out_dir, "typer.json", j.dump(2), &result);
  }

  // --- select: Type M ---
  std::vector<PointResult> taint_results;
  if (cfg.include_type_m) {
    auto points = default_observation_points(in.cfg, cfg.taint);
    taint_results =
        analyze_reaching_definitions(in.cfg, cfg.entry, points, cfg.taint);
    result.type_m = select_type_m(taint_results, cfg.taint.risky_callees);
  }
  write_artifact(cfg.out_dir, "typem.json", taint_to_json(taint_results), &result);

  // --- merge selection ---
  std::set<int> merged = result.type_r;
  merged.insert(result.type_m.begin(), result.type_m.end());
  for (int blk : merged) {
    const BasicBlock& b = in.cfg.blocks[blk];
    LiveSet live = compute_live_sets(b);
    if (!b.diversifiable) {
      result.skipped.push_back(b.label + ": non-diversifiable terminator/fragment");
      continue;
    }
    if (live.indirect_pointer) {
      result.skipped.push_back(b.label + ": in-block computed pointers");
      continue;
    }
    result.selected.insert(blk);
  }
  {
    nlohmann::json j;
    j["type_r"] = result.type_r;
    j["type_m"] = result.type_m;
    j["selected"] = result.selected;
    j["skipped"] = result.skipped;
    write_artifact(cfg.out_dir, "selection.json", j.dump(2), &result);
  }
  if (result.selected.empty()) {
    result.warnings.push_back("no selectable blocks; nothing to diversify");
    return result;  // warning exit 0
  }
  if (stop == Stage::Select) {
    if (cfg.dry_run)
      result.warnings.push_back("dry run: selection and census only");
    return result;
  }

  // --- per-block liveness, suites, synthesis ---
  nlohmann::json liveness_report = nlohmann::json::object();
  DiversityPlan plan;
  plan.strategy = cfg.strategy;
  plan.seed = cfg.seed;

  for (int blk : result.selected) {
    const BasicBlock& b = in.cfg.blocks[blk];
    LiveSet live = compute_live_sets(b);
    liveness_report[b.label] = nlohmann::json::parse(liveset_to_json(live));
    if (stop == Stage::Liveness) continue;

    SuiteConfig sc = cfg.suite;
    sc.seed = derive_seed(cfg.seed, "suite:" + b.label);
    Suite suite = make_suite(b, live, sc, &in.image);
    for (auto& w : suite.warnings) result.warnings.push_back(b.label + ": " + w);
    write_artifact(cfg.out_dir, "suites/block_" + sanitize_label(b.label) + ".json",
                   suite_to_json(b.label, suite), &result);
    if (stop == Stage::Testgen) continue;

    SynthesisConfig syn = cfg.synth;
    syn.seed = derive_seed(cfg.seed, "synth:" + b.label);
    NRewriteResult rewrites;
    std::string status = "ok";
    try {
      rewrites = generate_n_rewrites(b, live, suite.cases, syn, &in.image);
    } catch (const NonDiversifiable& e) {
      status = "non_diversifiable";
      result.skipped.push_back(b.label + ": " + e.what());
    }
    if (status == "ok" && rewrites.rewrites.empty()) {
      status = "not_found";
      ++result.blocks_not_found;
      result.warnings.push_back(b.label + ": no validated rewrite found");
    } else if (status == "ok" && rewrites.partial()) {
      status = "partial";
      result.warnings.push_back(
          b.label + ": PartialResult " +
          std::to_string(rewrites.rewrites.size()) + " of " +
          std::to_string(rewrites.requested));
    }

    nlohmann::json jr;
    jr["block"] = b.label;
    jr["status"] = status;
    nlohmann::json arr = nlohmann::json::array();
    if (!rewrites.rewrites.empty()) {
      order_candidates_eliminating_first(rewrites.rewrites, b, records);
      for (const auto& rw : rewrites.rewrites) {
        nlohmann::json je;
        je["asm"] = canonical_text(rw.body);
        je["length"] = encoded_length(rw.body);
        je["cost_zero"] = true;
        arr.push_back(std::move(je));
      }
      plan.selections[blk] = rewrites.rewrites;
      ++result.blocks_with_rewrites;
    }
    jr["rewrites"] = std::move(arr);
    write_artifact(cfg.out_dir, "rewrites/block_" + sanitize_label(b.label) + ".json",
                   jr.dump(2), &result);
  }
  write_artifact(cfg.out_dir, "liveness.json", liveness_report.dump(2), &result);
  if (stop == Stage::Liveness || stop == Stage::Testgen || stop == Stage::Synth)
    return result;

  if (plan.selections.empty()) {
    result.warnings.push_back("no block produced a validated rewrite");
    return result;
  }

  // --- emit variants ---
  EmitResult emitted = emit_firmware_rewrites(in.program, in.cfg, plan,
                                              cfg.n_variants, cfg.out_dir, cfg.seed);
  for (auto& v : emitted.variants) result.artifacts.push_back(v.file);
  result.artifacts.push_back("manifest.json");
  for (auto& w : emitted.warnings) result.warnings.push_back(w);

  // --- survival report over every variant ---
  {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& v : emitted.variants) {
      Program vp = parse_program(
          read_text_file((fs::path(cfg.out_dir) / v.file).string()));
      Cfg vcfg = build_cfg(vp, cfg.entry);
      SurvivalReport rep = gadget_survival_report(in.cfg, vcfg, records);
      all.push_back(nlohmann::json::parse(survival_to_json(rep, v.variant)));
    }
    write_artifact(cfg.out_dir, "survival.json", all.dump(2), &result);
  }

  // --- optional payload check ---
  if (!cfg.payload_path.empty()) {
    PayloadSummary ps = check_payload(cfg);
    result.payload_baseline_feasible = ps.baseline_feasible;
    result.payload_feasible_variants = ps.feasible_variants;
    result.artifacts.push_back("payload_verdict.json");
  }
  return result;
}

int verify_variants(const PipelineConfig& cfg) {
  Loaded in = load_input(cfg);
  std::string manifest_text =
      read_text_file((fs::path(cfg.out_dir) / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(manifest_text);

  int mismatches = 0;
  nlohmann::json report = nlohmann::json::array();
  for (const auto& jv : manifest.at("variants")) {
    std::string file = jv.at("file").get<std::string>();
    Program vp =
        parse_program(read_text_file((fs::path(cfg.out_dir) / file).string()));
    Cfg vcfg = build_cfg(vp, cfg.entry);
    ProgramImage vimage = build_image(vp);

    auto find_block = [](const Cfg& c, const std::string& label) -> const BasicBlock* {
      for (const auto& b : c.blocks)
        if (b.label == label) return &b;  // synthetic labels included
      return nullptr;
    };
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& [label, choice] : jv.at("choices").items()) {
      const BasicBlock* ob = find_block(in.cfg, label);
      const BasicBlock* vb = find_block(vcfg, label);
      nlohmann::json jb;
      jb["block"] = label;
      if (!ob || !vb) {
        jb["status"] = "unresolvable";
        ++mismatches;
        blocks.push_back(std::move(jb));
        continue;
      }
      LiveSet live = compute_live_sets(*ob);
      uint64_t seed = derive_seed(cfg.seed, "verify:" + file + ":" + label);
      auto fresh = gen_random_cases(*ob, live, cfg.suite.suite_size * 2, seed,
                                    &in.image);
      bool check_flags = ob->term.kind == Terminator::Kind::CondJmp;
      int bad = 0;
      for (const auto& tc : fresh) {
        ExecResult r = run_block(tc.input, vb->insns,
                                 static_cast<int>(vb->insns.size()) + 4, &vimage);
        if (!r.normal() ||
            project_and_compare(tc.expected, r.state, check_flags) != 0)
          ++bad;
      }
      jb["cases"] = fresh.size();
      jb["mismatches"] = bad;
      jb["status"] = bad == 0 ? "ok" : "mismatch";
      mismatches += bad == 0 ? 0 : 1;
      blocks.push_back(std::move(jb));
    }
    report.push_back({{"variant", jv.at("variant")},
                      {"file", file},
                      {"blocks", std::move(blocks)}});
  }
  std::ofstream f(fs::path(cfg.out_dir) / "verify.json", std::ios::binary);
  f << report.dump(2) << "\n";
  return mismatches;
}

PayloadSummary check_payload(const PipelineConfig& cfg) {
  Loaded in = load_input(cfg);
  PayloadSpec payload = payload_from_json(read_text_file(cfg.payload_path));

  PayloadSummary summary;
  nlohmann::json j;
  PayloadCheckResult base = payload_check(in.cfg, in.program, cfg.entry, payload);
  summary.baseline_feasible = base.feasible;
  j["baseline"] = nlohmann::json::parse(payload_result_to_json(base, -1));

  nlohmann::json variants = nlohmann::json::array();
  fs::path manifest_path = fs::path(cfg.out_dir) / "manifest.json";
  if (fs::exists(manifest_path)) {
    nlohmann::json manifest =
        nlohmann::json::parse(read_text_file(manifest_path.string()));
    for (const auto& jv : manifest.at("variants")) {
      std::string file = jv.at("file").get<std::string>();
      Program vp =
          parse_program(read_text_file((fs::path(cfg.out_dir) / file).string()));
      PayloadCheckResult r = payload_check(in.cfg, vp, cfg.entry, payload);
      summary.total_variants += 1;
      summary.feasible_variants += r.feasible ? 1 : 0;
      variants.push_back(nlohmann::json::parse(
          payload_result_to_json(r, jv.at("variant").get<int>())));
    }
  }
  j["variants"] = std::move(variants);
  j["feasible_variants"] = summary.feasible_variants;
  j["total_variants"] = summary.total_variants;

  fs::create_directories(cfg.out_dir);
  std::ofstream f(fs::path(cfg.out_dir) / "payload_verdict.json", std::ios::binary);
  f << j.dump(2) << "\n";
  return summary;
}

}  // namespace divasm
