// divasm — basic-block diversifier for an x86-64 assembly subset.
//
// Subcommands compose over JSON artifacts in the output directory:
//   scan -> select -> liveness -> testgen -> synth -> diversify -> verify
// `run` executes the whole pipeline; `payload-check` judges an attack chain
// against the original and every emitted variant.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>\n#include <iostream>

#include "divasm/pipeline.hpp"

using namespace divasm;

namespace {

struct CommonArgs {
  PipelineConfig cfg;
  bool json_output = false;
  bool no_type_m = false;
  std::string classes_csv = "cr,cm,call";
  std::string registers_csv;
  std::string risky_csv;
  std::string config_path;
};

// key=value config file; values act as defaults, explicit flags override
// them because the file is applied before CLI parsing
void apply_config_file(const std::string& path, CommonArgs& a) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r");
      size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    std::string key = trim(eq == std::string::npos ? t : t.substr(0, eq));
    std::string value = eq == std::string::npos ? "true" : trim(t.substr(eq + 1));
    auto truthy = [&] { return value == "true" || value == "1" || value == "yes"; };

    if (key == "seed") a.cfg.seed = std::stoull(value);
    else if (key == "entry") a.cfg.entry = value;
    else if (key == "out") a.cfg.out_dir = value;
    else if (key == "in") a.cfg.input_path = value;
    else if (key == "classes") a.classes_csv = value;
    else if (key == "registers") a.registers_csv = value;
    else if (key == "risky-callees") a.risky_csv = value;
    else if (key == "no-type-m") a.no_type_m = truthy();
    else if (key == "max-len") a.cfg.scan.max_len = std::stoi(value);
    else if (key == "n-rewrites") a.cfg.synth.n_rewrites = std::stoi(value);
    else if (key == "iterations") a.cfg.synth.iterations = std::stol(value);
    else if (key == "restarts") a.cfg.synth.restarts = std::stoi(value);
    else if (key == "beta") a.cfg.synth.beta = std::stod(value);
    else if (key == "suite-size") a.cfg.suite.suite_size = std::stoi(value);
    else if (key == "fuzz-budget") a.cfg.suite.fuzz_budget = std::stoi(value);
    else if (key == "variants") a.cfg.n_variants = std::stoi(value);
    else if (key == "payload") a.cfg.payload_path = value;
    else if (key == "json") a.json_output = truthy();
    else
      throw std::runtime_error("config file line " + std::to_string(line_no) +
                               ": unknown key " + key);
  }
}

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("-i,--in", a.cfg.input_path, "input assembly file")->required();
  cmd->add_option("-e,--entry", a.cfg.entry, "entry symbol")->capture_default_str();
  cmd->add_option("-o,--out", a.cfg.out_dir, "output directory")
      ->capture_default_str();
  cmd->add_option("--seed", a.cfg.seed, "master seed")->capture_default_str();
  cmd->add_flag("--json", a.json_output, "machine-readable summary, quiet stderr");
  // consumed by the pre-scan in main(); registered so parsing accepts it
  cmd->add_option("--config", a.config_path, "key=value config file");
}

void add_selection(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--classes", a.classes_csv, "type R gadget classes: cr,cm,call")
      ->capture_default_str();
  cmd->add_option("--registers", a.registers_csv,
                  "restrict change-register targets (csv, e.g. rdi,rsi)");
  cmd->add_option("--risky-callees", a.risky_csv, "risky callee list override");
  cmd->add_flag("--no-type-m", a.no_type_m, "skip taint-based Type M selection");
  cmd->add_option("--max-len", a.cfg.scan.max_len, "max gadget suffix length")
      ->capture_default_str();
}

void add_synth(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--n-rewrites", a.cfg.synth.n_rewrites, "rewrites per block (N)")
      ->capture_default_str();
  cmd->add_option("--iterations", a.cfg.synth.iterations, "search iterations")
      ->capture_default_str();
  cmd->add_option("--restarts", a.cfg.synth.restarts, "search restarts")
      ->capture_default_str();
  cmd->add_option("--beta", a.cfg.synth.beta, "inverse temperature")
      ->capture_default_str();
  cmd->add_option("--suite-size", a.cfg.suite.suite_size, "test cases per block")
      ->capture_default_str();
  cmd->add_option("--fuzz-budget", a.cfg.suite.fuzz_budget,
                  "fuzz executions per block")
      ->capture_default_str();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void finalize(CommonArgs& a) {
  a.cfg.type_r_kinds.clear();
  for (auto& c : split_csv(a.classes_csv)) {
    if (c == "cr" || c == "change-register")
      a.cfg.type_r_kinds.insert(GadgetClass::Kind::ChangeRegister);
    else if (c == "cm" || c == "change-memory")
      a.cfg.type_r_kinds.insert(GadgetClass::Kind::ChangeMemory);
    else if (c == "call")
      a.cfg.type_r_kinds.insert(GadgetClass::Kind::Call);
    else
      throw CLI::ValidationError("--classes", "unknown class " + c);
  }
  for (auto& r : split_csv(a.registers_csv)) {
    auto reg = lookup_register(r);
    if (!reg) throw CLI::ValidationError("--registers", "unknown register " + r);
    a.cfg.type_r_registers.insert(reg->parent);
  }
  if (!a.risky_csv.empty()) a.cfg.scan.risky_callees = split_csv(a.risky_csv);
  if (a.no_type_m) a.cfg.include_type_m = false;
}

void print_summary(const CommonArgs& a, const PipelineResult& r) {
  if (a.json_output) {
    nlohmann::json j;
    j["exit_code"] = r.exit_code;
    j["type_r_blocks"] = r.type_r.size();
    j["type_m_blocks"] = r.type_m.size();
    j["selected_blocks"] = r.selected.size();
    j["blocks_with_rewrites"] = r.blocks_with_rewrites;
    j["blocks_not_found"] = r.blocks_not_found;
    j["skipped"] = r.skipped;
    j["warnings"] = r.warnings;
    j["artifacts"] = r.artifacts;
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::cerr << "type R blocks: " << r.type_r.size()
            << ", type M blocks: " << r.type_m.size()
            << ", selected: " << r.selected.size()
            << ", rewritten: " << r.blocks_with_rewrites << "\n";
  for (auto& s : r.skipped) std::cerr << "skipped: " << s << "\n";
  for (auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  for (auto& f : r.artifacts) std::cerr << "wrote " << f << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divasm: semantic basic-block diversifier for x86-64 assembly"};
  app.require_subcommand(1);

  CommonArgs a;
  try {
    for (int k = 1; k + 1 < argc; ++k)
      if (std::string(argv[k]) == "--config") apply_config_file(argv[k + 1], a);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  struct StagedCmd {
    CLI::App* cmd;
    Stage stage;
  };
  std::vector<StagedCmd> staged;

  auto* scan = app.add_subcommand("scan", "build the CFG and gadget census");
  add_common(scan, a);
  add_selection(scan, a);
  staged.push_back({scan, Stage::Scan});

  auto* select = app.add_subcommand(
      "select", "pick security-critical blocks (Type R union Type M)");
  add_common(select, a);
  add_selection(select, a);
  staged.push_back({select, Stage::Select});

  auto* liveness = app.add_subcommand(
      "liveness", "per-block read/write sets for the selection");
  add_common(liveness, a);
  add_selection(liveness, a);
  staged.push_back({liveness, Stage::Liveness});

  auto* testgen =
      app.add_subcommand("testgen", "fuzz + random test suites for the selection");
  add_common(testgen, a);
  add_selection(testgen, a);
  add_synth(testgen, a);
  staged.push_back({testgen, Stage::Testgen});

  auto* synth =
      app.add_subcommand("synth", "synthesize N rewrites per selected block");
  add_common(synth, a);
  add_selection(synth, a);
  add_synth(synth, a);
  staged.push_back({synth, Stage::Synth});

  auto* diversify = app.add_subcommand(
      "diversify", "emit firmware variants and the survival report");
  add_common(diversify, a);
  add_selection(diversify, a);
  add_synth(diversify, a);
  diversify->add_option("-n,--variants", a.cfg.n_variants, "firmware variants")
      ->capture_default_str();
  staged.push_back({diversify, Stage::Diversify});

  auto* run = app.add_subcommand("run", "full pipeline");
  add_common(run, a);
  add_selection(run, a);
  add_synth(run, a);
  run->add_option("-n,--variants", a.cfg.n_variants, "firmware variants")
      ->capture_default_str();
  run->add_option("--payload", a.cfg.payload_path,
                  "payload spec JSON (optional check)");
  run->add_flag("--dry-run", a.cfg.dry_run, "selection and census only");
  staged.push_back({run, Stage::Diversify});

  auto* verify = app.add_subcommand(
      "verify", "re-check emitted variants against fresh seeded suites");
  add_common(verify, a);

  auto* payload = app.add_subcommand(
      "payload-check", "judge a gadget chain against original and variants");
  add_common(payload, a);
  payload->add_option("--payload", a.cfg.payload_path, "payload spec JSON")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    finalize(a);

    for (const auto& sc : staged) {
      if (!sc.cmd->parsed()) continue;
      PipelineConfig cfg = a.cfg;
      cfg.stop_after = sc.stage;
      PipelineResult r = run_pipeline(cfg);
      if (!cfg.payload_path.empty() && sc.cmd == run && !cfg.dry_run)
        std::cerr << "payload baseline feasible: "
                  << (r.payload_baseline_feasible ? "true" : "false")
                  << ", feasible variants: " << r.payload_feasible_variants
                  << "\n";
      print_summary(a, r);
      return r.exit_code;
    }

    if (verify->parsed()) {
      int mismatches = verify_variants(a.cfg);
      if (a.json_output) {
        nlohmann::json j;
        j["mismatches"] = mismatches;
        std::cout << j.dump(2) << "\n";
      } else {
        std::cerr << "verify mismatches: " << mismatches << "\n";
      }
      return mismatches == 0 ? 0 : 1;
    }

    if (payload->parsed()) {
      PayloadSummary s = check_payload(a.cfg);
      if (a.json_output) {
        nlohmann::json j;
        j["baseline_feasible"] = s.baseline_feasible;
        j["feasible_variants"] = s.feasible_variants;
        j["total_variants"] = s.total_variants;
        std::cout << j.dump(2) << "\n";
      } else {
        std::cerr << "baseline feasible: "
                  << (s.baseline_feasible ? "true" : "false") << ", "
                  << s.feasible_variants << "/" << s.total_variants
                  << " variants feasible\n";
      }
      return 0;
    }
  } catch (const StageError& e) {
    std::cerr << "error " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
