// Command-line front end: every experiment command builds a one-task
// ExperimentConfig and executes it as a persisted run.

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cobra/contagion.hpp"
#include "cobra/error.hpp"
#include "cobra/io.hpp"
#include "cobra/report.hpp"

namespace {

using nlohmann::json;
using namespace cobra;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitBackend = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitMismatch = 4;

struct Common {
  std::string backend = "mock";
  std::string model_name;
  std::string runs_dir = "runs";
  std::string run_id;
  std::uint64_t seed = 0;
  std::string execution = "parallel";
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--backend", c.backend, "mock, chat, sidecar, or a model JSON file")->capture_default_str();
  cmd->add_option("--model", c.model_name, "Model name for chat/sidecar backends");
  cmd->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  cmd->add_option("--runs-dir", c.runs_dir, "Directory holding run records")->capture_default_str();
  cmd->add_option("--run-id", c.run_id, "Run id (generated when empty)");
  cmd->add_option("--execution", c.execution, "serial or parallel")
      ->check(CLI::IsMember({"serial", "parallel"}))
      ->capture_default_str();
  cmd->add_flag("--quiet", c.quiet, "Only print the run id");
}

// Demo mock used when --backend mock: linear response over [0, 4], visible
// contagion sensitivity so dose-response curves separate.
json default_mock_model() {
  MockAgentSpec spec;
  spec.name = "mock";
  spec.contagion_kappa = 0.03;
  spec.post_words = 128;
  json m = to_json(mock_config("mock"));
  m["kind"] = "mock";
  m["mock"] = to_json(spec);
  return m;
}

json model_json(const Common& c) {
  json m;
  if (c.backend == "mock") {
    m = default_mock_model();
  } else if (c.backend == "chat" || c.backend == "sidecar") {
    m = {{"kind", c.backend}, {"endpoint", c.backend}};
  } else {
    m = read_json_file(c.backend, "model config");
  }
  if (!c.model_name.empty()) m["model_name"] = c.model_name;
  return m;
}

bool is_mock(const json& model) { return model.value("kind", std::string("mock")) == "mock"; }

// "kind[:handle]" plus an optional "lo:hi" range.
json method_json(const std::string& spec, const std::string& range, const json& model) {
  json m;
  const auto colon = spec.find(':');
  m["kind"] = spec.substr(0, colon);
  if (colon != std::string::npos) m["handle"] = spec.substr(colon + 1);
  const bool steering = m["kind"] != "prompt_numerical";
  if (!range.empty()) {
    const auto sep = range.find(':');
    if (sep == std::string::npos) throw ValidationError("--lambda-range: expected lo:hi");
    m["lambda_min"] = std::stod(range.substr(0, sep));
    m["lambda_max"] = std::stod(range.substr(sep + 1));
  } else if (steering && is_mock(model)) {
    m["lambda_min"] = 0.0;
    m["lambda_max"] = 1.0;
  }
  return m;
}

json grid_json(const std::string& grid) {
  std::vector<double> parts;
  std::stringstream ss(grid);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(std::stod(item));
  if (parts.size() != 3) throw ValidationError("--grid: expected start:stop:step");
  return {{"start", parts[0]}, {"stop", parts[1]}, {"step", parts[2]}};
}

json base_config(const Common& c, const std::string& name) {
  return {{"name", name}, {"seed", c.seed}, {"execution", c.execution}, {"models", json::array({model_json(c)})}};
}

RunRecord execute(const json& config_json, const Common& c) {
  const ExperimentConfig config = experiment_config_from_json(config_json);
  RunOptions options;
  options.runs_root = c.runs_dir;
  options.run_id = c.run_id;
  return run(config, options);
}

void print_summary(const RunRecord& r, const Common& c) {
  if (c.quiet) {
    std::cout << r.run_id << "\n";
    return;
  }
  std::cout << "run " << r.run_id << " (" << r.status << ") -> " << run_directory(c.runs_dir, r.run_id).string()
            << "\n";
  auto section = [&](const char* name) { return r.results.value(name, json::array()); };
  for (const auto& m : section("measurements")) {
    const json& v = m["measurement"];
    std::cout << "  " << m["model"].get<std::string>() << " " << m["paradigm"].get<std::string>();
    if (!m["method"].is_null()) std::cout << " " << m["method"].get<std::string>() << "=" << m["coefficient"];
    std::cout << "  CBI " << v["value"] << " +/- " << v["standard_error"] << " (n=" << v["n_variants"] << ")\n";
  }
  for (const auto& cv : section("curves")) {
    const json& mt = cv["metrics"];
    std::cout << "  curve " << cv["model"].get<std::string>() << " " << cv["method"].get<std::string>() << " "
              << cv["paradigm"].get<std::string>() << ": ndcg " << mt["ndcg"] << " rho " << mt["spearman_rho"]
              << " delta1 " << mt["delta1"] << " expressiveness " << mt["expressiveness"] << "\n";
  }
  for (const auto& t : section("transfers")) {
    std::cout << "  transfer " << t["source"].get<std::string>() << " -> " << t["target"].get<std::string>()
              << ": pearson " << t["report"]["pearson_r"] << "\n";
  }
  for (const auto& cal : section("calibrations")) {
    const json& res = cal["result"];
    std::cout << "  calibrate " << cal["paradigm"].get<std::string>() << " target " << res["target"] << ": "
              << cal["method"].get<std::string>() << "=" << res["coefficient"] << " CBI " << res["achieved"] << " ("
              << res["evaluations"] << " evaluations, " << (res["converged"].get<bool>() ? "converged" : "NOT converged")
              << ")";
    if (!res["note"].get<std::string>().empty()) std::cout << " " << res["note"].get<std::string>();
    if (!cal["transfer"].is_null()) {
      std::cout << "; on " << cal["transfer"]["paradigm"].get<std::string>() << " CBI "
                << cal["transfer"]["measurement"]["value"];
    }
    std::cout << "\n";
  }
  for (const auto& g : section("contagion")) {
    for (const auto& reg : g["regressions"]) {
      std::cout << "  contagion " << reg["agent"].get<std::string>() << " (CBI " << reg["cbi"] << "): slope "
                << reg["slope"] << " +/- " << reg["slope_stderr"] << "\n";
    }
  }
}

int finish(const RunRecord& r, const Common& c) {
  print_summary(r, c);
  return all_calibrations_converged(r) ? kExitOk : kExitNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cobra: measure and regulate cognitive bias in language-model agents"};
  app.require_subcommand(1);

  // measure
  Common measure_c;
  std::vector<std::string> measure_paradigms;
  std::string measure_control, measure_range;
  auto* measure_cmd = app.add_subcommand("measure", "Measure the CBI of one or more paradigms");
  add_common(measure_cmd, measure_c);
  measure_cmd->add_option("--paradigm", measure_paradigms, "Paradigm id (repeatable)")->required();
  measure_cmd->add_option("--control", measure_control, "Apply a control: method[:handle]=coefficient");
  measure_cmd->add_option("--lambda-range", measure_range, "Steering domain lo:hi");

  // sweep
  Common sweep_c;
  std::vector<std::string> sweep_paradigms;
  std::string sweep_grid = "0:1:0.1", sweep_method = "prompt_numerical", sweep_range;
  std::vector<std::string> sweep_transfer;
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep a control coefficient and score the curve");
  add_common(sweep_cmd, sweep_c);
  sweep_cmd->add_option("--paradigm", sweep_paradigms, "Paradigm id (repeatable)")->required();
  sweep_cmd->add_option("--grid", sweep_grid, "start:stop:step")->capture_default_str();
  sweep_cmd->add_option("--method", sweep_method, "Control method[:handle]")->capture_default_str();
  sweep_cmd->add_option("--lambda-range", sweep_range, "Steering domain lo:hi");
  sweep_cmd->add_option("--transfer", sweep_transfer, "Report transfer source:target (repeatable)");

  // calibrate
  Common cal_c;
  std::string cal_paradigm, cal_method = "prompt_numerical", cal_range, cal_transfer;
  std::vector<double> cal_targets;
  double cal_tol = 0.05;
  int cal_budget = 20;
  auto* cal_cmd = app.add_subcommand("calibrate", "Find the coefficient reaching a target CBI");
  add_common(cal_cmd, cal_c);
  cal_cmd->add_option("--paradigm", cal_paradigm, "Calibration paradigm")->required();
  cal_cmd->add_option("--target", cal_targets, "Target CBI (repeatable)")->required();
  cal_cmd->add_option("--tol", cal_tol, "Tolerance")->capture_default_str();
  cal_cmd->add_option("--budget", cal_budget, "Maximum evaluations")->capture_default_str();
  cal_cmd->add_option("--method", cal_method, "Control method[:handle]")->capture_default_str();
  cal_cmd->add_option("--lambda-range", cal_range, "Steering domain lo:hi");
  cal_cmd->add_option("--transfer-to", cal_transfer, "Also measure this paradigm at the calibrated coefficient");

  // contagion
  Common con_c;
  std::string con_preset = "cobra", con_paradigm = "asch_line", con_method, con_range,
              con_corpus;
  int con_trials = 30, con_feed = 20;
  auto* con_cmd = app.add_subcommand("contagion", "Run the emotional-contagion dose-response experiment");
  add_common(con_cmd, con_c);
  con_cmd->add_option("--preset", con_preset, "cobra or baseline")
      ->check(CLI::IsMember({"cobra", "baseline"}))
      ->capture_default_str();
  con_cmd->add_option("--paradigm", con_paradigm, "Paradigm used to program the agents")->capture_default_str();
  con_cmd->add_option("--method", con_method,
                     "Control method[:handle] for the cobra preset (default: repe_linear on mocks, "
                     "prompt_numerical otherwise)");
  con_cmd->add_option("--lambda-range", con_range, "Steering domain lo:hi");
  con_cmd->add_option("--trials", con_trials, "Trials per (agent, dose) cell")->capture_default_str();
  con_cmd->add_option("--feed-size", con_feed, "Posts per feed")->capture_default_str();
  con_cmd->add_option("--corpus", con_corpus, "Post corpus (JSON lines); bundled when omitted");

  // run
  Common run_c;
  std::string run_config;
  auto* run_cmd = app.add_subcommand("run", "Execute an experiment config file");
  run_cmd->add_option("config", run_config, "Experiment config JSON")->required();
  run_cmd->add_option("--runs-dir", run_c.runs_dir, "Directory holding run records")->capture_default_str();
  run_cmd->add_option("--run-id", run_c.run_id, "Run id (generated when empty)");
  run_cmd->add_flag("--quiet", run_c.quiet, "Only print the run id");

  // eval
  std::string eval_run, eval_dir = "runs", eval_csv, eval_out, eval_plots;
  bool eval_verify = false;
  auto* eval_cmd = app.add_subcommand("eval", "Inspect, export or verify a stored run");
  eval_cmd->add_option("--run", eval_run, "Run id")->required();
  eval_cmd->add_option("--runs-dir", eval_dir, "Directory holding run records")->capture_default_str();
  eval_cmd->add_option("--csv", eval_csv, "metrics, curves, measurements, calibrations, dose_response or gaps");
  eval_cmd->add_option("--out", eval_out, "Write the CSV here instead of stdout");
  eval_cmd->add_option("--plots", eval_plots, "Write SVG plots into this directory");
  eval_cmd->add_flag("--verify", eval_verify, "Re-run the stored config and require identical results");

  // testbed validate
  std::string tb_file;
  auto* tb_cmd = app.add_subcommand("testbed", "Testbed utilities");
  tb_cmd->require_subcommand(1);
  auto* tb_validate = tb_cmd->add_subcommand("validate", "Validate a paradigm file");
  tb_validate->add_option("file", tb_file, "Paradigm JSON file")->required();
  auto* tb_list = tb_cmd->add_subcommand("list", "List bundled paradigms");

  // corpus synth
  std::string corpus_out;
  std::size_t corpus_neg = 1000, corpus_neu = 500;
  std::uint64_t corpus_seed = 0;
  auto* corpus_cmd = app.add_subcommand("corpus", "Post corpus utilities");
  corpus_cmd->require_subcommand(1);
  auto* corpus_synth = corpus_cmd->add_subcommand("synth", "Write a template-generated corpus");
  corpus_synth->add_option("--out", corpus_out, "Output JSON-lines file")->required();
  corpus_synth->add_option("--negative", corpus_neg, "Negative posts")->capture_default_str();
  corpus_synth->add_option("--neutral", corpus_neu, "Neutral posts")->capture_default_str();
  corpus_synth->add_option("--seed", corpus_seed, "Seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*measure_cmd) {
      json cfg = base_config(measure_c, "measure");
      json task{{"type", "measure"}, {"paradigms", measure_paradigms}};
      if (!measure_control.empty()) {
        const auto eq = measure_control.find('=');
        if (eq == std::string::npos) throw ValidationError("--control: expected method[:handle]=coefficient");
        task["method"] = method_json(measure_control.substr(0, eq), measure_range, cfg["models"][0]);
        task["coefficient"] = std::stod(measure_control.substr(eq + 1));
      }
      cfg["tasks"] = json::array({task});
      return finish(execute(cfg, measure_c), measure_c);
    }
    if (*sweep_cmd) {
      json cfg = base_config(sweep_c, "sweep");
      cfg["methods"] = json::array({method_json(sweep_method, sweep_range, cfg["models"][0])});
      json pairs = json::array();
      for (const auto& t : sweep_transfer) {
        const auto sep = t.find(':');
        if (sep == std::string::npos) throw ValidationError("--transfer: expected source:target");
        pairs.push_back({t.substr(0, sep), t.substr(sep + 1)});
      }
      cfg["tasks"] = json::array(
          {{{"type", "sweep"}, {"paradigms", sweep_paradigms}, {"grid", grid_json(sweep_grid)}, {"transfer_pairs", pairs}}});
      return finish(execute(cfg, sweep_c), sweep_c);
    }
    if (*cal_cmd) {
      json cfg = base_config(cal_c, "calibrate");
      cfg["methods"] = json::array({method_json(cal_method, cal_range, cfg["models"][0])});
      json task{{"type", "calibrate"},
                {"paradigms", {cal_paradigm}},
                {"targets", cal_targets},
                {"tolerance", cal_tol},
                {"budget", cal_budget}};
      if (!cal_transfer.empty()) task["transfer_to"] = {{cal_paradigm, cal_transfer}};
      cfg["tasks"] = json::array({task});
      return finish(execute(cfg, cal_c), cal_c);
    }
    if (*con_cmd) {
      json cfg = base_config(con_c, "contagion");
      // Prompt-numerical steps of 5% are coarser than the spacing of the
      // programmed levels, so mocks default to continuous steering.
      if (con_method.empty()) con_method = is_mock(cfg["models"][0]) ? "repe_linear" : "prompt_numerical";
      cfg["methods"] = json::array({method_json(con_method, con_range, cfg["models"][0])});
      json task{{"type", "contagion"},
                {"preset", con_preset},
                {"paradigm", con_paradigm},
                {"trials_per_cell", con_trials},
                {"feed_size", con_feed}};
      if (!con_corpus.empty()) task["corpus"] = con_corpus;
      cfg["tasks"] = json::array({task});
      return finish(execute(cfg, con_c), con_c);
    }
    if (*run_cmd) {
      const ExperimentConfig config = load_experiment_config(run_config);
      RunOptions options;
      options.runs_root = run_c.runs_dir;
      options.run_id = run_c.run_id;
      return finish(run(config, options), run_c);
    }
    if (*eval_cmd) {
      const RunRecord record = load_run_record(run_directory(eval_dir, eval_run));
      int code = kExitOk;
      if (!eval_csv.empty()) {
        const std::string csv = export_csv(record, eval_csv);
        if (eval_out.empty()) std::cout << csv;
        else write_text_file(eval_out, csv);
      }
      if (!eval_plots.empty()) {
        for (const auto& p : emit_plots(record, eval_plots)) std::cerr << "wrote " << p.string() << "\n";
      }
      if (eval_verify) {
        RunOptions options;
        options.persist = false;
        const RunRecord again = rerun(record, options);
        const bool same = results_equal(record, again);
        std::cout << "verify " << record.run_id << ": " << (same ? "identical" : "DIFFERENT") << "\n";
        if (!same) code = kExitMismatch;
      }
      if (eval_csv.empty() && eval_plots.empty() && !eval_verify) {
        Common c;
        c.runs_dir = eval_dir;
        print_summary(record, c);
      }
      return code;
    }
    if (*tb_validate) {
      const auto paradigms = load_testbed_file(tb_file);
      for (const auto& p : paradigms) {
        std::cout << p.id << " (" << p.bias << "): " << expand_variants(p).size() << " variants\n";
      }
      std::cout << "ok: " << paradigms.size() << " paradigm(s)\n";
      return kExitOk;
    }
    if (*tb_list) {
      for (const auto& p : load_bundled_testbed()) {
        std::cout << p.id << "\t" << p.bias << "\t" << expand_variants(p).size() << " variants\t" << p.name << "\n";
      }
      return kExitOk;
    }
    if (*corpus_synth) {
      write_text_file(corpus_out, synthesize_corpus(corpus_neg, corpus_neu, corpus_seed).to_jsonl());
      std::cout << "wrote " << corpus_neg + corpus_neu << " posts to " << corpus_out << "\n";
      return kExitOk;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
