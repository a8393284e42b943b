#include "cobra/report.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "cobra/chat_backend.hpp"
#include "cobra/contagion.hpp"
#include "cobra/error.hpp"
#include "cobra/io.hpp"
#include "cobra/metrics.hpp"
#include "cobra/sidecar_client.hpp"

namespace cobra {

namespace {

using nlohmann::json;

// --- config parsing helpers ---------------------------------------------------------

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + ": wrong type");
  }
}

template <typename T>
T get_required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + "." + key + ": missing");
  return get_or<T>(j, key, T{}, where);
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ValidationError(where + "." + key + ": unknown field");
  }
}

GridSpec grid_from_json(const json& j, const std::string& where) {
  GridSpec g;
  if (j.is_array()) {
    if (j.size() != 3) throw ValidationError(where + ": expected [start, stop, step]");
    g = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } else if (j.is_object()) {
    g = {get_required<double>(j, "start", where), get_required<double>(j, "stop", where),
         get_required<double>(j, "step", where)};
  } else {
    throw ValidationError(where + ": expected an object or [start, stop, step]");
  }
  try {
    g.values();
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return g;
}

json to_json(const GridSpec& g) { return {{"start", g.start}, {"stop", g.stop}, {"step", g.step}}; }

MethodConfig method_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  reject_unknown_keys(j, {"kind", "handle", "lambda_min", "lambda_max", "grid"}, where);
  MethodConfig m;
  try {
    m.kind = control_kind_from_string(get_required<std::string>(j, "kind", where));
  } catch (const ValidationError& e) {
    throw ValidationError(where + ".kind: " + e.what());
  }
  m.handle = get_or<std::string>(j, "handle", "", where);
  const bool has_min = j.contains("lambda_min"), has_max = j.contains("lambda_max");
  if (has_min != has_max) throw ValidationError(where + ": lambda_min and lambda_max go together");
  if (has_min) {
    if (m.kind == ControlKind::PromptNumerical) {
      throw ValidationError(where + ": prompt_numerical has the fixed domain [0, 1]");
    }
    m.range = StabilityRange{j.at("lambda_min").get<double>(), j.at("lambda_max").get<double>()};
    if (!(m.range->lambda_min < m.range->lambda_max)) {
      throw ValidationError(where + ": lambda_min must be below lambda_max");
    }
  }
  if (j.contains("grid")) m.grid = grid_from_json(j.at("grid"), where + ".grid").values();
  return m;
}

json to_json(const MethodConfig& m) {
  json j{{"kind", to_string(m.kind)}};
  if (!m.handle.empty()) j["handle"] = m.handle;
  if (m.range) {
    j["lambda_min"] = m.range->lambda_min;
    j["lambda_max"] = m.range->lambda_max;
  }
  if (m.grid) j["grid"] = {m.grid->front(), m.grid->back(), ((*m.grid)[1] - (*m.grid)[0])};
  return j;
}

ModelConfig model_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  ModelConfig m;
  std::string kind = get_or<std::string>(j, "kind", "", where);
  const std::string endpoint = get_or<std::string>(j, "endpoint", "", where);
  if (kind.empty()) {
    if (endpoint.empty() || endpoint == "mock") kind = "mock";
    else if (endpoint == "sidecar") kind = "sidecar";
    else if (endpoint == "chat") kind = "chat";
    else throw ValidationError(where + ".kind: required when endpoint is a URL (mock, chat or sidecar)");
  }
  try {
    m.kind = model_kind_from_string(kind);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ".kind: " + e.what());
  }
  json backend = j;
  backend.erase("kind");
  backend.erase("mock");
  if (!backend.contains("endpoint")) backend["endpoint"] = kind == "mock" ? "mock" : kind;
  try {
    m.backend = backend_config_from_json(backend);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  if (m.kind == ModelConfig::Kind::Mock) {
    try {
      m.mock = j.contains("mock") ? mock_spec_from_json(j.at("mock")) : MockAgentSpec{};
    } catch (const ValidationError& e) {
      throw ValidationError(where + ".mock: " + e.what());
    }
    if (m.backend.id.empty()) m.backend.id = m.mock.name;
    if (m.backend.model_name.empty()) m.backend.model_name = "mock";
  } else if (j.contains("mock")) {
    throw ValidationError(where + ".mock: only valid for mock models");
  }
  return m;
}

json to_json(const ModelConfig& m) {
  json j = to_json(m.backend);
  j["kind"] = to_string(m.kind);
  if (m.kind == ModelConfig::Kind::Mock) j["mock"] = to_json(m.mock);
  return j;
}

std::vector<std::string> string_list(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) return {};
  if (!j.at(key).is_array()) throw ValidationError(where + "." + key + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw ValidationError(where + "." + key + ": expected an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

Task task_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  const std::string type = get_required<std::string>(j, "type", where);
  if (type == "measure") {
    reject_unknown_keys(j, {"type", "paradigms", "method", "coefficient"}, where);
    MeasureTask t;
    t.paradigms = string_list(j, "paradigms", where);
    if (j.contains("method")) {
      t.method = method_from_json(j.at("method"), where + ".method");
      t.coefficient = get_required<double>(j, "coefficient", where);
    }
    return t;
  }
  if (type == "sweep") {
    reject_unknown_keys(j, {"type", "paradigms", "grid", "transfer_pairs"}, where);
    SweepTask t;
    t.paradigms = string_list(j, "paradigms", where);
    t.grid = j.contains("grid") ? grid_from_json(j.at("grid"), where + ".grid") : GridSpec{0.0, 1.0, 0.1};
    if (j.contains("transfer_pairs")) {
      for (const auto& p : j.at("transfer_pairs")) {
        if (!p.is_array() || p.size() != 2) throw ValidationError(where + ".transfer_pairs: expected [source, target]");
        t.transfer_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
    }
    return t;
  }
  if (type == "calibrate") {
    reject_unknown_keys(j, {"type", "paradigms", "targets", "tolerance", "budget", "transfer_to"}, where);
    CalibrateTask t;
    t.paradigms = string_list(j, "paradigms", where);
    t.targets = get_required<std::vector<double>>(j, "targets", where);
    t.tolerance = get_or<double>(j, "tolerance", t.tolerance, where);
    t.budget = get_or<int>(j, "budget", t.budget, where);
    t.transfer_to = get_or<std::map<std::string, std::string>>(j, "transfer_to", {}, where);
    if (t.targets.empty()) throw ValidationError(where + ".targets: needs at least one target");
    if (!(t.tolerance > 0.0)) throw ValidationError(where + ".tolerance: must be > 0");
    if (t.budget < 3) throw ValidationError(where + ".budget: must be >= 3");
    return t;
  }
  if (type == "gap") {
    reject_unknown_keys(j, {"type", "calibration_paradigm", "target_paradigm", "grid", "cbi_grid"}, where);
    GapTask t;
    t.calibration_paradigm = get_required<std::string>(j, "calibration_paradigm", where);
    t.target_paradigm = get_required<std::string>(j, "target_paradigm", where);
    t.grid = j.contains("grid") ? grid_from_json(j.at("grid"), where + ".grid") : GridSpec{0.0, 1.0, 0.1};
    t.cbi_grid = get_required<std::vector<double>>(j, "cbi_grid", where);
    if (t.cbi_grid.empty()) throw ValidationError(where + ".cbi_grid: must not be empty");
    return t;
  }
  if (type == "contagion") {
    reject_unknown_keys(j, {"type", "preset", "paradigm", "doses", "trials_per_cell", "feed_size", "tolerance", "corpus"},
                        where);
    ContagionTask t;
    t.preset = get_or<std::string>(j, "preset", t.preset, where);
    if (t.preset != "cobra" && t.preset != "baseline") {
      throw ValidationError(where + ".preset: expected cobra or baseline, got '" + t.preset + "'");
    }
    t.paradigm = get_or<std::string>(j, "paradigm", t.paradigm, where);
    t.doses = get_or<std::vector<int>>(j, "doses", t.doses, where);
    t.trials_per_cell = get_or<int>(j, "trials_per_cell", t.trials_per_cell, where);
    t.feed_size = get_or<int>(j, "feed_size", t.feed_size, where);
    t.tolerance = get_or<double>(j, "tolerance", t.tolerance, where);
    t.corpus = get_or<std::string>(j, "corpus", "", where);
    if (t.doses.empty()) throw ValidationError(where + ".doses: must not be empty");
    for (int d : t.doses) {
      if (d < 0 || d > t.feed_size) throw ValidationError(where + ".doses: each dose must lie in [0, feed_size]");
    }
    if (t.trials_per_cell < 1) throw ValidationError(where + ".trials_per_cell: must be >= 1");
    if (!(t.tolerance > 0.0)) throw ValidationError(where + ".tolerance: must be > 0");
    return t;
  }
  throw ValidationError(where + ".type: unknown task type '" + type + "'");
}

json to_json(const Task& task) {
  return std::visit(
      [](const auto& t) -> json {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, MeasureTask>) {
          json j{{"type", "measure"}, {"paradigms", t.paradigms}};
          if (t.method) {
            j["method"] = to_json(*t.method);
            j["coefficient"] = t.coefficient;
          }
          return j;
        } else if constexpr (std::is_same_v<T, SweepTask>) {
          json pairs = json::array();
          for (const auto& [a, b] : t.transfer_pairs) pairs.push_back({a, b});
          return {{"type", "sweep"}, {"paradigms", t.paradigms}, {"grid", to_json(t.grid)}, {"transfer_pairs", pairs}};
        } else if constexpr (std::is_same_v<T, CalibrateTask>) {
          return {{"type", "calibrate"},          {"paradigms", t.paradigms}, {"targets", t.targets},
                  {"tolerance", t.tolerance},      {"budget", t.budget},       {"transfer_to", t.transfer_to}};
        } else if constexpr (std::is_same_v<T, GapTask>) {
          return {{"type", "gap"},
                  {"calibration_paradigm", t.calibration_paradigm},
                  {"target_paradigm", t.target_paradigm},
                  {"grid", to_json(t.grid)},
                  {"cbi_grid", t.cbi_grid}};
        } else {
          return {{"type", "contagion"}, {"preset", t.preset},       {"paradigm", t.paradigm},
                  {"doses", t.doses},    {"trials_per_cell", t.trials_per_cell}, {"feed_size", t.feed_size},
                  {"tolerance", t.tolerance}, {"corpus", t.corpus}};
        }
      },
      task);
}

std::string task_type(const Task& task) {
  static const char* kNames[] = {"measure", "sweep", "calibrate", "gap", "contagion"};
  return kNames[task.index()];
}

// Models after temperature expansion.
std::vector<ModelConfig> expanded_models(const ExperimentConfig& config) {
  if (config.temperatures.empty()) return config.models;
  std::vector<ModelConfig> out;
  for (const auto& m : config.models) {
    for (double t : config.temperatures) {
      ModelConfig copy = m;
      copy.backend.temperature = t;
      std::ostringstream id;
      id << m.backend.display_id() << "@T=" << t;
      copy.backend.id = id.str();
      out.push_back(std::move(copy));
    }
  }
  return out;
}

std::map<std::string, BiasSpec> bias_specs_for(const ExperimentConfig& config) {
  std::map<std::string, BiasSpec> out;
  const auto specs =
      config.bias_specs_file.empty() ? load_bundled_bias_specs() : load_bias_specs_file(config.bias_specs_file);
  for (const auto& s : specs) out[s.bias] = s;
  return out;
}

void check_capability(const ModelConfig& model, const MethodConfig& method, const std::string& where) {
  if (!is_steering(method.kind)) return;
  if (model.kind == ModelConfig::Kind::Chat) {
    throw CapabilityError(where + ": " + std::string(to_string(method.kind)) +
                          " control needs a steering-capable backend; model '" + model.backend.display_id() +
                          "' is a chat API");
  }
  if (model.kind == ModelConfig::Kind::Mock && !method.range) {
    throw ConfigurationError(where + ": " + std::string(to_string(method.kind)) +
                             " on a mock model needs lambda_min/lambda_max");
  }
}

std::vector<double> grid_for(const MethodConfig& method, const GridSpec& task_grid) {
  return method.grid ? *method.grid : task_grid.values();
}

void check_grid_domain(const MethodConfig& method, const std::vector<double>& grid, const std::string& where) {
  CoefficientDomain domain{0.0, 1.0, 0.05};
  if (is_steering(method.kind)) {
    if (!method.range) return;  // domain known only once the sidecar is asked
    domain = {method.range->lambda_min, method.range->lambda_max, std::nullopt};
  }
  for (double c : grid) {
    if (!domain.contains(c)) {
      std::ostringstream msg;
      msg << where << ": grid value " << c << " outside the " << to_string(method.kind) << " domain [" << domain.lo
          << ", " << domain.hi << "]";
      throw DomainError(msg.str());
    }
  }
}

std::string utc_timestamp(const char* format) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, format);
  return ss.str();
}

std::string source_name(ResponseSource s) { return s == ResponseSource::ExactProbs ? "exact_probs" : "frequencies"; }

// --- run state ------------------------------------------------------------------------

class RunWriter {
 public:
  RunWriter(RunRecord& record, const RunOptions& options) : record_(record), options_(options) {
    if (!options_.persist) return;
    dir_ = run_directory(options_.runs_root, record_.run_id);
    std::filesystem::create_directories(dir_);
    write_text_file(dir_ / "config.json", record_.config.dump(2) + "\n");
    events_.open(dir_ / "events.jsonl", std::ios::app);
    if (!events_) throw Error("cannot open event log in " + dir_.string());
  }

  void event(const std::string& kind, json payload) {
    if (!options_.persist) return;
    payload["event"] = kind;
    events_ << payload.dump() << '\n';
    events_.flush();
  }

  void checkpoint() {
    if (!options_.persist) return;
    write_text_file(dir_ / "summary.json", to_json(record_).dump(2) + "\n");
  }

 private:
  RunRecord& record_;
  const RunOptions& options_;
  std::filesystem::path dir_;
  std::ofstream events_;
};

struct RunContext {
  const ExperimentConfig& config;
  Testbed testbed;
  std::map<std::string, BiasSpec> specs;
  std::vector<ModelConfig> models;
  std::vector<AgentPtr> agents;
  RunRecord& record;
  RunWriter& writer;

  MeasureOptions measure_options() const { return {config.execution, 0.05}; }

  const BiasSpec& spec_for(const ParadigmSpec& p) const { return specs.at(p.bias); }

  ControlMethod resolve(const MethodConfig& m, std::size_t model_index) const {
    if (m.kind == ControlKind::PromptNumerical) return ControlMethod::prompt_numerical();
    if (m.range) return ControlMethod::steering(m.kind, *m.range, m.handle);
    const auto sidecar = std::dynamic_pointer_cast<const SidecarClient>(agents[model_index]);
    if (!sidecar) throw ConfigurationError("no stability range for " + std::string(to_string(m.kind)));
    return ControlMethod::steering(m.kind, sidecar->stability(m.handle), m.handle);
  }

  void note_measurement(const std::string& model, const CbiMeasurement& m) {
    if (!m.dropped_variants.empty()) {
      record.failures["dropped_variants"].push_back(
          {{"model", model}, {"paradigm", m.paradigm_id}, {"variants", m.dropped_variants}});
    }
    record.failures["parse_rejects"] = record.failures.value("parse_rejects", std::size_t{0}) + m.parse_rejects;
  }

  void add(const char* bucket, json entry) {
    record.results[bucket].push_back(entry);
    writer.event(bucket, std::move(entry));
  }
};

void run_measure(RunContext& ctx, const MeasureTask& task, std::size_t task_index, Seed seed) {
  for (std::size_t mi = 0; mi < ctx.agents.size(); ++mi) {
    const std::string model = ctx.agents[mi]->id();
    for (const auto& pid : task.paradigms) {
      const ParadigmSpec& p = ctx.testbed.find(pid);
      CbiMeasurement m;
      json entry{{"task", task_index}, {"model", model}, {"paradigm", pid}};
      if (task.method) {
        const ControlMethod method = ctx.resolve(*task.method, mi);
        m = measure_controlled(ctx.agents[mi], method, ctx.spec_for(p), p, task.coefficient, seed,
                               ctx.measure_options());
        entry["method"] = to_string(method.kind);
        entry["coefficient"] = task.coefficient;
      } else {
        m = measure(*ctx.agents[mi], p, seed, ctx.measure_options());
        entry["method"] = nullptr;
        entry["coefficient"] = nullptr;
      }
      ctx.note_measurement(model, m);
      entry["measurement"] = to_json(m);
      ctx.add("measurements", std::move(entry));
    }
  }
}

void run_sweep(RunContext& ctx, const SweepTask& task, std::size_t task_index, Seed seed) {
  for (std::size_t mi = 0; mi < ctx.agents.size(); ++mi) {
    const std::string model = ctx.agents[mi]->id();
    for (const auto& mc : ctx.config.methods) {
      const ControlMethod method = ctx.resolve(mc, mi);
      const std::vector<double> grid = grid_for(mc, task.grid);
      std::map<std::string, ControlCurve> curves;
      for (const auto& pid : task.paradigms) {
        const ParadigmSpec& p = ctx.testbed.find(pid);
        ControlCurve curve = sweep(ctx.agents[mi], method, ctx.spec_for(p), p, grid, seed, ctx.measure_options());
        for (const auto& pt : curve.points) ctx.note_measurement(model, pt.cbi);
        const MetricsReport metrics = evaluate_curve(curve, ctx.config.metrics_alpha);
        ctx.add("curves", {{"task", task_index},
                           {"model", model},
                           {"method", to_string(method.kind)},
                           {"paradigm", pid},
                           {"curve", to_json(curve)},
                           {"metrics", to_json(metrics)}});
        curves.emplace(pid, std::move(curve));
      }
      for (const auto& [src, dst] : task.transfer_pairs) {
        const TransferReport t = transfer_report(curves.at(src), curves.at(dst));
        ctx.add("transfers", {{"task", task_index},
                              {"model", model},
                              {"method", to_string(method.kind)},
                              {"source", src},
                              {"target", dst},
                              {"report", to_json(t)}});
      }
    }
  }
}

void run_calibrate(RunContext& ctx, const CalibrateTask& task, std::size_t task_index, Seed seed) {
  for (std::size_t mi = 0; mi < ctx.agents.size(); ++mi) {
    const std::string model = ctx.agents[mi]->id();
    for (const auto& mc : ctx.config.methods) {
      const ControlMethod method = ctx.resolve(mc, mi);
      for (const auto& pid : task.paradigms) {
        const ParadigmSpec& p = ctx.testbed.find(pid);
        for (double target : task.targets) {
          const CalibrationResult r = calibrate(ctx.agents[mi], method, ctx.spec_for(p), p, target, seed,
                                                {task.tolerance, task.budget, ctx.measure_options()});
          json entry{{"task", task_index},
                     {"model", model},
                     {"method", to_string(method.kind)},
                     {"paradigm", pid},
                     {"result", to_json(r)},
                     {"transfer", nullptr}};
          if (const auto it = task.transfer_to.find(pid); it != task.transfer_to.end()) {
            const ParadigmSpec& q = ctx.testbed.find(it->second);
            const CbiMeasurement m = measure_controlled(ctx.agents[mi], method, ctx.spec_for(q), q, r.coefficient,
                                                        seed, ctx.measure_options());
            ctx.note_measurement(model, m);
            entry["transfer"] = {{"paradigm", q.id}, {"measurement", to_json(m)}};
          }
          ctx.add("calibrations", std::move(entry));
        }
      }
    }
  }
}

void run_gap(RunContext& ctx, const GapTask& task, std::size_t task_index, Seed seed) {
  const ParadigmSpec& calib = ctx.testbed.find(task.calibration_paradigm);
  const ParadigmSpec& target = ctx.testbed.find(task.target_paradigm);
  GapCurve gap;
  gap.cbi_grid = task.cbi_grid;

  std::vector<double> no_control, nl_control;
  for (const auto& agent : ctx.agents) {
    no_control.push_back(measure(*agent, target, seed, ctx.measure_options()).value);
    const AgentPtr nl = with_system_prompt(agent, natural_language_control_text(ctx.spec_for(target)));
    nl_control.push_back(measure(*nl, target, seed, ctx.measure_options()).value);
  }
  add_baseline_gap(gap, "no_control", no_control);
  add_baseline_gap(gap, "nl_control", nl_control);

  json curves = json::array();
  for (const auto& mc : ctx.config.methods) {
    std::vector<ModelGapData> data;
    for (std::size_t mi = 0; mi < ctx.agents.size(); ++mi) {
      const ControlMethod method = ctx.resolve(mc, mi);
      const std::vector<double> grid = grid_for(mc, task.grid);
      ModelGapData d{ctx.agents[mi]->id(),
                     sweep(ctx.agents[mi], method, ctx.spec_for(calib), calib, grid, seed, ctx.measure_options()),
                     sweep(ctx.agents[mi], method, ctx.spec_for(target), target, grid, seed, ctx.measure_options())};
      curves.push_back({{"model", d.model_id},
                        {"method", to_string(mc.kind)},
                        {"calibration", to_json(d.calibration)},
                        {"target", to_json(d.target)}});
      data.push_back(std::move(d));
    }
    add_controlled_gap(gap, std::string(to_string(mc.kind)), data);
  }
  ctx.add("gaps", {{"task", task_index},
                   {"calibration_paradigm", calib.id},
                   {"target_paradigm", target.id},
                   {"no_control_cbi", no_control},
                   {"nl_control_cbi", nl_control},
                   {"curves", curves},
                   {"gap", to_json(gap)}});
}

void run_contagion(RunContext& ctx, const ContagionTask& task, std::size_t task_index, Seed seed) {
  const ParadigmSpec& p = ctx.testbed.find(task.paradigm);
  const PostCorpus corpus = task.corpus.empty() ? PostCorpus::bundled() : PostCorpus::load_jsonl(task.corpus);
  const LexiconScorer scorer;
  for (std::size_t mi = 0; mi < ctx.agents.size(); ++mi) {
    const std::string model = ctx.agents[mi]->id();
    std::vector<ContagionAgent> agents;
    json programmed = json::array();
    if (task.preset == "cobra") {
      const ControlMethod method = ctx.resolve(ctx.config.methods.front(), mi);
      for (double level : cobra_cbi_levels()) {
        const CalibrationResult r =
            calibrate(ctx.agents[mi], method, ctx.spec_for(p), p, level, seed, {task.tolerance, 20, ctx.measure_options()});
        std::ostringstream label;
        label << "cbi=" << level;
        agents.push_back({label.str(), r.achieved, apply_control(ctx.agents[mi], method, ctx.spec_for(p), r.coefficient)});
        programmed.push_back({{"label", label.str()}, {"target", level}, {"calibration", to_json(r)}});
      }
    } else {
      const char* degrees[] = {"no", "little", "some", "much"};
      const auto prompts = baseline_persona_prompts();
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        AgentPtr a = with_system_prompt(ctx.agents[mi], prompts[i]);
        const CbiMeasurement m = measure(*a, p, seed, ctx.measure_options());
        agents.push_back({degrees[i], m.value, a});
        programmed.push_back({{"label", degrees[i]}, {"persona", prompts[i]}, {"measurement", to_json(m)}});
      }
    }
    DoseResponseOptions opts;
    opts.doses = task.doses;
    opts.trials_per_cell = task.trials_per_cell;
    opts.feed_size = task.feed_size;
    opts.execution = ctx.config.execution;
    const DoseResponseResult result = run_dose_response(agents, corpus, scorer, seed, opts);
    for (const auto& t : result.trials) {
      json e = to_json(t);
      e["task"] = task_index;
      e["model"] = model;
      ctx.writer.event("contagion_trial", std::move(e));
    }
    json cells = json::array();
    for (const auto& c : result.cells) cells.push_back(to_json(c));
    json regressions = json::array();
    for (const auto& a : agents) regressions.push_back(to_json(regress_dose(result, a.label)));
    ctx.add("contagion", {{"task", task_index},
                          {"model", model},
                          {"preset", task.preset},
                          {"paradigm", p.id},
                          {"scorer", result.scorer_id},
                          {"agents", programmed},
                          {"cells", cells},
                          {"regressions", regressions}});
  }
}

std::string csv_number(const json& v) { return v.is_null() ? std::string() : v.dump(); }

std::string csv_text(const json& v) {
  const std::string s = v.is_string() ? v.get<std::string>() : (v.is_null() ? std::string() : v.dump());
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

const json& bucket(const RunRecord& r, const char* name) {
  static const json kEmpty = json::array();
  return r.results.contains(name) ? r.results.at(name) : kEmpty;
}

}  // namespace

// --- public API ----------------------------------------------------------------------

std::string_view to_string(ModelConfig::Kind kind) {
  switch (kind) {
    case ModelConfig::Kind::Mock: return "mock";
    case ModelConfig::Kind::Chat: return "chat";
    case ModelConfig::Kind::Sidecar: return "sidecar";
  }
  return "unknown";
}

ModelConfig::Kind model_kind_from_string(std::string_view s) {
  if (s == "mock") return ModelConfig::Kind::Mock;
  if (s == "chat") return ModelConfig::Kind::Chat;
  if (s == "sidecar") return ModelConfig::Kind::Sidecar;
  throw ValidationError("unknown model kind '" + std::string(s) + "' (expected mock, chat or sidecar)");
}

json to_json(const CbiMeasurement& m) {
  return {{"paradigm_id", m.paradigm_id},
          {"value", m.value},
          {"standard_error", m.standard_error},
          {"n_variants", m.n_variants},
          {"per_variant_scores", m.per_variant_scores},
          {"variant_indices", m.variant_indices},
          {"source", source_name(m.source)},
          {"total_samples", m.total_samples},
          {"parse_rejects", m.parse_rejects},
          {"dropped_variants", m.dropped_variants}};
}

json to_json(const ControlCurve& c) {
  json points = json::array();
  for (const auto& p : c.points) {
    points.push_back({{"coefficient", p.coefficient},
                      {"cbi", p.cbi.value},
                      {"standard_error", p.cbi.standard_error},
                      {"n_variants", p.cbi.n_variants},
                      {"total_samples", p.cbi.total_samples},
                      {"parse_rejects", p.cbi.parse_rejects}});
  }
  return {{"method", to_string(c.method)}, {"paradigm", c.paradigm_id}, {"backend", c.backend_id}, {"points", points}};
}

json to_json(const CalibrationResult& r) {
  json trace = json::array();
  for (const auto& s : r.trace) {
    trace.push_back({{"coefficient", s.coefficient}, {"cbi", s.cbi}, {"standard_error", s.standard_error}});
  }
  return {{"target", r.target},
          {"achieved", r.achieved},
          {"coefficient", r.coefficient},
          {"evaluations", r.evaluations},
          {"converged", r.converged},
          {"tolerance", r.tolerance},
          {"note", r.note},
          {"trace", trace},
          {"recheck_cbi", r.recheck_cbi ? json(*r.recheck_cbi) : json(nullptr)}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config: expected an object");
  reject_unknown_keys(j,
                      {"schema_version", "name", "seed", "models", "methods", "tasks", "temperatures", "testbed_files",
                       "bias_specs_file", "metrics_alpha", "execution"},
                      "config");
  ExperimentConfig c;
  c.schema_version = get_or<std::string>(j, "schema_version", c.schema_version, "config");
  if (c.schema_version.substr(0, c.schema_version.find('.')) != "1") {
    throw ValidationError("config.schema_version: unsupported version " + c.schema_version);
  }
  c.name = get_or<std::string>(j, "name", c.name, "config");
  if (c.name.empty() || c.name.find_first_of("/\\ ") != std::string::npos) {
    throw ValidationError("config.name: must be non-empty without spaces or slashes");
  }
  c.seed = get_or<Seed>(j, "seed", 0, "config");
  c.temperatures = get_or<std::vector<double>>(j, "temperatures", {}, "config");
  c.testbed_files = string_list(j, "testbed_files", "config");
  c.bias_specs_file = get_or<std::string>(j, "bias_specs_file", "", "config");
  c.metrics_alpha = get_or<double>(j, "metrics_alpha", 1.0, "config");
  if (!(c.metrics_alpha >= 0.0)) throw ValidationError("config.metrics_alpha: must be >= 0");
  const std::string exec = get_or<std::string>(j, "execution", "parallel", "config");
  if (exec == "parallel") c.execution = Execution::Parallel;
  else if (exec == "serial") c.execution = Execution::Serial;
  else throw ValidationError("config.execution: expected serial or parallel");
  for (double t : c.temperatures) {
    if (!(t >= 0.0)) throw ValidationError("config.temperatures: values must be >= 0");
  }

  if (!j.contains("models") || !j.at("models").is_array() || j.at("models").empty()) {
    throw ValidationError("config.models: needs at least one model");
  }
  for (std::size_t i = 0; i < j.at("models").size(); ++i) {
    c.models.push_back(model_from_json(j.at("models")[i], "config.models[" + std::to_string(i) + "]"));
  }
  if (j.contains("methods")) {
    for (std::size_t i = 0; i < j.at("methods").size(); ++i) {
      c.methods.push_back(method_from_json(j.at("methods")[i], "config.methods[" + std::to_string(i) + "]"));
    }
  }
  if (!j.contains("tasks") || !j.at("tasks").is_array() || j.at("tasks").empty()) {
    throw ValidationError("config.tasks: needs at least one task");
  }
  for (std::size_t i = 0; i < j.at("tasks").size(); ++i) {
    c.tasks.push_back(task_from_json(j.at("tasks")[i], "config.tasks[" + std::to_string(i) + "]"));
  }

  // Cross-checks against the testbed, bias specs and model capabilities.
  const Testbed testbed = testbed_for(c);
  const auto specs = bias_specs_for(c);
  auto check_paradigm = [&](const std::string& id, const std::string& where) {
    if (!testbed.contains(id)) throw ValidationError(where + ": unknown paradigm '" + id + "'");
    const std::string& bias = testbed.find(id).bias;
    if (!specs.count(bias)) throw ValidationError(where + ": no bias spec for bias type '" + bias + "'");
  };
  const std::vector<ModelConfig> models = expanded_models(c);
  std::set<std::string> ids;
  for (const auto& m : models) {
    if (!ids.insert(m.backend.display_id()).second) {
      throw ValidationError("config.models: duplicate model id '" + m.backend.display_id() + "'");
    }
    for (std::size_t k = 0; k < c.methods.size(); ++k) {
      check_capability(m, c.methods[k], "config.methods[" + std::to_string(k) + "]");
    }
  }
  for (std::size_t i = 0; i < c.tasks.size(); ++i) {
    const std::string where = "config.tasks[" + std::to_string(i) + "]";
    std::visit(
        [&](const auto& t) {
          using T = std::decay_t<decltype(t)>;
          if constexpr (std::is_same_v<T, MeasureTask>) {
            if (t.paradigms.empty()) throw ValidationError(where + ".paradigms: must not be empty");
            for (const auto& p : t.paradigms) check_paradigm(p, where + ".paradigms");
            if (t.method) {
              for (const auto& m : models) check_capability(m, *t.method, where + ".method");
              check_grid_domain(*t.method, {t.coefficient}, where + ".coefficient");
            }
          } else if constexpr (std::is_same_v<T, SweepTask>) {
            if (t.paradigms.empty()) throw ValidationError(where + ".paradigms: must not be empty");
            if (c.methods.empty()) throw ValidationError(where + ": sweep needs config.methods");
            for (const auto& p : t.paradigms) check_paradigm(p, where + ".paradigms");
            for (const auto& [a, b] : t.transfer_pairs) {
              const bool both = std::find(t.paradigms.begin(), t.paradigms.end(), a) != t.paradigms.end() &&
                                std::find(t.paradigms.begin(), t.paradigms.end(), b) != t.paradigms.end();
              if (!both) throw ValidationError(where + ".transfer_pairs: both paradigms must be swept");
            }
            for (const auto& m : c.methods) check_grid_domain(m, grid_for(m, t.grid), where + ".grid");
          } else if constexpr (std::is_same_v<T, CalibrateTask>) {
            if (t.paradigms.empty()) throw ValidationError(where + ".paradigms: must not be empty");
            if (c.methods.empty()) throw ValidationError(where + ": calibrate needs config.methods");
            for (const auto& p : t.paradigms) check_paradigm(p, where + ".paradigms");
            for (const auto& [a, b] : t.transfer_to) {
              check_paradigm(a, where + ".transfer_to");
              check_paradigm(b, where + ".transfer_to");
            }
            for (double target : t.targets) {
              if (!std::isfinite(target)) throw ValidationError(where + ".targets: must be finite");
            }
          } else if constexpr (std::is_same_v<T, GapTask>) {
            check_paradigm(t.calibration_paradigm, where + ".calibration_paradigm");
            check_paradigm(t.target_paradigm, where + ".target_paradigm");
            if (models.size() < 2) throw ValidationError(where + ": a gap analysis needs at least 2 models");
            if (c.methods.empty()) throw ValidationError(where + ": gap needs config.methods");
            for (const auto& m : c.methods) check_grid_domain(m, grid_for(m, t.grid), where + ".grid");
          } else {
            check_paradigm(t.paradigm, where + ".paradigm");
            if (t.preset == "cobra" && c.methods.empty()) {
              throw ValidationError(where + ": the cobra preset needs config.methods");
            }
            if (!t.corpus.empty() && !std::filesystem::exists(t.corpus)) {
              throw ValidationError(where + ".corpus: no such file " + t.corpus);
            }
          }
        },
        c.tasks[i]);
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json models = json::array();
  for (const auto& m : c.models) models.push_back(to_json(m));
  json methods = json::array();
  for (const auto& m : c.methods) methods.push_back(to_json(m));
  json tasks = json::array();
  for (const auto& t : c.tasks) tasks.push_back(to_json(t));
  return {{"schema_version", c.schema_version},
          {"name", c.name},
          {"seed", c.seed},
          {"models", models},
          {"methods", methods},
          {"tasks", tasks},
          {"temperatures", c.temperatures},
          {"testbed_files", c.testbed_files},
          {"bias_specs_file", c.bias_specs_file},
          {"metrics_alpha", c.metrics_alpha},
          {"execution", c.execution == Execution::Parallel ? "parallel" : "serial"}};
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_json(read_json_file(path, "experiment config"));
}

Testbed testbed_for(const ExperimentConfig& config) {
  std::vector<ParadigmSpec> all = load_bundled_testbed();
  for (const auto& f : config.testbed_files) {
    for (auto& p : load_testbed_file(f)) {
      for (const auto& existing : all) {
        if (existing.id == p.id) throw ValidationError(f + ": paradigm id '" + p.id + "' already defined");
      }
      all.push_back(std::move(p));
    }
  }
  return Testbed(std::move(all));
}

json to_json(const RunRecord& r) {
  return {{"schema_version", r.schema_version}, {"run_id", r.run_id},   {"timestamp", r.timestamp},
          {"status", r.status},                 {"config", r.config},   {"results", r.results},
          {"failures", r.failures}};
}

RunRecord run_record_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("run record: expected an object");
  RunRecord r;
  r.schema_version = get_required<std::string>(j, "schema_version", "run_record");
  if (r.schema_version.substr(0, r.schema_version.find('.')) != "1") {
    throw ValidationError("run record schema version " + r.schema_version + " is not supported (expected 1.x)");
  }
  r.run_id = get_required<std::string>(j, "run_id", "run_record");
  r.timestamp = get_or<std::string>(j, "timestamp", "", "run_record");
  r.status = get_or<std::string>(j, "status", "complete", "run_record");
  r.config = j.value("config", json::object());
  r.results = j.value("results", json::object());
  r.failures = j.value("failures", json::object());
  return r;
}

std::filesystem::path run_directory(const std::filesystem::path& runs_root, const std::string& run_id) {
  return runs_root / run_id;
}

RunRecord load_run_record(const std::filesystem::path& run_dir) {
  return run_record_from_json(read_json_file(run_dir / "summary.json", "run record"));
}

AgentPtr make_agent(const ModelConfig& model) {
  switch (model.kind) {
    case ModelConfig::Kind::Mock: return make_mock(model.mock, model.backend);
    case ModelConfig::Kind::Chat: return make_chat_api(model.backend);
    case ModelConfig::Kind::Sidecar: return make_sidecar_client(model.backend);
  }
  throw ValidationError("unknown model kind");
}

RunRecord run(const ExperimentConfig& config, const RunOptions& options) {
  RunRecord record;
  record.timestamp = utc_timestamp("%Y-%m-%dT%H:%M:%SZ");
  record.config = to_json(config);
  record.run_id = options.run_id;
  if (record.run_id.empty()) {
    const std::string base = config.name + "-" + utc_timestamp("%Y%m%dT%H%M%SZ");
    record.run_id = base;
    for (int k = 2; options.persist && std::filesystem::exists(run_directory(options.runs_root, record.run_id)); ++k) {
      record.run_id = base + "-" + std::to_string(k);
    }
  }
  for (const char* b : {"measurements", "curves", "transfers", "calibrations", "gaps", "contagion"}) {
    record.results[b] = json::array();
  }
  record.failures = {{"errors", json::array()}, {"dropped_variants", json::array()}, {"parse_rejects", 0}};

  RunWriter writer(record, options);
  RunContext ctx{config, testbed_for(config), bias_specs_for(config), expanded_models(config), {}, record, writer};

  std::size_t current_task = 0;
  try {
    for (const auto& m : ctx.models) ctx.agents.push_back(make_agent(m));
    for (; current_task < config.tasks.size(); ++current_task) {
      const Seed seed = derive_seed(config.seed, "task", current_task);
      writer.event("task_start", {{"task", current_task}, {"type", task_type(config.tasks[current_task])}});
      std::visit(
          [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, MeasureTask>) run_measure(ctx, t, current_task, seed);
            else if constexpr (std::is_same_v<T, SweepTask>) run_sweep(ctx, t, current_task, seed);
            else if constexpr (std::is_same_v<T, CalibrateTask>) run_calibrate(ctx, t, current_task, seed);
            else if constexpr (std::is_same_v<T, GapTask>) run_gap(ctx, t, current_task, seed);
            else run_contagion(ctx, t, current_task, seed);
          },
          config.tasks[current_task]);
      writer.checkpoint();
    }
  } catch (const std::exception& e) {
    record.status = "aborted";
    record.failures["errors"].push_back({{"task", current_task}, {"message", e.what()}});
    writer.event("abort", {{"task", current_task}, {"message", e.what()}});
    writer.checkpoint();
    throw;
  }
  json stats = json::object();
  for (const auto& a : ctx.agents) {
    const BackendStats s = a->stats();
    stats[a->id()] = {{"requests", s.requests}, {"retries", s.retries}, {"failures", s.failures}};
  }
  record.failures["backend_stats"] = stats;
  writer.event("complete", {{"run_id", record.run_id}});
  writer.checkpoint();
  return record;
}

RunRecord rerun(const RunRecord& record, const RunOptions& options) {
  return run(experiment_config_from_json(record.config), options);
}

bool results_equal(const RunRecord& a, const RunRecord& b) { return a.results == b.results; }

bool all_calibrations_converged(const RunRecord& record) {
  for (const auto& c : bucket(record, "calibrations")) {
    if (!c.at("result").at("converged").get<bool>()) return false;
  }
  return true;
}

std::string export_csv(const RunRecord& record, const std::string& selector) {
  std::ostringstream out;
  if (selector == "metrics") {
    out << "model,method,paradigm,ndcg,spearman_rho,delta1,delta2,expressiveness\n";
    for (const auto& c : bucket(record, "curves")) {
      const json& m = c.at("metrics");
      out << csv_text(c.at("model")) << ',' << csv_text(c.at("method")) << ',' << csv_text(c.at("paradigm")) << ','
          << csv_number(m.at("ndcg")) << ',' << csv_number(m.at("spearman_rho")) << ',' << csv_number(m.at("delta1"))
          << ',' << csv_number(m.at("delta2")) << ',' << csv_number(m.at("expressiveness")) << '\n';
    }
  } else if (selector == "curves") {
    out << "model,method,paradigm,coefficient,cbi,standard_error\n";
    for (const auto& c : bucket(record, "curves")) {
      for (const auto& p : c.at("curve").at("points")) {
        out << csv_text(c.at("model")) << ',' << csv_text(c.at("method")) << ',' << csv_text(c.at("paradigm")) << ','
            << csv_number(p.at("coefficient")) << ',' << csv_number(p.at("cbi")) << ','
            << csv_number(p.at("standard_error")) << '\n';
      }
    }
  } else if (selector == "measurements") {
    out << "model,paradigm,method,coefficient,cbi,standard_error,n_variants,source\n";
    for (const auto& m : bucket(record, "measurements")) {
      const json& v = m.at("measurement");
      out << csv_text(m.at("model")) << ',' << csv_text(m.at("paradigm")) << ',' << csv_text(m.at("method")) << ','
          << csv_number(m.at("coefficient")) << ',' << csv_number(v.at("value")) << ','
          << csv_number(v.at("standard_error")) << ',' << csv_number(v.at("n_variants")) << ','
          << csv_text(v.at("source")) << '\n';
    }
  } else if (selector == "calibrations") {
    out << "model,method,paradigm,target,achieved,coefficient,evaluations,converged,transfer_paradigm,transfer_cbi\n";
    for (const auto& c : bucket(record, "calibrations")) {
      const json& r = c.at("result");
      const json& t = c.at("transfer");
      out << csv_text(c.at("model")) << ',' << csv_text(c.at("method")) << ',' << csv_text(c.at("paradigm")) << ','
          << csv_number(r.at("target")) << ',' << csv_number(r.at("achieved")) << ','
          << csv_number(r.at("coefficient")) << ',' << csv_number(r.at("evaluations")) << ','
          << (r.at("converged").get<bool>() ? "true" : "false") << ','
          << (t.is_null() ? "" : csv_text(t.at("paradigm"))) << ','
          << (t.is_null() ? "" : csv_number(t.at("measurement").at("value"))) << '\n';
    }
  } else if (selector == "dose_response") {
    out << "agent,cbi,dose,mean,std,n\n";
    for (const auto& c : bucket(record, "contagion")) {
      for (const auto& cell : c.at("cells")) {
        const bool ok = cell.at("ok").get<bool>();
        out << csv_text(c.at("model").get<std::string>() + "/" + cell.at("agent").get<std::string>()) << ','
            << csv_number(cell.at("cbi")) << ',' << csv_number(cell.at("dose")) << ','
            << (ok ? csv_number(cell.at("mean")) : "") << ',' << (ok ? csv_number(cell.at("std")) : "") << ','
            << csv_number(cell.at("n")) << '\n';
      }
    }
  } else if (selector == "gaps") {
    out << "calibration_paradigm,target_paradigm,condition,cbi,spread\n";
    for (const auto& g : bucket(record, "gaps")) {
      const json& gap = g.at("gap");
      const json& grid = gap.at("cbi_grid");
      for (const auto& [condition, spreads] : gap.at("spreads").items()) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
          out << csv_text(g.at("calibration_paradigm")) << ',' << csv_text(g.at("target_paradigm")) << ','
              << csv_text(condition) << ',' << csv_number(grid[i]) << ',' << csv_number(spreads[i]) << '\n';
        }
      }
    }
  } else {
    throw ValidationError("unknown CSV selector '" + selector +
                          "' (expected metrics, curves, measurements, calibrations, dose_response or gaps)");
  }
  return out.str();
}

}  // namespace cobra
