#pragma once

// Declarative experiments, run records and their exports.
//
// A run directory holds:
//   config.json    the validated ExperimentConfig
//   events.jsonl   append-only log, one JSON object per produced result
//   summary.json   the RunRecord (rewritten after every task, so an aborted
//                  run keeps everything finished before the failure)

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/execution.hpp"
#include "cobra/mock.hpp"
#include "cobra/regulation.hpp"

namespace cobra {

inline constexpr const char* kRecordSchemaVersion = "1.0";

struct ModelConfig {
  enum class Kind { Mock, Chat, Sidecar };
  Kind kind = Kind::Mock;
  BackendConfig backend;
  MockAgentSpec mock;  // Kind::Mock only
};

struct MethodConfig {
  ControlKind kind = ControlKind::PromptNumerical;
  std::string handle;                  // vector_id / task_id for steering kinds
  std::optional<StabilityRange> range;  // steering domain; queried from the sidecar when absent
  std::optional<std::vector<double>> grid;  // overrides a sweep task's grid for this method
};

// --- serialization of results ---------------------------------------------------

nlohmann::json to_json(const CbiMeasurement& m);
nlohmann::json to_json(const ControlCurve& curve);
nlohmann::json to_json(const CalibrationResult& result);

struct GridSpec {
  double start = 0.0;
  double stop = 1.0;
  double step = 0.1;
  std::vector<double> values() const { return make_grid(start, stop, step); }
};

struct MeasureTask {
  std::vector<std::string> paradigms;
  std::optional<MethodConfig> method;
  double coefficient = 0.0;
};

struct SweepTask {
  std::vector<std::string> paradigms;
  GridSpec grid;
  /// (source, target) paradigm pairs reported as TransferReports.
  std::vector<std::pair<std::string, std::string>> transfer_pairs;
};

struct CalibrateTask {
  std::vector<std::string> paradigms;
  std::vector<double> targets;
  double tolerance = 0.05;
  int budget = 20;
  /// Calibration paradigm -> paradigm measured at the calibrated coefficient.
  std::map<std::string, std::string> transfer_to;
};

struct GapTask {
  std::string calibration_paradigm;
  std::string target_paradigm;
  GridSpec grid;
  std::vector<double> cbi_grid;
};

struct ContagionTask {
  std::string preset = "cobra";  // "cobra" | "baseline"
  std::string paradigm = "asch_line";
  std::vector<int> doses{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  int trials_per_cell = 30;
  int feed_size = 20;
  double tolerance = 0.05;
  std::string corpus;  // empty: bundled corpus
};

using Task = std::variant<MeasureTask, SweepTask, CalibrateTask, GapTask, ContagionTask>;

struct ExperimentConfig {
  std::string schema_version = kRecordSchemaVersion;
  std::string name = "experiment";
  Seed seed = 0;
  std::vector<ModelConfig> models;
  std::vector<MethodConfig> methods;
  std::vector<Task> tasks;
  /// When non-empty every model is replicated once per temperature.
  std::vector<double> temperatures;
  std::vector<std::string> testbed_files;
  std::string bias_specs_file;
  double metrics_alpha = 1.0;
  Execution execution = Execution::Parallel;
};

/// Parses and validates (unknown paradigms, bad grids, capability mismatches)
/// without touching any backend.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// The testbed a config runs against: bundled paradigms plus extra files.
Testbed testbed_for(const ExperimentConfig& config);

struct RunRecord {
  std::string schema_version = kRecordSchemaVersion;
  std::string run_id;
  std::string timestamp;
  std::string status = "complete";  // "complete" | "aborted"
  nlohmann::json config;
  nlohmann::json results = nlohmann::json::object();
  nlohmann::json failures = nlohmann::json::object();
};

nlohmann::json to_json(const RunRecord& record);
/// Rejects unknown major schema versions.
RunRecord run_record_from_json(const nlohmann::json& j);

RunRecord load_run_record(const std::filesystem::path& run_dir);
std::filesystem::path run_directory(const std::filesystem::path& runs_root, const std::string& run_id);

struct RunOptions {
  std::filesystem::path runs_root = "runs";
  bool persist = true;
  std::string run_id;  // generated when empty
};

/// Executes every task in order. With persist, results are written as they
/// are produced; on failure the partial record is saved with status
/// "aborted" and the error is rethrown.
RunRecord run(const ExperimentConfig& config, const RunOptions& options = {});

/// Runs the record's config again.
RunRecord rerun(const RunRecord& record, const RunOptions& options = {});

/// Compares results exactly (bit-identical numbers).
bool results_equal(const RunRecord& a, const RunRecord& b);

/// CSV views of a record: "metrics", "curves", "measurements",
/// "calibrations", "dose_response", "gaps". Only reads stored values.
std::string export_csv(const RunRecord& record, const std::string& selector);

/// SVG plots: one per (method, paradigm) control curve set, per gap curve,
/// per dose-response table and per transfer report. Returns written files.
std::vector<std::filesystem::path> emit_plots(const RunRecord& record, const std::filesystem::path& out_dir);

/// True when every calibration in the record converged.
bool all_calibrations_converged(const RunRecord& record);

/// Backend for a model config (mock, chat API or sidecar client).
AgentPtr make_agent(const ModelConfig& model);

ModelConfig::Kind model_kind_from_string(std::string_view s);
std::string_view to_string(ModelConfig::Kind kind);

}  // namespace cobra
