#pragma once

#include "vlptl/detector.hpp"
#include "vlptl/encoders.hpp"
#include "vlptl/metrics.hpp"
#include "vlptl/pretrain_loop.hpp"
#include "vlptl/pts.hpp"
#include "vlptl/synthetic.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vlptl::pipeline {

// Synthetic data sizes.
struct DataConfig {
    int instances_per_category = 40;
    int heldout_per_category = 10;
    int instance_size = 64;
    int train_scenes = 108;
    int test_scenes = 12;
    int scene_size = 256;
    int min_objects = 2;
    int max_objects = 4;
};

struct TransitionConfig {
    bool enabled = true;
    int epochs = 5;
    int n_sizes = 3;
    // Empty: the pretraining stage's checkpoint and the synthetic training scenes.
    std::string checkpoint;
    std::string scenes;
};

// Which encoder the detector starts from: "auto" takes the transition
// checkpoint when that stage is enabled and the pretraining one otherwise.
struct DetectStageConfig {
    detect::DetectorConfig detector;
    std::string backbone = "auto";  // auto | pretrain | transition | random
    std::string run_name = "detect";
};

struct StageSeeds {
    std::uint64_t synth = 0;
    std::uint64_t curate = 1;
    std::uint64_t pretrain = 2;
    std::uint64_t transition = 3;
    std::uint64_t detect = 4;
};

struct PipelineConfig {
    std::string output_dir = "runs/desk";
    // Where synth and curate write; empty means output_dir. Ablation cells
    // point this at a shared directory so the data is generated once per seed.
    std::string data_dir;
    std::string taxonomy;   // JSON file; empty means the built-in desk taxonomy
    std::string templates;  // JSON file; empty means the built-in templates
    bool pretrain_enabled = true;
    StageSeeds seeds;
    DataConfig data;
    EncoderConfig encoder;
    pretrain::PretrainConfig pretrain;
    TransitionConfig transition;
    DetectStageConfig detect;

    // Full desk run: about 5 min on one core per detector.
    static PipelineConfig desk();
    // Seconds-scale configuration for plumbing checks.
    static PipelineConfig smoke();

    // Every stage seed offset from `base`.
    void set_seed(std::uint64_t base);

    // Throws ConfigError.
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    // Missing keys keep the desk defaults; unknown keys raise ConfigError.
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
// Throws ConfigError when the key does not exist in the configuration.
void apply_override(nlohmann::json& config, const std::string& assignment);
PipelineConfig with_overrides(const PipelineConfig& base, const std::vector<std::string>& assignments);

// config.output_dir, resolved against $VLPTL_OUTPUT_ROOT when that is set and
// the directory is relative.
std::filesystem::path output_root(const PipelineConfig& config);

// Paths of every stage artifact.
struct Layout {
    std::filesystem::path root;
    std::filesystem::path data;

    explicit Layout(const PipelineConfig& config);

    [[nodiscard]] std::filesystem::path synth_dir() const { return data / "synth"; }
    [[nodiscard]] std::filesystem::path instance_labels() const { return synth_dir() / "instances.tsv"; }
    [[nodiscard]] std::filesystem::path heldout_labels() const { return synth_dir() / "heldout.tsv"; }
    [[nodiscard]] std::filesystem::path train_scenes() const { return synth_dir() / "scenes_train"; }
    [[nodiscard]] std::filesystem::path test_scenes() const { return synth_dir() / "scenes_test"; }
    [[nodiscard]] std::filesystem::path curate_dir() const { return data / "curate"; }
    [[nodiscard]] std::filesystem::path manifest() const { return curate_dir() / "manifest.jsonl"; }
    [[nodiscard]] std::filesystem::path heldout_manifest() const { return curate_dir() / "heldout.jsonl"; }
    [[nodiscard]] std::filesystem::path pool() const { return curate_dir() / "pool.json"; }
    [[nodiscard]] std::filesystem::path pretrain_dir() const { return root / "pretrain"; }
    [[nodiscard]] std::filesystem::path pretrain_checkpoint() const { return pretrain_dir() / "session.ckpt"; }
    [[nodiscard]] std::filesystem::path transition_dir() const { return root / "transition"; }
    [[nodiscard]] std::filesystem::path transition_manifest() const { return transition_dir() / "manifest.jsonl"; }
    [[nodiscard]] std::filesystem::path transition_checkpoint() const { return transition_dir() / "session.ckpt"; }
    [[nodiscard]] std::filesystem::path detect_dir(const std::string& run) const { return root / run; }
};

// Written as stage.json next to each stage's outputs.
struct StageRecord {
    std::string stage;
    std::string hash;          // stable hash of the stage config and its inputs' hashes
    nlohmann::json inputs;     // predecessor stage -> hash
    nlohmann::json summary;    // stage-specific numbers

    [[nodiscard]] nlohmann::json to_json() const;
    static StageRecord from_json(const nlohmann::json& j);
};

inline constexpr const char* kStageFile = "stage.json";

// Throws StageDependencyError when the directory holds no record.
StageRecord read_stage(const std::filesystem::path& dir, const std::string& stage);
// Recomputes every recorded input hash under the layout and lists mismatches
// as "stage: input expected X found Y".
std::vector<std::string> check_provenance(const PipelineConfig& config);

Taxonomy load_taxonomy(const PipelineConfig& config);
AltTextPool load_pool(const PipelineConfig& config, const Taxonomy& taxonomy);

// Each stage reads its predecessor's artifacts, overwrites its own outputs and
// returns the record it wrote. Progress lines go to `log` when given.
StageRecord cmd_synth(const PipelineConfig& config, std::ostream* log = nullptr);
StageRecord cmd_curate(const PipelineConfig& config, std::ostream* log = nullptr);
StageRecord cmd_pretrain(const PipelineConfig& config, std::ostream* log = nullptr);
StageRecord cmd_transition(const PipelineConfig& config, std::ostream* log = nullptr);
StageRecord cmd_train_det(const PipelineConfig& config, std::ostream* log = nullptr);
// Predicts on the test scenes with the trained detector and writes
// detections.jsonl, report.txt and report.json into the detect run directory.
StageRecord cmd_eval(const PipelineConfig& config, std::ostream* log = nullptr);

// Standalone inference and scoring used by the predict and eval verbs.
DetectionsByImage predict_directory(const std::filesystem::path& detector_checkpoint,
                                    const std::filesystem::path& image_dir);
metrics::APReport evaluate_files(const std::filesystem::path& detections_file, const std::filesystem::path& scene_dir,
                                 const Taxonomy& taxonomy);

// Runs the enabled stages in order and returns the final report.
metrics::APReport run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

// ---- ablations -------------------------------------------------------------

struct AblationRow {
    std::string name;
    bool itc = true;
    bool srj = true;
    bool dnc = true;
    bool pts = true;
    int n_sizes = 3;
};

// The eight task toggles and the five crop-size counts.
std::vector<AblationRow> task_toggle_rows();
std::vector<AblationRow> crop_size_rows();

struct AblationCell {
    std::uint64_t seed = 0;
    std::optional<metrics::APReport> report;
    std::string error;
};

struct AblationResult {
    AblationRow row;
    std::vector<AblationCell> cells;
    // Over successful cells; spread is the sample standard deviation (0 for one cell).
    double mean_map50 = 0;
    double mean_map75 = 0;
    double mean_map50_95 = 0;
    double spread_map50 = 0;
    double spread_map75 = 0;
    double spread_map50_95 = 0;
    int succeeded = 0;
};

struct AblationTable {
    std::vector<AblationResult> rows;

    [[nodiscard]] std::string to_text() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

// Every row times every seed, each cell a full pipeline under
// <root>/ablate/<row>/seed<k>. A failing cell is recorded and the grid goes on.
AblationTable cmd_ablate(const PipelineConfig& base, const std::vector<AblationRow>& rows,
                         const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);

}  // namespace vlptl::pipeline
