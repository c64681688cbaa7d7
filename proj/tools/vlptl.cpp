// Command-line front end for the pretrain -> transition -> detect pipeline.
//
//   vlptl [--preset desk|smoke] [--config FILE] [--set key=value]... [--output DIR] <verb>
//
// Exit codes: 0 success, 2 configuration or input error, 3 missing stage
// artifact, 4 numeric failure, 1 anything else.

#include "vlptl/errors.hpp"
#include "vlptl/pipeline.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
namespace pl = vlptl::pipeline;

namespace {

struct Options {
    std::string preset = "desk";
    std::string config_file;
    std::vector<std::string> overrides;
    std::string output;
    std::int64_t seed = -1;
    bool quiet = false;
};

pl::PipelineConfig resolve(const Options& o) {
    pl::PipelineConfig base;
    if (!o.config_file.empty()) {
        base = pl::PipelineConfig::load(o.config_file);
    } else if (o.preset == "smoke") {
        base = pl::PipelineConfig::smoke();
    } else {
        base = pl::PipelineConfig::desk();
    }
    std::vector<std::string> sets = o.overrides;
    if (!o.output.empty()) {
        sets.push_back("output_dir=" + o.output);
    }
    pl::PipelineConfig config = pl::with_overrides(base, sets);
    if (o.seed >= 0) {
        config.set_seed(static_cast<std::uint64_t>(o.seed));
    }
    return config;
}

void print_record(const pl::StageRecord& r) {
    std::cout << r.stage << " " << r.hash << " " << r.summary.dump() << '\n';
}

std::vector<pl::AblationRow> select_rows(const std::string& grid, const std::vector<std::string>& names) {
    std::vector<pl::AblationRow> all;
    if (grid == "tasks" || grid == "all") {
        all = pl::task_toggle_rows();
    }
    if (grid == "sizes" || grid == "all") {
        const auto sizes = pl::crop_size_rows();
        all.insert(all.end(), sizes.begin(), sizes.end());
    }
    if (names.empty()) {
        return all;
    }
    std::vector<pl::AblationRow> out;
    for (const auto& n : names) {
        const auto it = std::find_if(all.begin(), all.end(), [&](const pl::AblationRow& r) { return r.name == n; });
        if (it == all.end()) {
            throw vlptl::ConfigError("unknown ablation row '" + n + "' in grid " + grid);
        }
        out.push_back(*it);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vision-language pretraining and transfer for defect detection"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--preset", o.preset, "Built-in configuration")->check(CLI::IsMember({"desk", "smoke"}));
    app.add_option("--config", o.config_file, "JSON configuration file (overrides --preset)")->check(CLI::ExistingFile);
    app.add_option("--set", o.overrides, "Override a field, e.g. --set pretrain.epochs=3");
    app.add_option("--output", o.output, "Output directory");
    app.add_option("--seed", o.seed, "Derive every stage seed from this base seed");
    app.add_flag("-q,--quiet", o.quiet, "Suppress progress lines");

    auto* synth = app.add_subcommand("synth", "Render instance images and detection scenes");
    auto* curate = app.add_subcommand("curate", "Pair instance images with alt-texts");
    auto* pretrain = app.add_subcommand("pretrain", "Vision-language pretraining");

    auto* transition = app.add_subcommand("transition", "Continue pretraining with context crops from the scenes");
    std::string t_ckpt;
    std::string t_scenes;
    int t_sizes = 0;
    transition->add_option("--ckpt", t_ckpt, "Pretraining checkpoint (default: this run's)");
    transition->add_option("--scenes", t_scenes, "Scene directory to crop from (default: synthetic training scenes)");
    transition->add_option("--n-sizes", t_sizes, "Number of context sizes, 1 to 5")->check(CLI::Range(1, 5));

    auto* train_det = app.add_subcommand("train-det", "Train the detector on the training scenes");
    std::string backbone;
    std::string run_name;
    train_det->add_option("--backbone", backbone, "auto, pretrain, transition or random")
        ->check(CLI::IsMember({"auto", "pretrain", "transition", "random"}));
    train_det->add_option("--run", run_name, "Run directory name under the output directory");

    auto* predict = app.add_subcommand("predict", "Detect defects in every PNG of a directory");
    std::string p_ckpt;
    std::string p_images;
    std::string p_out;
    predict->add_option("--ckpt", p_ckpt, "Detector checkpoint")->required();
    predict->add_option("--images", p_images, "Image directory")->required();
    predict->add_option("--out", p_out, "Detections file (JSON lines)")->required();

    auto* eval = app.add_subcommand("eval", "Score detections; without --dets, evaluates this run's detector");
    std::string e_dets;
    std::string e_gts;
    std::string e_out;
    eval->add_option("--dets", e_dets, "Detections file")->check(CLI::ExistingFile);
    eval->add_option("--gts", e_gts, "Scene directory holding the ground truth")->check(CLI::ExistingDirectory);
    eval->add_option("--out", e_out, "Report file (text; a .json twin is written next to it)");
    eval->add_option("--run", run_name, "Run directory name under the output directory");

    auto* ablate = app.add_subcommand("ablate", "Task-toggle and crop-size ablation grid");
    std::string grid = "all";
    std::vector<std::string> row_names;
    std::vector<std::uint64_t> seeds = {0};
    ablate->add_option("--grid", grid, "tasks, sizes or all")->check(CLI::IsMember({"tasks", "sizes", "all"}));
    ablate->add_option("--rows", row_names, "Subset of row names")->delimiter(',');
    ablate->add_option("--seeds", seeds, "Base seeds, comma separated")->delimiter(',');

    auto* run = app.add_subcommand("run", "Every enabled stage in order");
    auto* show = app.add_subcommand("config", "Print the resolved configuration");
    auto* check = app.add_subcommand("check", "Verify the provenance hashes of every stage output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        pl::PipelineConfig config = resolve(o);
        if (!t_ckpt.empty()) {
            config.transition.checkpoint = fs::absolute(t_ckpt).string();
        }
        if (!t_scenes.empty()) {
            config.transition.scenes = fs::absolute(t_scenes).string();
        }
        if (t_sizes > 0) {
            config.transition.n_sizes = t_sizes;
        }
        if (!backbone.empty()) {
            config.detect.backbone = backbone;
        }
        if (!run_name.empty()) {
            config.detect.run_name = run_name;
        }
        config.validate();
        std::ostream* log = o.quiet ? nullptr : &std::cerr;

        if (*synth) {
            print_record(pl::cmd_synth(config, log));
        } else if (*curate) {
            print_record(pl::cmd_curate(config, log));
        } else if (*pretrain) {
            print_record(pl::cmd_pretrain(config, log));
        } else if (*transition) {
            print_record(pl::cmd_transition(config, log));
        } else if (*train_det) {
            print_record(pl::cmd_train_det(config, log));
        } else if (*predict) {
            const auto dets = pl::predict_directory(p_ckpt, p_images);
            vlptl::save_detections(p_out, dets);
            std::size_t n = 0;
            for (const auto& [image, list] : dets) {
                n += list.size();
            }
            std::cout << "predict: " << n << " detections over " << dets.size() << " images -> " << p_out << '\n';
        } else if (*eval) {
            if (e_dets.empty()) {
                print_record(pl::cmd_eval(config, log));
                const pl::Layout layout(config);
                std::ifstream in(layout.detect_dir(config.detect.run_name) / "report.txt");
                std::cout << in.rdbuf();
            } else {
                if (e_gts.empty()) {
                    throw vlptl::ConfigError("eval --dets needs --gts");
                }
                const auto report = pl::evaluate_files(e_dets, e_gts, pl::load_taxonomy(config));
                if (!e_out.empty()) {
                    vlptl::metrics::write_report(e_out, report);
                    std::ofstream(fs::path(e_out).replace_extension(".json")) << report.to_json().dump(2) << '\n';
                }
                std::cout << vlptl::metrics::format_report(report);
            }
        } else if (*ablate) {
            const auto table = pl::cmd_ablate(config, select_rows(grid, row_names), seeds, log);
            std::cout << table.to_text();
        } else if (*run) {
            std::cout << vlptl::metrics::format_report(pl::run_pipeline(config, log));
        } else if (*show) {
            std::cout << config.to_json().dump(2) << '\n';
        } else if (*check) {
            const auto problems = pl::check_provenance(config);
            for (const auto& p : problems) {
                std::cout << p << '\n';
            }
            std::cout << (problems.empty() ? "provenance ok\n" : "provenance mismatch\n");
            return problems.empty() ? 0 : 1;
        }
        return 0;
    } catch (const vlptl::StageDependencyError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const vlptl::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const vlptl::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const vlptl::FormatError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const vlptl::TaxonomyError& e) {
        std::cerr << "taxonomy error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
