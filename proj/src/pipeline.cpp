#include "vlptl/pipeline.hpp"

#include "vlptl/checkpoint.hpp"
#include "vlptl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace vlptl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(std::ostream* log, const std::string& line) {
    if (log != nullptr) {
        *log << line << '\n' << std::flush;
    }
}

std::string fixed(double v, int digits = 4) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

// Recursively rejects object keys that the defaults do not know.
void check_known_keys(const json& given, const json& known, const std::string& prefix) {
    if (!given.is_object() || !known.is_object()) {
        return;
    }
    for (const auto& [key, value] : given.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!known.contains(key)) {
            throw ConfigError("unknown configuration key: " + path);
        }
        check_known_keys(value, known.at(key), path);
    }
}

std::string stage_hash(const std::string& stage, const json& config, const json& inputs) {
    return stable_hash(json{{"stage", stage}, {"config", config}, {"inputs", inputs}}.dump());
}

void write_stage(const fs::path& dir, const StageRecord& record) { write_json_file(dir / kStageFile, record.to_json()); }

fs::path resolve_root(const std::string& dir) {
    const fs::path p(dir);
    const char* env = std::getenv("VLPTL_OUTPUT_ROOT");
    if (p.is_absolute() || env == nullptr || *env == '\0') {
        return p;
    }
    return fs::path(env) / p;
}

std::vector<DetectionScene> load_scenes(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw StageDependencyError("scene directory missing: " + dir.string() + " (run synth first)");
    }
    std::vector<DetectionScene> scenes;
    for (const auto& r : load_scene_records(dir)) {
        scenes.push_back(load_scene(dir, r));
    }
    return scenes;
}

void write_labels(const fs::path& path, const std::vector<LabeledImage>& images) {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    for (const auto& i : images) {
        out << i.image_ref << '\t' << i.category << '\n';
    }
}

std::vector<LabeledImage> read_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw StageDependencyError("missing " + path.string() + " (run synth first)");
    }
    std::vector<LabeledImage> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw FormatError("malformed label line in " + path.string() + ": " + line);
        }
        out.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return out;
}

std::vector<LabeledImage> render_instances(const Taxonomy& tax, int per_category, int size, synth::Rng& rng,
                                           const fs::path& root, const std::string& subdir) {
    fs::create_directories(root / subdir);
    std::vector<LabeledImage> out;
    std::size_t index = 0;
    for (int rep = 0; rep < per_category; ++rep) {
        for (const auto& c : tax.categories()) {
            char name[32];
            std::snprintf(name, sizeof name, "img_%06zu.png", index++);
            const std::string ref = subdir + "/" + name;
            write_png(root / ref, synth::render_instance(tax, c.name, size, size, rng));
            out.push_back({ref, c.name});
        }
    }
    return out;
}

std::vector<int> category_labels(const Taxonomy& tax, const std::vector<std::string>& categories) {
    std::vector<int> out;
    out.reserve(categories.size());
    for (const auto& c : categories) {
        out.push_back(tax.category_index(c));
    }
    return out;
}

Tokenizer pool_tokenizer(const AltTextPool& pool) {
    const auto corpus = pool.corpus();
    return Tokenizer::build(corpus);
}

EncoderConfig sized_encoder(const PipelineConfig& config, const Tokenizer& tok) {
    EncoderConfig c = config.encoder;
    c.vocab_size = tok.vocab_size();
    return c;
}

json stage_inputs(const std::vector<std::pair<std::string, fs::path>>& dirs) {
    json inputs = json::object();
    for (const auto& [name, dir] : dirs) {
        inputs[name] = read_stage(dir, name).hash;
    }
    return inputs;
}

double sample_sd(const std::vector<double>& v, double mean) {
    if (v.size() < 2) {
        return 0.0;
    }
    double s = 0;
    for (double x : v) {
        s += (x - mean) * (x - mean);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

// ---- configuration -----------------------------------------------------------

PipelineConfig PipelineConfig::desk() {
    PipelineConfig c;
    c.encoder.image_size = 64;
    c.encoder.patch_size = 16;
    c.pretrain.epochs = 10;
    c.pretrain.batch_size = 32;
    c.pretrain.lr = 1e-3;
    c.detect.detector.input_h = c.detect.detector.input_w = 256;
    c.detect.detector.epochs = 20;
    c.detect.detector.batch_size = 4;
    c.detect.detector.backbone_lr = 1e-4;
    c.detect.detector.decoder_lr = 3e-3;
    c.detect.detector.weight_decay = 1e-4;
    c.detect.detector.score_threshold = 0.05;
    return c;
}

PipelineConfig PipelineConfig::smoke() {
    PipelineConfig c = desk();
    c.output_dir = "runs/smoke";
    c.data = {4, 2, 32, 6, 2, 64, 1, 2};
    c.encoder.image_size = 32;
    c.encoder.embed_dim = 16;
    c.encoder.depth = 1;
    c.encoder.heads = 2;
    c.encoder.text_depth = 1;
    c.pretrain.epochs = 1;
    c.pretrain.batch_size = 8;
    c.transition.epochs = 1;
    c.detect.detector.input_h = c.detect.detector.input_w = 64;
    c.detect.detector.multiscale_train_sizes = {{64, 64}};
    c.detect.detector.epochs = 1;
    c.detect.detector.batch_size = 2;
    return c;
}

void PipelineConfig::set_seed(std::uint64_t base) {
    const StageSeeds offsets;
    seeds.synth = base * 1000 + offsets.synth;
    seeds.curate = base * 1000 + offsets.curate;
    seeds.pretrain = base * 1000 + offsets.pretrain;
    seeds.transition = base * 1000 + offsets.transition;
    seeds.detect = base * 1000 + offsets.detect;
}

void PipelineConfig::validate() const {
    if (output_dir.empty()) {
        throw ConfigError("output_dir must be set");
    }
    if (data.instances_per_category < 1 || data.heldout_per_category < 1 || data.train_scenes < 1 || data.test_scenes < 1) {
        throw ConfigError("data counts must be positive");
    }
    if (data.min_objects < 0 || data.max_objects < data.min_objects) {
        throw ConfigError("object counts must satisfy 0 <= min_objects <= max_objects");
    }
    EncoderConfig e = encoder;
    e.vocab_size = std::max(e.vocab_size, 2);
    e.validate();
    if (pretrain.epochs < 0 || pretrain.batch_size < 2 || !(pretrain.lr >= 0)) {
        throw ConfigError("pretrain needs epochs >= 0, batch_size >= 2 and lr >= 0");
    }
    if (transition.epochs < 0) {
        throw ConfigError("transition epochs must be nonnegative");
    }
    pts::CropSpec spec;
    spec.n_sizes = transition.n_sizes;
    spec.validate();
    detect.detector.validate(encoder.patch_size);
    static const std::vector<std::string> backbones = {"auto", "pretrain", "transition", "random"};
    if (std::find(backbones.begin(), backbones.end(), detect.backbone) == backbones.end()) {
        throw ConfigError("detect.backbone must be auto, pretrain, transition or random");
    }
    if (detect.run_name.empty() || detect.run_name.find('/') != std::string::npos) {
        throw ConfigError("detect.run_name must be a plain directory name");
    }
}

json PipelineConfig::to_json() const {
    return {{"output_dir", output_dir},
            {"data_dir", data_dir},
            {"taxonomy", taxonomy},
            {"templates", templates},
            {"seeds",
             {{"synth", seeds.synth},
              {"curate", seeds.curate},
              {"pretrain", seeds.pretrain},
              {"transition", seeds.transition},
              {"detect", seeds.detect}}},
            {"data",
             {{"instances_per_category", data.instances_per_category},
              {"heldout_per_category", data.heldout_per_category},
              {"instance_size", data.instance_size},
              {"train_scenes", data.train_scenes},
              {"test_scenes", data.test_scenes},
              {"scene_size", data.scene_size},
              {"min_objects", data.min_objects},
              {"max_objects", data.max_objects}}},
            {"encoder", encoder.to_json()},
            {"pretrain", [&] {
                 json p = pretrain.to_json();
                 p["enabled"] = pretrain_enabled;
                 return p;
             }()},
            {"transition",
             {{"enabled", transition.enabled},
              {"epochs", transition.epochs},
              {"n_sizes", transition.n_sizes},
              {"checkpoint", transition.checkpoint},
              {"scenes", transition.scenes}}},
            {"detect", [&] {
                 json d = detect.detector.to_json();
                 d["backbone"] = detect.backbone;
                 d["run_name"] = detect.run_name;
                 return d;
             }()}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c = desk();
    check_known_keys(j, c.to_json(), "");
    try {
        c.output_dir = j.value("output_dir", c.output_dir);
        c.data_dir = j.value("data_dir", c.data_dir);
        c.taxonomy = j.value("taxonomy", c.taxonomy);
        c.templates = j.value("templates", c.templates);
        if (j.contains("seeds")) {
            const json& s = j.at("seeds");
            c.seeds.synth = s.value("synth", c.seeds.synth);
            c.seeds.curate = s.value("curate", c.seeds.curate);
            c.seeds.pretrain = s.value("pretrain", c.seeds.pretrain);
            c.seeds.transition = s.value("transition", c.seeds.transition);
            c.seeds.detect = s.value("detect", c.seeds.detect);
        }
        if (j.contains("data")) {
            const json& d = j.at("data");
            c.data.instances_per_category = d.value("instances_per_category", c.data.instances_per_category);
            c.data.heldout_per_category = d.value("heldout_per_category", c.data.heldout_per_category);
            c.data.instance_size = d.value("instance_size", c.data.instance_size);
            c.data.train_scenes = d.value("train_scenes", c.data.train_scenes);
            c.data.test_scenes = d.value("test_scenes", c.data.test_scenes);
            c.data.scene_size = d.value("scene_size", c.data.scene_size);
            c.data.min_objects = d.value("min_objects", c.data.min_objects);
            c.data.max_objects = d.value("max_objects", c.data.max_objects);
        }
        if (j.contains("encoder")) {
            json merged = c.encoder.to_json();
            merged.update(j.at("encoder"));
            c.encoder = EncoderConfig::from_json(merged);
        }
        if (j.contains("pretrain")) {
            json merged = c.pretrain.to_json();
            merged.update(j.at("pretrain"));
            c.pretrain = pretrain::PretrainConfig::from_json(merged);
            c.pretrain_enabled = j.at("pretrain").value("enabled", c.pretrain_enabled);
        }
        if (j.contains("transition")) {
            const json& t = j.at("transition");
            c.transition.enabled = t.value("enabled", c.transition.enabled);
            c.transition.epochs = t.value("epochs", c.transition.epochs);
            c.transition.n_sizes = t.value("n_sizes", c.transition.n_sizes);
            c.transition.checkpoint = t.value("checkpoint", c.transition.checkpoint);
            c.transition.scenes = t.value("scenes", c.transition.scenes);
        }
        if (j.contains("detect")) {
            json merged = c.detect.detector.to_json();
            merged.update(j.at("detect"));
            c.detect.detector = detect::DetectorConfig::from_json(merged);
            c.detect.backbone = j.at("detect").value("backbone", c.detect.backbone);
            c.detect.run_name = j.at("detect").value("run_name", c.detect.run_name);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) { return from_json(read_json_file(path)); }

void PipelineConfig::save(const fs::path& path) const { write_json_file(path, to_json()); }

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key=value: " + assignment);
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) {
            throw ConfigError("unknown configuration key: " + key);
        }
        node = &(*node)[part];
        if (dot == std::string::npos) {
            break;
        }
        start = dot + 1;
    }
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    if (node->is_string() && !value.is_string()) {
        value = text;
    }
    *node = std::move(value);
}

PipelineConfig with_overrides(const PipelineConfig& base, const std::vector<std::string>& assignments) {
    json j = base.to_json();
    for (const auto& a : assignments) {
        apply_override(j, a);
    }
    return PipelineConfig::from_json(j);
}

fs::path output_root(const PipelineConfig& config) { return resolve_root(config.output_dir); }

Layout::Layout(const PipelineConfig& config)
    : root(output_root(config)), data(config.data_dir.empty() ? root : resolve_root(config.data_dir)) {}

// ---- stage records -----------------------------------------------------------

json StageRecord::to_json() const { return {{"stage", stage}, {"hash", hash}, {"inputs", inputs}, {"summary", summary}}; }

StageRecord StageRecord::from_json(const json& j) {
    return {j.at("stage").get<std::string>(), j.at("hash").get<std::string>(), j.value("inputs", json::object()),
            j.value("summary", json::object())};
}

StageRecord read_stage(const fs::path& dir, const std::string& stage) {
    const fs::path path = dir / kStageFile;
    if (!fs::exists(path)) {
        throw StageDependencyError("stage '" + stage + "' has no output in " + dir.string() + "; run it first");
    }
    StageRecord r;
    try {
        r = StageRecord::from_json(read_json_file(path));
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (r.stage != stage) {
        throw StageDependencyError(path.string() + " belongs to stage '" + r.stage + "', expected '" + stage + "'");
    }
    return r;
}

std::vector<std::string> check_provenance(const PipelineConfig& config) {
    const Layout layout(config);
    std::map<std::string, fs::path> dirs = {{"synth", layout.synth_dir()},
                                            {"curate", layout.curate_dir()},
                                            {"pretrain", layout.pretrain_dir()},
                                            {"transition", layout.transition_dir()},
                                            {"detect", layout.detect_dir(config.detect.run_name)}};
    std::vector<std::string> problems;
    for (const auto& [stage, dir] : dirs) {
        if (!fs::exists(dir / kStageFile)) {
            continue;
        }
        const StageRecord r = read_stage(dir, stage);
        for (const auto& [input, hash] : r.inputs.items()) {
            const auto it = dirs.find(input);
            if (it == dirs.end() || !fs::exists(it->second / kStageFile)) {
                problems.push_back(stage + ": input " + input + " missing");
                continue;
            }
            const std::string now = read_stage(it->second, input).hash;
            if (now != hash.get<std::string>()) {
                problems.push_back(stage + ": input " + input + " expected " + hash.get<std::string>() + " found " + now);
            }
        }
    }
    return problems;
}

Taxonomy load_taxonomy(const PipelineConfig& config) {
    if (config.taxonomy.empty()) {
        return Taxonomy::desk_default();
    }
    return Taxonomy::from_json(read_json_file(config.taxonomy));
}

AltTextPool load_pool(const PipelineConfig& config, const Taxonomy& taxonomy) {
    if (config.templates.empty()) {
        return build_alt_text_pool(taxonomy, default_templates());
    }
    const json j = read_json_file(config.templates);
    try {
        if (j.is_array()) {
            return build_alt_text_pool(taxonomy, j.get<std::vector<std::string>>());
        }
        const auto templates = j.value("templates", std::vector<std::string>{});
        const auto refined = j.value("refined", std::map<std::string, std::vector<std::string>>{});
        return build_alt_text_pool(taxonomy, templates, refined);
    } catch (const json::exception& e) {
        throw ConfigError(config.templates + ": " + e.what());
    }
}

// ---- stages ------------------------------------------------------------------

StageRecord cmd_synth(const PipelineConfig& config, std::ostream* log) {
    config.validate();
    const Layout layout(config);
    const Taxonomy tax = load_taxonomy(config);
    const json cfg = {{"taxonomy", tax.to_json()}, {"data", config.to_json().at("data")}, {"seed", config.seeds.synth}};
    StageRecord rec{"synth", stage_hash("synth", cfg, json::object()), json::object(), json::object()};

    fs::remove_all(layout.synth_dir());
    fs::create_directories(layout.synth_dir());
    synth::Rng rng(config.seeds.synth);
    const auto& d = config.data;
    say(log, "synth: rendering " + std::to_string(d.instances_per_category * static_cast<int>(tax.categories().size())) +
                 " instance images");
    write_labels(layout.instance_labels(),
                 render_instances(tax, d.instances_per_category, d.instance_size, rng, layout.synth_dir(), "instances"));
    write_labels(layout.heldout_labels(),
                 render_instances(tax, d.heldout_per_category, d.instance_size, rng, layout.synth_dir(), "heldout"));

    synth::SceneSpec spec;
    const double scale = d.scene_size / 256.0;
    spec.height = spec.width = d.scene_size;
    spec.min_objects = d.min_objects;
    spec.max_objects = d.max_objects;
    spec.min_object_size = std::max(12, static_cast<int>(std::lround(spec.min_object_size * scale)));
    spec.max_object_size = std::max(spec.min_object_size, static_cast<int>(std::lround(spec.max_object_size * scale)));
    spec.validate();
    std::vector<DetectionScene> train;
    std::vector<DetectionScene> test;
    for (int i = 0; i < d.train_scenes + d.test_scenes; ++i) {
        (i < d.train_scenes ? train : test).push_back(synth::generate_scene(tax, spec, rng));
    }
    say(log, "synth: " + std::to_string(train.size()) + " train and " + std::to_string(test.size()) + " test scenes");
    save_scene_dir(layout.train_scenes(), train);
    save_scene_dir(layout.test_scenes(), test);

    rec.summary = {{"instances", d.instances_per_category * static_cast<int>(tax.categories().size())},
                   {"heldout", d.heldout_per_category * static_cast<int>(tax.categories().size())},
                   {"train_scenes", train.size()},
                   {"test_scenes", test.size()}};
    write_stage(layout.synth_dir(), rec);
    return rec;
}

StageRecord cmd_curate(const PipelineConfig& config, std::ostream* log) {
    config.validate();
    const Layout layout(config);
    const json inputs = stage_inputs({{"synth", layout.synth_dir()}});
    const Taxonomy tax = load_taxonomy(config);
    const AltTextPool pool = load_pool(config, tax);
    const json cfg = {{"pool", pool.entries}, {"seed", config.seeds.curate}};
    StageRecord rec{"curate", stage_hash("curate", cfg, inputs), inputs, json::object()};

    fs::remove_all(layout.curate_dir());
    fs::create_directories(layout.curate_dir());
    write_json_file(layout.pool(), json(pool.entries));
    const fs::path rel = layout.synth_dir().lexically_relative(layout.curate_dir());
    auto relabel = [&](std::vector<LabeledImage> images) {
        for (auto& i : images) {
            i.image_ref = (rel / i.image_ref).generic_string();
        }
        return images;
    };
    std::mt19937_64 rng(config.seeds.curate);
    Manifest train;
    train.taxonomy = tax;
    train.samples = assign_alt_texts(relabel(read_labels(layout.instance_labels())), pool, rng);
    save_manifest(train, layout.manifest());
    Manifest heldout;
    heldout.taxonomy = tax;
    heldout.samples = assign_alt_texts(relabel(read_labels(layout.heldout_labels())), pool, rng);
    save_manifest(heldout, layout.heldout_manifest());
    say(log, "curate: " + std::to_string(train.samples.size()) + " image-text pairs, " +
                 std::to_string(pool.corpus().size()) + " distinct alt-texts");

    rec.summary = {{"pairs", train.samples.size()}, {"heldout_pairs", heldout.samples.size()}, {"alt_texts", pool.corpus().size()}};
    write_stage(layout.curate_dir(), rec);
    return rec;
}

StageRecord cmd_pretrain(const PipelineConfig& config, std::ostream* log) {
    config.validate();
    const Layout layout(config);
    const json inputs = stage_inputs({{"curate", layout.curate_dir()}});
    const Taxonomy tax = load_taxonomy(config);
    const AltTextPool pool = load_pool(config, tax);
    pretrain::PretrainConfig pc = config.pretrain;
    pc.seed = config.seeds.pretrain;
    const json cfg = {{"encoder", config.encoder.to_json()}, {"pretrain", pc.to_json()}};
    StageRecord rec{"pretrain", stage_hash("pretrain", cfg, inputs), inputs, json::object()};

    const Manifest manifest = load_manifest(layout.manifest());
    const Manifest held = load_manifest(layout.heldout_manifest());
    const int size = config.encoder.image_size;
    const pretrain::PairDataset data = pretrain::load_pair_dataset(manifest, layout.manifest(), size);
    const pretrain::PairDataset heldout = pretrain::load_pair_dataset(held, layout.heldout_manifest(), size);

    const Tokenizer tok = pool_tokenizer(pool);
    const EncoderConfig enc = sized_encoder(config, tok);
    fs::remove_all(layout.pretrain_dir());
    fs::create_directories(layout.pretrain_dir());
    pretrain::PretrainSession session(pretrain::VisionLanguageModel(enc, tok, config.seeds.pretrain), tax, pc);
    std::ofstream train_log(layout.pretrain_dir() / "log.jsonl");
    say(log, "pretrain: " + std::to_string(pc.epochs) + " epochs over " + std::to_string(data.size()) + " pairs");
    const auto history = session.train(data, &train_log);
    for (const auto& e : history) {
        say(log, "pretrain: epoch " + std::to_string(e.epoch) + " loss " + fixed(e.mean.total) + " (itc " + fixed(e.mean.itc) +
                     ", srj " + fixed(e.mean.srj) + ", dnc " + fixed(e.mean.dnc) + ")");
    }

    // Held-out signal: retrieval over held-out pairs and a linear probe on
    // pooled backbone features, against the same architecture at its initial weights.
    const pretrain::VisionLanguageModel initial(enc, tok, config.seeds.pretrain);
    const auto train_labels = category_labels(tax, data.categories);
    const auto held_labels = category_labels(tax, heldout.categories);
    const int classes = static_cast<int>(tax.categories().size());
    auto probe = [&](const ImageEncoder& e) {
        return pretrain::linear_probe_accuracy(pretrain::pooled_features(e, data.images), train_labels,
                                               pretrain::pooled_features(e, heldout.images), held_labels, classes);
    };
    const double retrieval = pretrain::retrieval_top1(session.model().encoder(), heldout);
    const double retrieval_random = pretrain::retrieval_top1(initial.encoder(), heldout);
    const double probe_pretrained = probe(session.model().encoder().image());
    const double probe_random = probe(initial.encoder().image());
    say(log, "pretrain: held-out retrieval top-1 " + fixed(retrieval) + " (chance " + fixed(1.0 / classes) + "), probe " +
                 fixed(probe_pretrained) + " vs random-init " + fixed(probe_random));

    rec.summary = {{"epochs", history.size()},
                   {"first_loss", history.empty() ? 0.0 : history.front().mean.total},
                   {"last_loss", history.empty() ? 0.0 : history.back().mean.total},
                   {"retrieval_top1", retrieval},
                   {"retrieval_top1_random_init", retrieval_random},
                   {"retrieval_chance", 1.0 / classes},
                   {"probe_accuracy", probe_pretrained},
                   {"probe_accuracy_random_init", probe_random}};
    session.save(layout.pretrain_checkpoint(), {{"stage_hash", rec.hash}});
    write_json_file(layout.pretrain_dir() / "metrics.json", rec.summary);
    write_stage(layout.pretrain_dir(), rec);
    return rec;
}

StageRecord cmd_transition(const PipelineConfig& config, std::ostream* log) {
    config.validate();
    const Layout layout(config);
    const fs::path ckpt = config.transition.checkpoint.empty() ? layout.pretrain_checkpoint() : fs::path(config.transition.checkpoint);
    if (!fs::exists(ckpt)) {
        throw StageDependencyError("transition needs a pretraining checkpoint; missing " + ckpt.string());
    }
    json inputs = stage_inputs({{"curate", layout.curate_dir()}});
    if (config.transition.checkpoint.empty()) {
        inputs["pretrain"] = read_stage(layout.pretrain_dir(), "pretrain").hash;
    } else {
        inputs["checkpoint"] = stable_hash(pretrain::PretrainSession::read_header(ckpt).dump());
    }
    const fs::path scene_dir = config.transition.scenes.empty() ? layout.train_scenes() : fs::path(config.transition.scenes);
    const json cfg = {{"epochs", config.transition.epochs},
                      {"n_sizes", config.transition.n_sizes},
                      {"scenes", scene_dir.generic_string()},
                      {"seed", config.seeds.transition}};
    StageRecord rec{"transition", stage_hash("transition", cfg, inputs), inputs, json::object()};

    const Taxonomy tax = load_taxonomy(config);
    const AltTextPool pool = load_pool(config, tax);
    pretrain::PretrainSession session = pretrain::PretrainSession::load(ckpt);
    const auto scenes = load_scenes(scene_dir);
    const Manifest base = load_manifest(layout.manifest());

    fs::remove_all(layout.transition_dir());
    fs::create_directories(layout.transition_dir());
    pts::CropSpec spec;
    spec.n_sizes = config.transition.n_sizes;
    pts::Rng rng(config.seeds.transition);
    const pts::TransitionSet set =
        pts::build_transition_set(scenes, base, layout.curate_dir(), pool, spec, rng, layout.transition_dir());
    for (const auto& w : set.warnings) {
        say(log, "transition: warning: " + w);
    }
    save_manifest(set.manifest, layout.transition_manifest());
    const pretrain::PairDataset data = pretrain::load_pair_dataset(set.manifest, layout.transition_manifest(),
                                                                   session.model().encoder().config().image_size);
    say(log, "transition: " + std::to_string(set.added) + " context crops added to " + std::to_string(base.samples.size()) +
                 " pairs; " + std::to_string(config.transition.epochs) + " epochs");
    std::ofstream train_log(layout.transition_dir() / "log.jsonl");
    const auto history = pts::run_transition(session, data, config.transition.epochs, &train_log);
    for (const auto& e : history) {
        say(log, "transition: epoch " + std::to_string(e.epoch) + " loss " + fixed(e.mean.total));
    }
    rec.summary = {{"crops_added", set.added},
                   {"pairs", data.size()},
                   {"epochs", history.size()},
                   {"first_loss", history.empty() ? 0.0 : history.front().mean.total},
                   {"last_loss", history.empty() ? 0.0 : history.back().mean.total},
                   {"warnings", set.warnings.size()}};
    session.save(layout.transition_checkpoint(), {{"stage_hash", rec.hash}});
    write_stage(layout.transition_dir(), rec);
    return rec;
}

StageRecord cmd_train_det(const PipelineConfig& config, std::ostream* log) {
    config.validate();
    const Layout layout(config);
    std::string source = config.detect.backbone;
    if (source == "auto") {
        source = config.transition.enabled ? "transition" : (config.pretrain_enabled ? "pretrain" : "random");
    }
    json inputs = stage_inputs({{"synth", layout.synth_dir()}});
    const Taxonomy tax = load_taxonomy(config);
    ImageEncoder backbone;
    if (source == "random") {
        const Tokenizer tok = pool_tokenizer(load_pool(config, tax));
        const pretrain::VisionLanguageModel initial(sized_encoder(config, tok), tok, config.seeds.pretrain);
        backbone = detect::clone_encoder(initial.encoder().image());
    } else {
        const fs::path dir = source == "transition" ? layout.transition_dir() : layout.pretrain_dir();
        const fs::path ckpt = source == "transition" ? layout.transition_checkpoint() : layout.pretrain_checkpoint();
        if (!fs::exists(ckpt)) {
            throw StageDependencyError("train-det with a " + source + " backbone needs " + ckpt.string());
        }
        inputs[source] = read_stage(dir, source).hash;
        const pretrain::PretrainSession session = pretrain::PretrainSession::load(ckpt);
        backbone = detect::clone_encoder(session.model().encoder().image());
    }
    detect::DetectorConfig dc = config.detect.detector;
    dc.seed = config.seeds.detect;
    json cfg = {{"detector", dc.to_json()}, {"backbone", source}};
    if (source == "random") {
        cfg["encoder"] = config.encoder.to_json();
        cfg["init_seed"] = config.seeds.pretrain;
    }
    StageRecord rec{"detect", stage_hash("detect", cfg, inputs), inputs, json::object()};

    const auto scenes = load_scenes(layout.train_scenes());
    const fs::path dir = layout.detect_dir(config.detect.run_name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    detect::Detector det(std::move(backbone), tax.defect_categories(), dc, config.seeds.detect);
    say(log, "train-det: " + source + " backbone, " + std::to_string(dc.epochs) + " epochs over " +
                 std::to_string(scenes.size()) + " scenes");
    std::ofstream train_log(dir / "log.jsonl");
    const auto history = detect::train_detector(det, scenes, &train_log);
    for (const auto& e : history) {
        say(log, "train-det: epoch " + std::to_string(e.epoch) + " loss " + fixed(e.mean.total) + " (cls " +
                     fixed(e.mean.classification) + ", box " + fixed(e.mean.box) + ")");
    }
    rec.summary = {{"backbone", source},
                   {"epochs", history.size()},
                   {"first_loss", history.empty() ? 0.0 : history.front().mean.total},
                   {"last_loss", history.empty() ? 0.0 : history.back().mean.total}};
    det.save(dir / "detector.ckpt", {{"stage_hash", rec.hash}});
    write_stage(dir, rec);
    return rec;
}

StageRecord cmd_eval(const PipelineConfig& config, std::ostream* log) {
    config.validate();
    const Layout layout(config);
    const fs::path dir = layout.detect_dir(config.detect.run_name);
    const StageRecord trained = read_stage(dir, "detect");
    const Taxonomy tax = load_taxonomy(config);
    const DetectionsByImage dets = predict_directory(dir / "detector.ckpt", layout.test_scenes());
    save_detections(dir / "detections.jsonl", dets);
    const metrics::APReport report = metrics::evaluate(dets, load_ground_truth(layout.test_scenes()), tax);
    metrics::write_report(dir / "report.txt", report);
    write_json_file(dir / "report.json", report.to_json());
    say(log, "eval: mAP50 " + fixed(report.map50) + " mAP75 " + fixed(report.map75) + " mAP50:95 " + fixed(report.map50_95));

    // The evaluation result is folded into the detect record.
    StageRecord rec = trained;
    rec.summary["map50"] = report.map50;
    rec.summary["map75"] = report.map75;
    rec.summary["map50_95"] = report.map50_95;
    write_stage(dir, rec);
    return rec;
}

DetectionsByImage predict_directory(const fs::path& detector_checkpoint, const fs::path& image_dir) {
    if (!fs::exists(detector_checkpoint)) {
        throw StageDependencyError("no detector checkpoint at " + detector_checkpoint.string() + " (run train-det first)");
    }
    if (!fs::is_directory(image_dir)) {
        throw ConfigError("image directory missing: " + image_dir.string());
    }
    const detect::Detector det = detect::Detector::load(detector_checkpoint);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(image_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    DetectionsByImage out;
    for (const auto& f : files) {
        out[f.filename().string()] = det.predict(read_png(f));
    }
    return out;
}

metrics::APReport evaluate_files(const fs::path& detections_file, const fs::path& scene_dir, const Taxonomy& taxonomy) {
    return metrics::evaluate(load_detections(detections_file), load_ground_truth(scene_dir), taxonomy);
}

metrics::APReport run_pipeline(const PipelineConfig& config, std::ostream* log) {
    config.validate();
    if (!config.pretrain_enabled && config.transition.enabled && config.transition.checkpoint.empty()) {
        throw StageDependencyError("transition is enabled but pretraining is skipped and no checkpoint is given");
    }
    cmd_synth(config, log);
    cmd_curate(config, log);
    if (config.pretrain_enabled) {
        cmd_pretrain(config, log);
    }
    if (config.transition.enabled) {
        cmd_transition(config, log);
    }
    cmd_train_det(config, log);
    cmd_eval(config, log);
    const Layout layout(config);
    return metrics::evaluate(load_detections(layout.detect_dir(config.detect.run_name) / "detections.jsonl"),
                             load_ground_truth(layout.test_scenes()), load_taxonomy(config));
}

// ---- ablations -----------------------------------------------------------------

std::vector<AblationRow> task_toggle_rows() {
    // Pretraining alone, in the order none, single tasks, pairs, all three.
    // The row with every task off skips pretraining and starts the detector
    // from the initial weights.
    const bool masks[8][3] = {{false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
                              {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true}};
    std::vector<AblationRow> rows;
    for (const auto& m : masks) {
        AblationRow r;
        r.itc = m[0];
        r.srj = m[1];
        r.dnc = m[2];
        r.pts = false;
        for (const auto& [on, name] : {std::pair{r.itc, "itc"}, std::pair{r.srj, "srj"}, std::pair{r.dnc, "dnc"}}) {
            if (on) {
                r.name += (r.name.empty() ? "" : "_") + std::string(name);
            }
        }
        if (r.name.empty()) {
            r.name = "no_pretrain";
        }
        rows.push_back(r);
    }
    return rows;
}

std::vector<AblationRow> crop_size_rows() {
    std::vector<AblationRow> rows;
    for (int n = 1; n <= 5; ++n) {
        AblationRow r;
        r.n_sizes = n;
        r.name = "sizes" + std::to_string(n);
        rows.push_back(r);
    }
    return rows;
}

std::string AblationTable::to_text() const {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-18s %3s %3s %3s %3s %5s  %-17s %-17s %-17s %s\n", "row", "ITC", "SRJ", "DNC", "PTS",
                  "sizes", "mAP50", "mAP75", "mAP50:95", "runs");
    out << line;
    auto cell = [](double mean, double sd) { return fixed(100 * mean, 1) + " +- " + fixed(100 * sd, 1); };
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-18s %3s %3s %3s %3s %5d  %-17s %-17s %-17s %d/%zu\n", r.row.name.c_str(),
                      r.row.itc ? "x" : "-", r.row.srj ? "x" : "-", r.row.dnc ? "x" : "-", r.row.pts ? "x" : "-",
                      r.row.n_sizes, cell(r.mean_map50, r.spread_map50).c_str(), cell(r.mean_map75, r.spread_map75).c_str(),
                      cell(r.mean_map50_95, r.spread_map50_95).c_str(), r.succeeded, r.cells.size());
        out << line;
        for (const auto& c : r.cells) {
            if (!c.error.empty()) {
                out << "  seed " << c.seed << " failed: " << c.error << '\n';
            }
        }
    }
    return out.str();
}

json AblationTable::to_json() const {
    json out = json::array();
    for (const auto& r : rows) {
        json cells = json::array();
        for (const auto& c : r.cells) {
            json jc = {{"seed", c.seed}};
            if (c.report) {
                jc["report"] = c.report->to_json();
            } else {
                jc["error"] = c.error;
            }
            cells.push_back(jc);
        }
        out.push_back({{"row", r.row.name},
                       {"itc", r.row.itc},
                       {"srj", r.row.srj},
                       {"dnc", r.row.dnc},
                       {"pts", r.row.pts},
                       {"n_sizes", r.row.n_sizes},
                       {"mean", {{"mAP50", r.mean_map50}, {"mAP75", r.mean_map75}, {"mAP50_95", r.mean_map50_95}}},
                       {"spread", {{"mAP50", r.spread_map50}, {"mAP75", r.spread_map75}, {"mAP50_95", r.spread_map50_95}}},
                       {"succeeded", r.succeeded},
                       {"cells", cells}});
    }
    return out;
}

AblationTable cmd_ablate(const PipelineConfig& base, const std::vector<AblationRow>& rows,
                         const std::vector<std::uint64_t>& seeds, std::ostream* log) {
    base.validate();
    const fs::path root = fs::absolute(output_root(base)) / "ablate";
    AblationTable table;
    for (const auto& row : rows) {
        table.rows.push_back({row, {}, 0, 0, 0, 0, 0, 0, 0});
    }
    for (const auto seed : seeds) {
        PipelineConfig data_cfg = base;
        data_cfg.set_seed(seed);
        data_cfg.output_dir = (root / ("data_seed" + std::to_string(seed))).string();
        data_cfg.data_dir.clear();
        std::string data_error;
        try {
            cmd_synth(data_cfg, log);
            cmd_curate(data_cfg, log);
        } catch (const std::exception& e) {
            data_error = std::string("data generation: ") + e.what();
        }
        for (auto& result : table.rows) {
            AblationCell cell;
            cell.seed = seed;
            if (!data_error.empty()) {
                cell.error = data_error;
                result.cells.push_back(cell);
                continue;
            }
            PipelineConfig c = data_cfg;
            c.output_dir = (root / result.row.name / ("seed" + std::to_string(seed))).string();
            c.data_dir = data_cfg.output_dir;
            c.pretrain.weights = {result.row.itc ? 1.0 : 0.0, result.row.srj ? 1.0 : 0.0, result.row.dnc ? 1.0 : 0.0};
            c.pretrain_enabled = result.row.itc || result.row.srj || result.row.dnc;
            c.transition.enabled = result.row.pts && c.pretrain_enabled;
            c.transition.n_sizes = result.row.n_sizes;
            c.detect.backbone = "auto";
            say(log, "ablate: " + result.row.name + " seed " + std::to_string(seed));
            try {
                if (c.pretrain_enabled) {
                    cmd_pretrain(c, log);
                }
                if (c.transition.enabled) {
                    cmd_transition(c, log);
                }
                cmd_train_det(c, log);
                cmd_eval(c, log);
                const Layout layout(c);
                cell.report = metrics::evaluate(load_detections(layout.detect_dir(c.detect.run_name) / "detections.jsonl"),
                                                load_ground_truth(layout.test_scenes()), load_taxonomy(c));
            } catch (const std::exception& e) {
                cell.error = e.what();
                say(log, "ablate: " + result.row.name + " seed " + std::to_string(seed) + " failed: " + cell.error);
            }
            result.cells.push_back(std::move(cell));
        }
    }
    for (auto& r : table.rows) {
        std::vector<double> m50;
        std::vector<double> m75;
        std::vector<double> m5095;
        for (const auto& c : r.cells) {
            if (c.report) {
                m50.push_back(c.report->map50);
                m75.push_back(c.report->map75);
                m5095.push_back(c.report->map50_95);
            }
        }
        r.succeeded = static_cast<int>(m50.size());
        if (r.succeeded == 0) {
            continue;
        }
        auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
        r.mean_map50 = mean(m50);
        r.mean_map75 = mean(m75);
        r.mean_map50_95 = mean(m5095);
        r.spread_map50 = sample_sd(m50, r.mean_map50);
        r.spread_map75 = sample_sd(m75, r.mean_map75);
        r.spread_map50_95 = sample_sd(m5095, r.mean_map50_95);
    }
    fs::create_directories(root);
    {
        std::ofstream out(root / "ablation.txt");
        out << table.to_text();
    }
    write_json_file(root / "ablation.json", table.to_json());
    return table;
}

}  // namespace vlptl::pipeline
