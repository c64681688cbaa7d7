// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   vlptl_acceptance [--workdir DIR] [--only NAME]...
//
// The oracle criteria take seconds. The end-to-end criteria run the full desk
// pipeline for three seeds, plus a second detector per seed on the random-init
// backbone, which takes about twenty minutes on one core.

#include "gradcheck.hpp"
#include "oracles.hpp"

#include "vlptl/errors.hpp"
#include "vlptl/metrics.hpp"
#include "vlptl/pipeline.hpp"
#include "vlptl/pretrain.hpp"
#include "vlptl/pts.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace vlptl;
namespace fs = std::filesystem;
namespace pl = vlptl::pipeline;
using ad::Var;
using testing::gradient_error;
using testing::unit_rows;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int digits = 3) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

oracle::Rows rows_of(const ad::Matrix& m) {
    oracle::Rows out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out[static_cast<std::size_t>(i)].assign(m.row(i).data(), m.row(i).data() + m.cols());
    }
    return out;
}

oracle::MlpWeights weights_of(const pretrain::SRJHead& h) {
    return {rows_of(h.hidden.weight.value()), rows_of(h.hidden.bias.value())[0], rows_of(h.output.weight.value()),
            rows_of(h.output.bias.value())[0]};
}

std::vector<std::string> random_categories(const Taxonomy& t, int n, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, t.categories().size() - 1);
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(t.categories()[pick(rng)].name);
    }
    return out;
}

std::vector<int> random_perm(int n, std::mt19937_64& rng) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

std::vector<int> oracle_targets(const Taxonomy& t, const std::vector<std::string>& cats, const std::vector<int>& perm) {
    std::vector<int> out;
    for (std::size_t i = 0; i < cats.size(); ++i) {
        out.push_back(static_cast<int>(oracle::relate(t.category(cats[i]), t.category(cats[static_cast<std::size_t>(perm[i])]))));
    }
    return out;
}

EmbeddingBatch batch_of(const ad::Matrix& m) { return {Var(m)}; }

// ---- oracle criteria -------------------------------------------------------------

Outcome relation_oracle() {
    std::mt19937_64 rng(101);
    long pairs = 0;
    auto check = [&](const Taxonomy& t) {
        for (const auto& a : t.categories()) {
            for (const auto& b : t.categories()) {
                ++pairs;
                if (t.relate(a.name, b.name) != oracle::relate(a, b)) {
                    return false;
                }
            }
        }
        return true;
    };
    const Taxonomy desk = Taxonomy::desk_default();
    if (desk.categories().size() != 10 || !check(desk)) {
        return {false, "desk taxonomy disagrees with the rule"};
    }
    for (int i = 0; i < 500; ++i) {
        if (!check(oracle::random_taxonomy(rng))) {
            return {false, "random taxonomy " + std::to_string(i) + " disagrees"};
        }
    }
    return {true, "desk taxonomy and 500 random taxonomies, " + std::to_string(pairs) + " pairs exact"};
}

Outcome dnc_target_oracle() {
    for (int k = 1; k <= 12; ++k) {
        for (int q = 1; q <= 12; ++q) {
            const ad::Matrix z = pretrain::dnc_target(k, q);
            const auto want = oracle::dnc_target(k, q);
            for (int i = 0; i < k + q; ++i) {
                for (int j = 0; j < k + q; ++j) {
                    if (z(i, j) != want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
                        return {false, "mismatch at k=" + std::to_string(k) + " q=" + std::to_string(q)};
                    }
                }
            }
        }
    }
    return {true, "all 144 (k, q) with 1 <= k, q <= 12 exact"};
}

Outcome srj_target_oracle() {
    std::mt19937_64 rng(102);
    for (int trial = 0; trial < 500; ++trial) {
        const Taxonomy t = trial % 5 == 0 ? Taxonomy::desk_default() : oracle::random_taxonomy(rng);
        const int n = std::uniform_int_distribution<int>(1, 8)(rng);
        const auto cats = random_categories(t, n, rng);
        const auto perm = random_perm(n, rng);
        if (pretrain::srj_targets(t, cats, perm) != oracle_targets(t, cats, perm)) {
            return {false, "batch " + std::to_string(trial) + " disagrees"};
        }
    }
    return {true, "500 random batches with n <= 8 exact"};
}

struct OracleModel {
    std::unique_ptr<pretrain::VisionLanguageModel> model;
    explicit OracleModel(int dim, std::uint64_t seed) {
        EncoderConfig c;
        c.embed_dim = dim;
        c.image_size = 32;
        c.depth = 1;
        c.heads = 2;
        c.text_depth = 1;
        c.vocab_size = 4;
        model = std::make_unique<pretrain::VisionLanguageModel>(c, Tokenizer::from_tokens({"<pad>", "<unk>", "a", "b"}), seed);
    }
};

Outcome loss_oracles() {
    std::mt19937_64 rng(103);
    double worst = 0;
    int cases = 0;
    auto track = [&](double got, double want) {
        worst = std::max(worst, std::abs(got - want));
        ++cases;
    };
    const Taxonomy desk = Taxonomy::desk_default();
    for (int trial = 0; trial < 200; ++trial) {
        const Taxonomy t = trial % 2 == 0 ? desk : oracle::random_taxonomy(rng);
        const int n = std::uniform_int_distribution<int>(2, 4)(rng);
        const int d = 8;
        const auto cats = random_categories(t, n, rng);
        const ad::Matrix v = unit_rows(n, d, rng);
        const ad::Matrix l = unit_rows(n, d, rng);
        const double temp = std::uniform_real_distribution<double>(0.02, 1.0)(rng);

        // ITC
        track(pretrain::itc_loss(batch_of(v), batch_of(l), temp).item(), oracle::itc_loss(rows_of(v), rows_of(l), temp));

        // SRJ subtask on a random permutation
        nn::Rng hr(static_cast<std::uint64_t>(trial));
        const pretrain::SRJHead head(d, hr);
        const auto perm = random_perm(n, rng);
        track(pretrain::srj_subtask_loss(batch_of(v), pretrain::permute_features(batch_of(l), perm),
                                         oracle_targets(t, cats, perm), head)
                  .item(),
              oracle::srj_subtask_loss(rows_of(v), oracle::permute(rows_of(l), perm), oracle_targets(t, cats, perm),
                                       weights_of(head)));

        // DNC component on a random defect/normal split
        const int k = std::uniform_int_distribution<int>(1, n - 1)(rng);
        const double scale = std::uniform_real_distribution<double>(1, 20)(rng);
        track(pretrain::dnc_component_loss(Var(v.topRows(k)), Var(v.bottomRows(n - k)), Var::scalar(scale)).item(),
              oracle::dnc_component_loss(rows_of(v.topRows(k)), rows_of(v.bottomRows(n - k)), scale));

        // Weighted total with the model's own learned parameters.
        const OracleModel m(d, static_cast<std::uint64_t>(trial));
        const pretrain::LossWeights w{std::uniform_real_distribution<double>(0, 2)(rng),
                                      std::uniform_real_distribution<double>(0, 2)(rng),
                                      std::uniform_real_distribution<double>(0, 2)(rng)};
        pretrain::Rng loss_rng(static_cast<std::uint64_t>(trial) + 7);
        pretrain::Rng perm_rng = loss_rng;
        std::vector<int> ip(static_cast<std::size_t>(n));
        std::vector<int> tp(static_cast<std::size_t>(n));
        std::iota(ip.begin(), ip.end(), 0);
        std::iota(tp.begin(), tp.end(), 0);
        std::shuffle(ip.begin(), ip.end(), perm_rng);
        std::shuffle(tp.begin(), tp.end(), perm_rng);
        const auto hw = weights_of(m.model->srj_head());
        const auto V = rows_of(v);
        const auto L = rows_of(l);
        const auto it = oracle_targets(t, cats, tp);
        const auto iv = oracle_targets(t, cats, ip);
        const double srj = 0.25 * (oracle::srj_subtask_loss(V, oracle::permute(L, tp), it, hw) +
                                   oracle::srj_subtask_loss(L, oracle::permute(V, ip), iv, hw) +
                                   oracle::srj_subtask_loss(V, oracle::permute(V, ip), iv, hw) +
                                   oracle::srj_subtask_loss(L, oracle::permute(L, tp), it, hw));
        const double want = w.itc * oracle::itc_loss(V, L, m.model->temperature()) + w.srj * srj +
                            w.dnc * oracle::dnc_loss(t, cats, V, m.model->dnc_scale());
        track(pretrain::total_loss(batch_of(v), batch_of(l), t, cats, *m.model, w, loss_rng).breakdown.total, want);
    }
    return {worst <= 1e-6, std::to_string(cases) + " cases on n <= 4 batches, worst abs error " + sci(worst) + " (limit 1e-6)"};
}

Outcome gradient_checks() {
    const Taxonomy t = Taxonomy::desk_default();
    double worst = 0;
    int seeds = 0;
    for (std::uint64_t seed = 0; seed < 24; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        const int n = std::uniform_int_distribution<int>(3, 6)(rng);
        const auto cats = random_categories(t, n, rng);
        Var v(unit_rows(n, 4, rng), true);
        Var l(unit_rows(n, 4, rng), true);
        nn::Rng hr(seed);
        const pretrain::SRJHead head(4, hr);
        const auto ip = random_perm(n, rng);
        const auto tp = random_perm(n, rng);
        const double temp = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
        const double scale = std::uniform_real_distribution<double>(1, 10)(rng);
        const auto itc = [&](const std::vector<Var>& x) {
            return pretrain::itc_loss({ad::l2_normalize_rows(x[0])}, {ad::l2_normalize_rows(x[1])}, temp);
        };
        const auto srj = [&](const std::vector<Var>& x) {
            return pretrain::srj_loss({x[0]}, {x[1]}, t, cats, head, ip, tp).loss;
        };
        const auto dnc = [&](const std::vector<Var>& x) { return pretrain::dnc_loss(t, cats, {x[0]}, Var::scalar(scale)).loss; };
        worst = std::max(worst, gradient_error(itc, {v, l}));
        worst = std::max(worst, gradient_error(srj, {v, l, head.hidden.weight, head.hidden.bias, head.output.weight,
                                                     head.output.bias}));
        worst = std::max(worst, gradient_error(dnc, {v}));
        ++seeds;
    }
    return {worst <= 1e-4, "ITC, SRJ (embeddings and head) and DNC on " + std::to_string(seeds) +
                               " seeds, worst relative error " + sci(worst) + " (limit 1e-4)"};
}

bool crop_axis_ok(int start, int size, int pos, int len, int limit) {
    return start >= 0 && start + size <= limit && start <= pos && start + size >= pos + len;
}

Outcome crop_geometry() {
    std::mt19937_64 rng(104);
    int interior = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int H = std::uniform_int_distribution<int>(32, 800)(rng);
        const int W = std::uniform_int_distribution<int>(32, 800)(rng);
        const int h = std::uniform_int_distribution<int>(1, std::max(1, H / 12))(rng);
        const int w = std::uniform_int_distribution<int>(1, std::max(1, W / 12))(rng);
        const pts::PixelRect d{std::uniform_int_distribution<int>(0, W - w)(rng),
                               std::uniform_int_distribution<int>(0, H - h)(rng), h, w};
        pts::CropSpec spec;
        spec.n_sizes = std::uniform_int_distribution<int>(1, 5)(rng);
        const pts::CropGeometry g = pts::sample_crop_geometry(H, W, d, spec, rng);
        const std::string where = "case " + std::to_string(trial);
        if (static_cast<int>(g.rects.size()) != spec.n_sizes) {
            return {false, where + ": " + std::to_string(g.rects.size()) + " crops for n_sizes " + std::to_string(spec.n_sizes)};
        }
        // Interior: the largest window for every size fits around the defect.
        const double top = spec.bounds[static_cast<std::size_t>(spec.n_sizes - 1)].high;
        const int span_h = static_cast<int>(std::floor(top * h + 1e-9));
        const int span_w = static_cast<int>(std::floor(top * w + 1e-9));
        const bool inside = d.y - (span_h - h) / 2 >= 0 && d.y - (span_h - h) / 2 + span_h <= H &&
                            d.x - (span_w - w) / 2 >= 0 && d.x - (span_w - w) / 2 + span_w <= W;
        interior += inside ? 1 : 0;
        for (int s = 0; s < spec.n_sizes; ++s) {
            const pts::PixelRect& r = g.rects[static_cast<std::size_t>(s)];
            if (!crop_axis_ok(r.y, r.h, d.y, d.h, H) || !crop_axis_ok(r.x, r.w, d.x, d.w, W)) {
                return {false, where + ": crop " + std::to_string(s) + " does not contain the defect inside the image"};
            }
            if (inside) {
                const auto& b = spec.bounds[static_cast<std::size_t>(s)];
                const bool ok = r.h >= std::ceil(b.low * h - 1e-9) && r.h <= std::floor(b.high * h + 1e-9) &&
                                r.w >= std::ceil(b.low * w - 1e-9) && r.w <= std::floor(b.high * w + 1e-9);
                if (!ok) {
                    return {false, where + ": interior crop " + std::to_string(s) + " outside its size bounds"};
                }
            }
        }
    }
    return {interior >= 200, "1000 cases contain their defect with k crops for n_sizes = k; " + std::to_string(interior) +
                                 " interior cases within exact size bounds"};
}

Outcome map_oracle() {
    const Taxonomy desk = Taxonomy::desk_default();
    const auto classes = desk.defect_categories();
    std::mt19937_64 rng(105);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        DetectionsByImage dets;
        GroundTruthByImage gts;
        oracle::random_detection_set(rng, classes, 12, dets, gts);
        const metrics::APReport got = metrics::evaluate(dets, gts, desk);
        const oracle::ReferenceReport want = oracle::evaluate(dets, gts, classes);
        worst = std::max({worst, std::abs(got.map50 - want.map50), std::abs(got.map75 - want.map75),
                          std::abs(got.map50_95 - want.map50_95)});
        for (const auto& [c, aps] : want.ap) {
            for (std::size_t t = 0; t < aps.size(); ++t) {
                worst = std::max(worst, std::abs(got.per_category_ap.at(c)[t] - aps[t]));
            }
        }
        // Duplicates never raise any AP.
        DetectionsByImage dup = dets;
        for (auto& [img, list] : dup) {
            if (!list.empty()) {
                list.push_back(list.front());
            }
        }
        const metrics::APReport d = metrics::evaluate(dup, gts, desk);
        for (const auto& [c, aps] : d.per_category_ap) {
            for (std::size_t t = 0; t < aps.size(); ++t) {
                if (aps[t] > got.per_category_ap.at(c)[t]) {
                    return {false, "duplicate raised AP of " + c + " in set " + std::to_string(trial)};
                }
            }
        }
    }
    // Canonical cases.
    const GroundTruthByImage gts = {{"a.png", {{{0, 0, 20, 20}, "bird_nest"}, {{30, 30, 60, 50}, "grading_ring_damage"}}},
                                    {"b.png", {{{5, 5, 25, 40}, "bird_nest"}}}};
    DetectionsByImage perfect;
    for (const auto& [img, list] : gts) {
        for (const auto& g : list) {
            perfect[img].push_back({g.box, 0.9, g.category});
        }
    }
    const auto p = metrics::evaluate(perfect, gts, desk);
    const auto e = metrics::evaluate({}, gts, desk);
    const bool canonical = p.map50 == 1.0 && p.map75 == 1.0 && p.map50_95 == 1.0 && e.map50 == 0.0 && e.map75 == 0.0 &&
                           e.map50_95 == 0.0;
    return {worst <= 1e-9 && canonical, "50 random sets, worst deviation " + sci(worst) +
                                            " (limit 1e-9); perfect " + num(p.map50_95, 1) + ", empty " + num(e.map50_95, 1) +
                                            ", duplicates never raise AP"};
}

// ---- end-to-end criteria -------------------------------------------------------------

struct SeedRun {
    std::uint64_t seed = 0;
    double retrieval = 0;
    double chance = 0;
    double probe = 0;
    double probe_random = 0;
    double map50_transfer = 0;
    double map50_random = 0;
    double pretrain_seconds = 0;
    double pipeline_seconds = 0;
    std::string error;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SeedRun run_desk_seed(const fs::path& workdir, std::uint64_t seed) {
    SeedRun r;
    r.seed = seed;
    pl::PipelineConfig c = pl::PipelineConfig::desk();
    c.set_seed(seed);
    c.output_dir = (workdir / ("desk_seed" + std::to_string(seed))).string();
    try {
        const auto t0 = std::chrono::steady_clock::now();
        pl::cmd_synth(c, &std::cerr);
        pl::cmd_curate(c, &std::cerr);
        const auto tp = std::chrono::steady_clock::now();
        const pl::StageRecord pre = pl::cmd_pretrain(c, &std::cerr);
        r.pretrain_seconds = seconds_since(tp);
        pl::cmd_transition(c, &std::cerr);
        pl::cmd_train_det(c, &std::cerr);
        pl::cmd_eval(c, &std::cerr);
        r.pipeline_seconds = seconds_since(t0);
        const pl::Layout layout(c);
        r.map50_transfer = pl::read_stage(layout.detect_dir(c.detect.run_name), "detect").summary.at("map50");
        r.retrieval = pre.summary.at("retrieval_top1");
        r.chance = pre.summary.at("retrieval_chance");
        r.probe = pre.summary.at("probe_accuracy");
        r.probe_random = pre.summary.at("probe_accuracy_random_init");

        pl::PipelineConfig base = c;
        base.detect.backbone = "random";
        base.detect.run_name = "detect_random";
        pl::cmd_train_det(base, &std::cerr);
        r.map50_random = pl::cmd_eval(base, &std::cerr).summary.at("map50");
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    return r;
}

std::vector<SeedRun>& desk_runs(const fs::path& workdir) {
    static std::vector<SeedRun> runs;
    if (runs.empty()) {
        for (std::uint64_t seed : {0, 1, 2}) {
            runs.push_back(run_desk_seed(workdir, seed));
            const SeedRun& r = runs.back();
            std::cerr << "seed " << seed << ": retrieval " << num(r.retrieval) << " probe " << num(r.probe) << " vs "
                      << num(r.probe_random) << ", mAP50 " << num(r.map50_transfer) << " vs random " << num(r.map50_random)
                      << (r.error.empty() ? "" : " error: " + r.error) << '\n';
        }
    }
    return runs;
}

Outcome pretraining_signal(const fs::path& workdir) {
    const auto& runs = desk_runs(workdir);
    std::vector<double> retrieval;
    std::vector<double> gain;
    std::vector<double> seconds;
    double chance = 0;
    for (const auto& r : runs) {
        if (!r.error.empty()) {
            return {false, "seed " + std::to_string(r.seed) + " failed: " + r.error};
        }
        retrieval.push_back(r.retrieval);
        gain.push_back(r.probe - r.probe_random);
        seconds.push_back(r.pretrain_seconds);
        chance = r.chance;
    }
    const double med_retrieval = median(retrieval);
    const double med_gain = median(gain);
    const double slowest = *std::max_element(seconds.begin(), seconds.end());
    std::ostringstream d;
    d << "median retrieval top-1 " << num(med_retrieval) << " vs 2x chance " << num(2 * chance) << "; median probe gain "
      << num(100 * med_gain, 1) << " points (need 10); slowest pretraining " << num(slowest / 60, 1) << " min (limit 10)";
    return {med_retrieval >= 2 * chance && med_gain >= 0.10 && slowest <= 600, d.str()};
}

Outcome transfer_direction(const fs::path& workdir) {
    const auto& runs = desk_runs(workdir);
    int wins = 0;
    double slowest = 0;
    std::ostringstream d;
    for (const auto& r : runs) {
        if (!r.error.empty()) {
            return {false, "seed " + std::to_string(r.seed) + " failed: " + r.error};
        }
        wins += r.map50_transfer >= r.map50_random ? 1 : 0;
        slowest = std::max(slowest, r.pipeline_seconds);
        d << "seed " << r.seed << " " << num(r.map50_transfer) << " vs " << num(r.map50_random) << "; ";
    }
    d << wins << " of 3 seeds favour the transferred backbone; slowest full pipeline " << num(slowest / 60, 1)
      << " min (limit 30)";
    return {wins >= 2 && slowest <= 1800, d.str()};
}

Outcome ablation_plumbing(const fs::path& workdir) {
    const auto tasks = pl::task_toggle_rows();
    const auto sizes = pl::crop_size_rows();
    std::set<std::tuple<bool, bool, bool>> combos;
    for (const auto& r : tasks) {
        combos.insert({r.itc, r.srj, r.dnc});
    }
    if (tasks.size() != 8 || combos.size() != 8 || sizes.size() != 5) {
        return {false, "grid shape " + std::to_string(tasks.size()) + " + " + std::to_string(sizes.size())};
    }
    std::vector<pl::AblationRow> rows = tasks;
    rows.insert(rows.end(), sizes.begin(), sizes.end());
    pl::PipelineConfig c = pl::PipelineConfig::smoke();
    c.output_dir = (workdir / "ablation").string();
    const pl::AblationTable table = pl::cmd_ablate(c, rows, {0});
    int recorded = 0;
    for (const auto& r : table.rows) {
        recorded += r.succeeded;
    }
    const bool files = fs::exists(workdir / "ablation" / "ablate" / "ablation.txt") &&
                       fs::exists(workdir / "ablation" / "ablate" / "ablation.json");
    return {table.rows.size() == 13 && recorded == 13 && files,
            "8 task-toggle rows and 5 crop-size rows, " + std::to_string(recorded) + " of 13 cells ran and were recorded"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string workdir = (fs::temp_directory_path() / "vlptl_acceptance").string();
    std::vector<std::string> only;
    app.add_option("--workdir", workdir, "Scratch directory for end-to-end runs");
    app.add_option("--only", only, "Run only the named criteria");
    CLI11_PARSE(app, argc, argv);

    const fs::path wd = fs::absolute(workdir);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"relation_oracle", relation_oracle},
        {"dnc_target_oracle", dnc_target_oracle},
        {"srj_target_oracle", srj_target_oracle},
        {"loss_oracles", loss_oracles},
        {"gradient_checks", gradient_checks},
        {"crop_geometry", crop_geometry},
        {"map_oracle", map_oracle},
        {"ablation_plumbing", [&] { return ablation_plumbing(wd); }},
        {"pretraining_signal", [&] { return pretraining_signal(wd); }},
        {"transfer_direction", [&] { return transfer_direction(wd); }},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) {
            continue;
        }
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << num(seconds_since(t0), 1) << " s]"
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
