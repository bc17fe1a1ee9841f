// mproto: command-line front end over the library. Every command that takes
// --seed is deterministic for a fixed seed and thread count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mproto/error.hpp"
#include "mproto/evaluation.hpp"
#include "mproto/io.hpp"
#include "mproto/mask_partition.hpp"
#include "mproto/model.hpp"
#include "mproto/parallel.hpp"
#include "mproto/prototypes.hpp"
#include "mproto/synthetic.hpp"
#include "mproto/training.hpp"

namespace fs = std::filesystem;
using namespace mproto;

namespace {

// Thrown when a check command (grad-check) finds a violation.
struct CheckFailed {
    std::string what;
};

struct ModelOptions {
    std::string checkpoint;
    int n = 3;
    int levels = 3;
    int width = 8;
    std::uint64_t init_seed = 0;
};

void add_model_options(CLI::App* cmd, ModelOptions& m) {
    cmd->add_option("--checkpoint", m.checkpoint, "Checkpoint directory written by train");
    cmd->add_option("--n", m.n, "Prototypes per modality when no checkpoint is given")->check(CLI::PositiveNumber);
    cmd->add_option("--levels", m.levels, "Pyramid levels when no checkpoint is given")->check(CLI::PositiveNumber);
    cmd->add_option("--width", m.width, "Fusion width when no checkpoint is given")->check(CLI::PositiveNumber);
    cmd->add_option("--init-seed", m.init_seed, "Initialization seed when no checkpoint is given");
}

ModelParams load_params(const ModelOptions& m, int dim) {
    if (!m.checkpoint.empty()) {
        ModelParams p = read_checkpoint(m.checkpoint).params;
        if (p.shape.dim != dim) {
            throw ShapeError("checkpoint feature dim " + std::to_string(p.shape.dim) + " does not match data dim " +
                             std::to_string(dim));
        }
        return p;
    }
    return ModelParams::initialize(ModelShape{m.n, m.levels, m.width, dim}, m.init_seed);
}

int pyramid_dim(const FeaturePyramid& p) {
    if (p.empty()) {
        throw EpisodeError("empty feature pyramid");
    }
    return p.back().dim();
}

Tensor prob_tensor(const ClassProbMap& m) {
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(m.height), static_cast<std::uint32_t>(m.width),
              static_cast<std::uint32_t>(m.class_count())};
    t.values.assign(m.probs.data().begin(), m.probs.data().end());
    return t;
}

std::vector<ClassId> argmax_labels(const ClassProbMap& m, const std::vector<ClassId>& classes) {
    std::vector<ClassId> out(m.pixel_count());
    for (std::size_t p = 0; p < m.pixel_count(); ++p) {
        const auto row = m.probs.row(p);
        out[p] = classes[static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())];
    }
    return out;
}

std::string modality_name(Modality m) { return m == Modality::textual ? "textual" : "visual"; }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
}

// Serializes an episode into `dir` in the layout read_episode expects.
void write_episode(const fs::path& dir, const Episode& ep, const std::string& embeddings_manifest) {
    fs::create_directories(dir);
    nlohmann::ordered_json j;
    j["background"] = ep.background;
    j["classes"] = ep.classes;
    j["seed"] = ep.seed;
    j["embeddings"] = fs::relative(embeddings_manifest, dir).string();
    auto pyramid = [&](const FeaturePyramid& p, const std::string& stem) {
        std::vector<std::string> paths;
        for (std::size_t l = 0; l < p.size(); ++l) {
            const std::string rel = stem + "_level" + std::to_string(l) + ".mpf";
            write_tensor(dir / rel, to_tensor(p[l]));
            paths.push_back(rel);
        }
        return paths;
    };
    j["query"] = {{"features", pyramid(ep.query, "query")}};
    if (ep.query_labels) {
        write_label_map(dir / "query_labels.pgm", *ep.query_labels);
        j["query"]["labels"] = "query_labels.pgm";
    }
    j["shots"] = nlohmann::ordered_json::array();
    for (std::size_t s = 0; s < ep.shots.size(); ++s) {
        const auto& shot = ep.shots[s];
        const std::string stem = "shot" + std::to_string(s);
        nlohmann::ordered_json masks = nlohmann::ordered_json::object();
        for (const auto& [c, mask] : shot.masks) {
            const std::string rel = stem + "_class" + std::to_string(c) + ".pgm";
            write_mask(dir / rel, mask);
            masks[std::to_string(c)] = rel;
        }
        j["shots"].push_back({{"features", pyramid(shot.features, stem)}, {"masks", masks}, {"targets", shot.targets}});
    }
    write_text(dir / "episode.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string out;
    SyntheticDatasetSpec spec;
    int n = 3;
};

void cmd_synth(const SynthArgs& a) {
    const Dataset ds = gen_dataset(a.spec);
    write_dataset(a.out, ds);
    const fs::path manifest = fs::path(a.out) / "manifest.json";

    // A sample GFS episode over every class: query is the first eval scene,
    // each class takes the first other eval scene showing at least n pixels of it.
    if (!ds.eval.empty()) {
        std::vector<ClassId> classes;
        std::map<ClassId, std::vector<std::size_t>> supports;
        for (ClassId c : ds.registry.all()) {
            if (c == ds.registry.background) {
                continue;
            }
            classes.push_back(c);
            for (std::size_t s : scenes_with(ds.eval, c, 0)) {
                const auto& lab = ds.eval[s].labels.labels;
                if (std::count(lab.begin(), lab.end(), c) >= a.n) {
                    supports[c] = {s};
                    break;
                }
            }
        }
        const Episode ep =
            make_gfs_episode(ds.eval, 0, classes, supports, ds.embeddings, ds.registry.background, a.spec.seed);
        write_episode(fs::path(a.out) / "episode", ep, manifest.string());
    }

    // The first eval scene's mask of its first foreground class, for split-mask.
    if (!ds.eval.empty()) {
        const LabelMap& lm = ds.eval.front().labels;
        const auto fg = std::find_if(lm.labels.begin(), lm.labels.end(),
                                     [&](ClassId c) { return c != ds.registry.background; });
        if (fg != lm.labels.end()) {
            BinaryMask mask(lm.height, lm.width);
            for (int y = 0; y < lm.height; ++y) {
                for (int x = 0; x < lm.width; ++x) {
                    mask.set(y, x, lm.labels[static_cast<std::size_t>(y) * lm.width + x] == *fg);
                }
            }
            write_mask(fs::path(a.out) / "sample_mask.pgm", mask);
        }
    }

    RunConfig cfg;
    cfg.n = a.n;
    cfg.levels = a.spec.levels;
    cfg.seed = a.spec.seed;
    cfg.dataset = "manifest.json";
    write_text(fs::path(a.out) / "config.json", to_json(cfg) + "\n");

    std::cout << "wrote " << ds.train.size() << " train and " << ds.eval.size() << " eval scenes to " << a.out
              << "\n";
}

// ---------------------------------------------------------------- split-mask

struct SplitArgs {
    std::string mask;
    std::string out;
    std::string method = "msplit";
    int n = 3;
    int max_iter = 10;
    std::uint64_t seed = 0;
};

void cmd_split_mask(const SplitArgs& a) {
    const BinaryMask mask = read_mask(a.mask);
    const auto t0 = std::chrono::steady_clock::now();
    const Partition part =
        a.method == "kmeans" ? kmeans_split(mask, a.n, a.max_iter, a.seed) : m_splitting(mask, a.n, a.seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!a.out.empty()) {
        fs::create_directories(a.out);
    }
    for (std::size_t i = 0; i < part.parts.size(); ++i) {
        if (!a.out.empty()) {
            write_mask(fs::path(a.out) / ("part" + std::to_string(i) + ".pgm"), part.parts[i]);
        }
        std::cout << "part " << i << " center (x=" << part.centers[i].x << ", y=" << part.centers[i].y
                  << ") pixels " << part.parts[i].foreground_count() << "\n";
    }
    std::printf("method %s  n %d  time %.6f s\n", a.method.c_str(), a.n, secs);
}

// ---------------------------------------------------------------- bench-split

struct BenchArgs {
    std::string mask;
    int size = 473;
    int n = 5;
    int runs = 10;
    std::vector<int> kmeans_iters = {3, 10, 100};
    std::uint64_t seed = 0;
};

void cmd_bench_split(const BenchArgs& a) {
    const BinaryMask mask = a.mask.empty() ? half_foreground_disk(a.size, a.size) : read_mask(a.mask);
    const SplitTiming t = benchmark_split(mask, a.n, a.runs, a.kmeans_iters, a.seed);
    std::printf("mask %dx%d, %zu foreground pixels, n %d, median of %d runs\n", mask.height(), mask.width(),
                mask.foreground_count(), t.n, t.runs);
    std::printf("%-22s %12s %10s\n", "method", "seconds", "ratio");
    std::printf("%-22s %12.6f %10s\n", "m-splitting", t.m_splitting_median_s, "1.00");
    for (const auto& [iters, secs] : t.kmeans_median_s) {
        const std::string name = "k-means max_iter " + std::to_string(iters);
        std::printf("%-22s %12.6f %10.2f\n", name.c_str(), secs,
                    t.m_splitting_median_s > 0.0 ? secs / t.m_splitting_median_s : 0.0);
    }
}

// ---------------------------------------------------------------- extract

struct ExtractArgs {
    std::string features;
    std::string mask;
    std::string embeddings;
    std::string out;
    ClassId class_id = 1;
    int n = 3;
    std::uint64_t seed = 0;
};

void cmd_extract(const ExtractArgs& a) {
    std::vector<PrototypeSet::Entry> entries;
    if (!a.embeddings.empty()) {
        const auto recs = read_embeddings(a.embeddings);
        const auto it = recs.find(a.class_id);
        if (it == recs.end()) {
            throw EpisodeError("no embedding record for class " + std::to_string(a.class_id));
        }
        const PrototypeSet t = textual_prototypes(it->second);
        entries.insert(entries.end(), t.entries.begin(), t.entries.end());
    }
    if (!a.features.empty() || !a.mask.empty()) {
        if (a.features.empty() || a.mask.empty()) {
            throw EpisodeError("extract: --features and --mask go together");
        }
        const FeatureMap f = to_feature_map(read_tensor(a.features));
        const PrototypeSet v = visual_prototypes(f, read_mask(a.mask), a.n, a.seed, a.class_id);
        entries.insert(entries.end(), v.entries.begin(), v.entries.end());
    }
    if (entries.empty()) {
        throw EpisodeError("extract: give --embeddings, or --features with --mask");
    }
    const std::size_t dim = entries.front().vector.size();
    Matrix m(entries.size(), dim);
    nlohmann::ordered_json legend = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].vector.size() != dim) {
            throw ShapeError("extract: textual and visual prototypes differ in dimension");
        }
        std::copy(entries[i].vector.begin(), entries[i].vector.end(), m.row(i).begin());
        legend.push_back({{"row", i}, {"modality", modality_name(entries[i].modality)}, {"slot", entries[i].slot}});
    }
    write_tensor(a.out, to_tensor(m));
    write_text(a.out + ".json", nlohmann::ordered_json{{"class_id", a.class_id}, {"entries", legend}}.dump(2) + "\n");
    std::cout << "class " << a.class_id << ": " << entries.size() << " prototypes of dim " << dim << " -> " << a.out
              << "\n";
}

// ---------------------------------------------------------------- fuse / predict

struct EpisodeArgs {
    std::string episode;
    std::string out;
    ModelOptions model;
};

void cmd_fuse(const EpisodeArgs& a) {
    const Episode ep = read_episode(a.episode);
    const ModelParams params = load_params(a.model, pyramid_dim(ep.query));
    const PreparedEpisode prep = prepare_episode(ep, params.shape.n);
    const auto banks = build_banks(prep, params);
    fs::create_directories(a.out);
    for (std::size_t l = 0; l < banks.size(); ++l) {
        const auto& bank = banks[l];
        const std::string stem = "bank_level" + std::to_string(l);
        write_tensor(fs::path(a.out) / (stem + ".mpf"), to_tensor(bank.vectors));
        nlohmann::ordered_json entries = nlohmann::ordered_json::array();
        for (const auto& e : bank.entries) {
            entries.push_back({{"class_id", bank.classes[static_cast<std::size_t>(e.class_index)]}, {"slot", e.slot}});
        }
        write_text(fs::path(a.out) / (stem + ".json"),
                   nlohmann::ordered_json{{"classes", bank.classes}, {"entries", entries}}.dump(2) + "\n");
        std::cout << "level " << l << ": " << bank.entry_count() << " entries over " << bank.class_count()
                  << " classes\n";
    }
}

void cmd_predict(const EpisodeArgs& a) {
    const Episode ep = read_episode(a.episode);
    const ModelParams params = load_params(a.model, pyramid_dim(ep.query));
    const PreparedEpisode prep = prepare_episode(ep, params.shape.n);
    const EpisodeForward fwd = forward_episode(prep, params);
    const auto& classes = fwd.banks.front().classes;
    const ClassProbMap& final = fwd.prediction.final;

    fs::create_directories(a.out);
    write_tensor(fs::path(a.out) / "probs.mpf", prob_tensor(final));
    for (std::size_t l = 0; l < fwd.prediction.levels.size(); ++l) {
        write_tensor(fs::path(a.out) / ("probs_level" + std::to_string(l) + ".mpf"),
                     prob_tensor(fwd.prediction.levels[l]));
    }
    const std::vector<ClassId> pred = argmax_labels(final, classes);
    for (ClassId c : classes) {
        BinaryMask mask(final.height, final.width);
        for (std::size_t p = 0; p < pred.size(); ++p) {
            mask.set(static_cast<int>(p) / final.width, static_cast<int>(p) % final.width, pred[p] == c);
        }
        write_mask(fs::path(a.out) / ("mask_class" + std::to_string(c) + ".pgm"), mask);
    }
    write_text(fs::path(a.out) / "classes.json", nlohmann::json(classes).dump() + "\n");

    std::cout << "classes";
    for (ClassId c : classes) {
        std::cout << " " << c;
    }
    std::cout << "\n";
    if (ep.query_labels) {
        std::vector<ClassId> gt = ep.query_labels->labels;
        if (ep.query_labels->height != final.height || ep.query_labels->width != final.width) {
            throw ShapeError("query labels do not match the output grid");
        }
        for (ClassId& g : gt) {
            if (std::find(classes.begin(), classes.end(), g) == classes.end()) {
                g = ep.background;
            }
        }
        for (const auto& [c, v] : iou_per_class(pred, gt, classes)) {
            std::printf("iou class %d %.4f\n", c, 100.0 * v);
        }
    }
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config;
    std::string dataset;
    std::string out;
    std::string log;
    std::optional<int> steps;
    std::optional<std::uint64_t> seed;
};

void cmd_train(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : read_run_config(a.config);
    if (!a.dataset.empty()) {
        cfg.dataset = a.dataset;
    }
    if (a.steps) {
        cfg.steps = *a.steps;
    }
    if (a.seed) {
        cfg.seed = *a.seed;
    }
    cfg.validate();
    if (cfg.dataset.empty()) {
        throw ConfigError("train: no dataset (config key 'dataset' or --dataset)");
    }
    const Dataset ds = read_dataset(cfg.dataset);
    if (ds.train.empty()) {
        throw EpisodeError("train: dataset has no training scenes");
    }
    const TrainConfig tc = cfg.train_config(pyramid_dim(ds.train.front().features));

    std::ofstream log;
    if (!a.log.empty()) {
        log.open(a.log);
        log << "step,loss\n";
    }
    const int every = std::max(1, tc.steps / 10);
    const TrainResult r = train(ds, tc, [&](long long step, double loss) {
        if (log.is_open()) {
            log << step << "," << std::setprecision(17) << loss << "\n";
        }
        if (step % every == 0 || step == tc.steps) {
            std::printf("step %lld loss %.6f\n", step, loss);
        }
    });
    write_checkpoint(a.out, r.state);
    write_text(fs::path(a.out) / "config.json", to_json(cfg) + "\n");
    std::cout << "checkpoint at step " << r.state.step << " -> " << a.out << "\n";
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string dataset;
    std::string split = "eval";
    std::string mode = "one";
    std::vector<ClassId> classes;
    bool json = false;
    bool seen_only = false;
    EvalOptions options;
    ModelOptions model;
};

const std::vector<Scene>& split_of(const Dataset& ds, const std::string& split) {
    return split == "train" ? ds.train : ds.eval;
}

void print_report(const MetricReport& r, bool json) { std::cout << (json ? r.to_json() : r.to_text()); }

void cmd_eval_gfs(const EvalArgs& a) {
    const Dataset ds = read_dataset(a.dataset);
    const auto& scenes = split_of(ds, a.split);
    if (scenes.empty()) {
        throw EpisodeError("eval-gfs: split '" + a.split + "' is empty");
    }
    const ModelParams params = load_params(a.model, pyramid_dim(scenes.front().features));
    ClassRegistry reg = ds.registry;
    if (a.seen_only) {
        reg.unseen.clear();
    }
    EvalOptions opt = a.options;
    opt.n = params.shape.n;
    print_report(evaluate_gfs(scenes, reg, ds.embeddings, params, opt), a.json);
}

void cmd_eval_zfs(const EvalArgs& a) {
    const Dataset ds = read_dataset(a.dataset);
    const auto& scenes = split_of(ds, a.split);
    if (scenes.empty()) {
        throw EpisodeError("eval-zfs: split '" + a.split + "' is empty");
    }
    const ModelParams params = load_params(a.model, pyramid_dim(scenes.front().features));
    std::vector<ClassId> classes = a.classes;
    if (classes.empty()) {
        classes = ds.registry.unseen.empty() ? ds.registry.seen : ds.registry.unseen;
        classes.erase(std::remove(classes.begin(), classes.end(), ds.registry.background), classes.end());
    }
    EvalOptions opt = a.options;
    opt.n = params.shape.n;
    print_report(evaluate_zfs(scenes, ds.registry, classes, ds.embeddings, params, parse_shot_mode(a.mode), opt),
                 a.json);
}

// ---------------------------------------------------------------- grad-check

struct GradArgs {
    std::string episode;
    double h = 1e-5;
    double tol = 1e-4;
    double floor = 1e-6;
    double lambda = 0.01;
    ModelOptions model;
};

void cmd_grad_check(const GradArgs& a) {
    const Episode ep = read_episode(a.episode);
    if (!ep.query_labels) {
        throw EpisodeError("grad-check: the episode needs query labels");
    }
    const ModelParams params = load_params(a.model, pyramid_dim(ep.query));
    const PreparedEpisode prep = prepare_episode(ep, params.shape.n);
    const LossConfig cfg{a.lambda, 1e-8};
    const LossAndGradient lg = episode_loss_and_gradient(prep, params, cfg);

    // Central differences from the two one-sided slopes. A coordinate whose
    // slopes disagree by more than a tenth of their size has a ReLU kink
    // within one step (a smooth coordinate would need curvature above
    // 0.2 / h times its slope); its error is shown but kept out of the verdict.
    std::vector<double> x = params.flatten();
    auto loss_at = [&](const std::vector<double>& v) {
        ModelParams p = params;
        p.assign(v);
        return episode_loss(prep, p, cfg);
    };
    const double f0 = loss_at(x);
    // Round-off scale of a one-sided slope.
    const double noise = 100.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / a.h;
    std::vector<double> fd(x.size());
    std::vector<double> fwds(x.size());
    std::vector<double> bwds(x.size());
    std::vector<char> kink(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + a.h;
        const double fp = loss_at(x);
        x[i] = keep - a.h;
        const double fm = loss_at(x);
        x[i] = keep;
        const double fwd = (fp - f0) / a.h;
        const double bwd = (f0 - fm) / a.h;
        fd[i] = (fp - fm) / (2.0 * a.h);
        fwds[i] = fwd;
        bwds[i] = bwd;
        const double gap = std::abs(fwd - bwd);
        kink[i] = gap > noise && gap > 0.1 * (std::abs(fwd) + std::abs(bwd));
    }

    std::printf("loss %.10f\n%-20s %8s %8s %14s %14s\n", lg.loss, "block", "size", "kinks", "max rel err",
                "smooth only");
    double worst = 0.0;
    double worst_smooth = 0.0;
    std::string worst_at;
    std::size_t kinks = 0;
    for (const auto& block : ModelParams::layout(params.shape)) {
        double e = 0.0;
        double e_smooth = 0.0;
        std::size_t k = 0;
        for (std::size_t i = block.offset; i < block.offset + block.size; ++i) {
            const double r =
                std::abs(lg.gradient[i] - fd[i]) / std::max({std::abs(lg.gradient[i]), std::abs(fd[i]), a.floor});
            e = std::max(e, r);
            if (kink[i]) {
                ++k;
            } else if (r > e_smooth) {
                e_smooth = r;
                if (r > worst_smooth) {
                    char buf[160];
                    std::snprintf(buf, sizeof buf, "%s[%zu] analytic %.6e central %.6e slopes %.6e / %.6e",
                                  block.name.c_str(), i - block.offset, lg.gradient[i], fd[i], bwds[i], fwds[i]);
                    worst_at = buf;
                }
            }
        }
        worst = std::max(worst, e);
        worst_smooth = std::max(worst_smooth, e_smooth);
        kinks += k;
        std::printf("%-20s %8zu %8zu %14.3e %14.3e\n", block.name.c_str(), block.size, k, e, e_smooth);
    }
    if (!worst_at.empty()) {
        std::printf("worst smooth coordinate: %s\n", worst_at.c_str());
    }
    std::printf("max %.3e, smooth coordinates %.3e (limit %.1e), %zu kink coordinates\n", worst, worst_smooth,
                a.tol, kinks);
    if (!(worst_smooth <= a.tol)) {
        throw CheckFailed{"gradient check exceeded the limit"};
    }
}

}  // namespace

int main(int argc, char** argv) {
    retain_freed_memory();

    CLI::App app{"Multi-modal prototype segmentation toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Write a synthetic dataset, sample episode, mask and config");
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--seed", synth.spec.seed, "Generator seed");
    c_synth->add_option("--height", synth.spec.height, "Scene height")->check(CLI::PositiveNumber);
    c_synth->add_option("--width", synth.spec.width, "Scene width")->check(CLI::PositiveNumber);
    c_synth->add_option("--dim", synth.spec.dim, "Feature dimension")->check(CLI::PositiveNumber);
    c_synth->add_option("--levels", synth.spec.levels, "Pyramid levels")->check(CLI::PositiveNumber);
    c_synth->add_option("--noise", synth.spec.noise, "Within-class noise scale")->check(CLI::NonNegativeNumber);
    c_synth->add_option("--train-scenes", synth.spec.train_scenes, "Training scenes");
    c_synth->add_option("--eval-scenes", synth.spec.eval_scenes, "Evaluation scenes");
    c_synth->add_option("--n", synth.n, "Prototypes per modality (descriptions = n - 1)")->check(CLI::PositiveNumber);
    c_synth->callback([&] { synth.spec.descriptions = synth.n - 1; });

    SplitArgs split;
    auto* c_split = app.add_subcommand("split-mask", "Split a PGM mask into n parts");
    c_split->add_option("--mask", split.mask, "Binary PGM mask")->required()->check(CLI::ExistingFile);
    c_split->add_option("--n", split.n, "Number of parts")->check(CLI::PositiveNumber);
    c_split->add_option("--seed", split.seed, "Seed for the first center");
    c_split->add_option("--out", split.out, "Directory for part PGMs");
    c_split->add_option("--method", split.method, "msplit or kmeans")->check(CLI::IsMember({"msplit", "kmeans"}));
    c_split->add_option("--max-iter", split.max_iter, "k-means iteration cap");

    BenchArgs bench;
    auto* c_bench = app.add_subcommand("bench-split", "Time M-Splitting against k-means");
    c_bench->add_option("--mask", bench.mask, "PGM mask (default: centered half-area disk)");
    c_bench->add_option("--size", bench.size, "Side of the default disk mask")->check(CLI::PositiveNumber);
    c_bench->add_option("--n", bench.n, "Number of parts")->check(CLI::PositiveNumber);
    c_bench->add_option("--runs", bench.runs, "Repetitions per method")->check(CLI::PositiveNumber);
    c_bench->add_option("--kmeans-iters", bench.kmeans_iters, "k-means iteration caps")->delimiter(',');
    c_bench->add_option("--seed", bench.seed, "Seed");

    ExtractArgs ext;
    auto* c_ext = app.add_subcommand("extract", "Textual and visual prototypes of one class");
    c_ext->add_option("--features", ext.features, "Feature tensor (h, w, D)");
    c_ext->add_option("--mask", ext.mask, "Support mask PGM at feature resolution");
    c_ext->add_option("--embeddings", ext.embeddings, "Dataset manifest with embedding records");
    c_ext->add_option("--class", ext.class_id, "Class id");
    c_ext->add_option("--n", ext.n, "Visual prototypes")->check(CLI::PositiveNumber);
    c_ext->add_option("--seed", ext.seed, "Splitting seed");
    c_ext->add_option("--out", ext.out, "Output tensor (rows = prototypes)")->required();

    EpisodeArgs fuse;
    auto* c_fuse = app.add_subcommand("fuse", "Fused prototype banks per level for an episode");
    c_fuse->add_option("--episode", fuse.episode, "Episode JSON")->required()->check(CLI::ExistingFile);
    c_fuse->add_option("--out", fuse.out, "Output directory")->required();
    add_model_options(c_fuse, fuse.model);

    EpisodeArgs pred;
    auto* c_pred = app.add_subcommand("predict", "Class probabilities and masks for an episode's query");
    c_pred->add_option("--episode", pred.episode, "Episode JSON")->required()->check(CLI::ExistingFile);
    c_pred->add_option("--out", pred.out, "Output directory")->required();
    add_model_options(c_pred, pred.model);

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Episodic SGD; writes a checkpoint and a loss log");
    c_train->add_option("--config", tr.config, "Run config JSON")->check(CLI::ExistingFile);
    c_train->add_option("--dataset", tr.dataset, "Dataset manifest (overrides the config)");
    c_train->add_option("--out", tr.out, "Checkpoint directory")->required();
    c_train->add_option("--log", tr.log, "Loss log CSV");
    c_train->add_option("--steps", tr.steps, "Override steps");
    c_train->add_option("--seed", tr.seed, "Override seed");

    EvalArgs gfs;
    auto* c_gfs = app.add_subcommand("eval-gfs", "Generalized few-shot metrics over a split");
    EvalArgs zfs;
    auto* c_zfs = app.add_subcommand("eval-zfs", "Zero/few-shot metrics over a split");
    for (auto [cmd, args] : {std::pair{c_gfs, &gfs}, std::pair{c_zfs, &zfs}}) {
        cmd->add_option("--dataset", args->dataset, "Dataset manifest")->required()->check(CLI::ExistingFile);
        cmd->add_option("--split", args->split, "train or eval")->check(CLI::IsMember({"train", "eval"}));
        cmd->add_option("--seed", args->options.seed, "Episode seed");
        cmd->add_flag("--no-background{false}", args->options.include_background, "Leave the background out of mIoU");
        cmd->add_flag("--json", args->json, "JSON report");
        add_model_options(cmd, args->model);
    }
    c_gfs->add_option("--shots", gfs.options.shots, "Support scenes per class")->check(CLI::NonNegativeNumber);
    c_gfs->add_flag("--seen-only", gfs.seen_only, "Score against a registry without unseen classes");
    c_zfs->add_option("--mode", zfs.mode, "zero, one or five")->check(CLI::IsMember({"zero", "one", "five"}));
    c_zfs->add_option("--classes", zfs.classes, "Target classes (default: unseen)")->delimiter(',');

    GradArgs grad;
    auto* c_grad = app.add_subcommand("grad-check", "Analytic gradient against central differences");
    c_grad->add_option("--episode", grad.episode, "Episode JSON with query labels")->required()->check(
        CLI::ExistingFile);
    c_grad->add_option("--step", grad.h, "Difference step");
    c_grad->add_option("--tol", grad.tol, "Largest allowed relative error");
    c_grad->add_option("--floor", grad.floor, "Relative error denominator floor");
    c_grad->add_option("--lambda", grad.lambda, "Intermediate loss weight");
    add_model_options(c_grad, grad.model);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*c_synth) cmd_synth(synth);
        if (*c_split) cmd_split_mask(split);
        if (*c_bench) cmd_bench_split(bench);
        if (*c_ext) cmd_extract(ext);
        if (*c_fuse) cmd_fuse(fuse);
        if (*c_pred) cmd_predict(pred);
        if (*c_train) cmd_train(tr);
        if (*c_gfs) cmd_eval_gfs(gfs);
        if (*c_zfs) {
            zfs.options.shots = shot_count(parse_shot_mode(zfs.mode));
            cmd_eval_zfs(zfs);
        }
        if (*c_grad) cmd_grad_check(grad);
    } catch (const CheckFailed& e) {
        std::cerr << "mproto: " << e.what << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "mproto: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "mproto: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
