#include "mproto/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mproto/error.hpp"
#include "mproto/parallel.hpp"

namespace mproto {

void IouAccumulator::add(const std::vector<ClassId>& pred, const std::vector<ClassId>& gt,
                         const std::vector<ClassId>& classes) {
    if (pred.size() != gt.size()) {
        throw ShapeError("iou: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                         std::to_string(gt.size()));
    }
    for (ClassId c : classes) {
        long long inter = 0;
        long long uni = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool p = pred[i] == c;
            const bool g = gt[i] == c;
            inter += (p && g) ? 1 : 0;
            uni += (p || g) ? 1 : 0;
        }
        auto& [ci, cu] = counts_[c];
        ci += inter;
        cu += uni;
    }
}

void IouAccumulator::merge(const IouAccumulator& other) {
    for (const auto& [c, iu] : other.counts_) {
        auto& [ci, cu] = counts_[c];
        ci += iu.first;
        cu += iu.second;
    }
}

std::map<ClassId, double> IouAccumulator::iou() const {
    std::map<ClassId, double> out;
    for (const auto& [c, iu] : counts_) {
        if (iu.second > 0) {
            out[c] = static_cast<double>(iu.first) / static_cast<double>(iu.second);
        }
    }
    return out;
}

std::map<ClassId, double> iou_per_class(const std::vector<ClassId>& pred, const std::vector<ClassId>& gt,
                                        const std::vector<ClassId>& classes) {
    IouAccumulator acc;
    acc.add(pred, gt, classes);
    return acc.iou();
}

double harmonic_iou(double seen, double unseen) {
    const double s = seen + unseen;
    return s > 0.0 ? 2.0 * seen * unseen / s : 0.0;
}

namespace {

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * v;
    return os.str();
}

}  // namespace

std::string MetricReport::to_text() const {
    std::ostringstream os;
    for (const auto& [c, v] : per_class_iou) {
        os << "iou." << c << "=" << pct(v) << "\n";
    }
    os << "seen_miou=" << (seen_miou ? pct(*seen_miou) : "absent") << "\n";
    os << "unseen_miou=" << (unseen_miou ? pct(*unseen_miou) : "absent") << "\n";
    os << "hiou=" << (hiou ? pct(*hiou) : "absent") << "\n";
    return os.str();
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [c, v] : per_class_iou) {
        per[std::to_string(c)] = 100.0 * v;
    }
    j["per_class_iou"] = per;
    j["seen_miou"] = seen_miou ? nlohmann::ordered_json(100.0 * *seen_miou) : nlohmann::ordered_json(nullptr);
    j["unseen_miou"] = unseen_miou ? nlohmann::ordered_json(100.0 * *unseen_miou) : nlohmann::ordered_json(nullptr);
    j["hiou"] = hiou ? nlohmann::ordered_json(100.0 * *hiou) : nlohmann::ordered_json(nullptr);
    return j.dump(2);
}

MetricReport summarize(const std::map<ClassId, double>& per_class, const ClassRegistry& registry,
                       bool include_background) {
    MetricReport report;
    report.per_class_iou = per_class;
    auto fold_mean = [&](const std::vector<ClassId>& fold) -> std::optional<double> {
        double total = 0.0;
        int count = 0;
        for (ClassId c : fold) {
            if (!include_background && c == registry.background) {
                continue;
            }
            if (auto it = per_class.find(c); it != per_class.end()) {
                if (!(it->second >= 0.0 && it->second <= 1.0)) {
                    throw SpecError("summarize: IoU of class " + std::to_string(c) + " outside [0,1]");
                }
                total += it->second;
                ++count;
            }
        }
        if (count == 0) {
            return std::nullopt;
        }
        return total / count;
    };
    report.seen_miou = fold_mean(registry.seen);
    report.unseen_miou = fold_mean(registry.unseen);
    if (report.seen_miou && report.unseen_miou) {
        report.hiou = harmonic_iou(*report.seen_miou, *report.unseen_miou);
    }
    return report;
}

int shot_count(ShotMode mode) {
    switch (mode) {
        case ShotMode::zero: return 0;
        case ShotMode::one: return 1;
        case ShotMode::five: return 5;
    }
    return 0;
}

ShotMode parse_shot_mode(const std::string& s) {
    if (s == "zero" || s == "0") {
        return ShotMode::zero;
    }
    if (s == "one" || s == "1") {
        return ShotMode::one;
    }
    if (s == "five" || s == "5") {
        return ShotMode::five;
    }
    throw ConfigError("unknown shot mode '" + s + "' (expected zero, one or five)");
}

std::string to_string(ShotMode mode) {
    switch (mode) {
        case ShotMode::zero: return "zero";
        case ShotMode::one: return "one";
        case ShotMode::five: return "five";
    }
    return "zero";
}

namespace {

std::vector<ClassId> bank_prediction(const ClassProbMap& probs, const std::vector<ClassId>& ids) {
    std::vector<ClassId> out;
    out.reserve(probs.pixel_count());
    for (int idx : probs.argmax()) {
        out.push_back(ids[static_cast<std::size_t>(idx)]);
    }
    return out;
}

}  // namespace

ZfsResult run_zfs_episode(const Episode& episode, const ModelParams& params, ShotMode mode) {
    std::vector<ClassId> targets;
    for (ClassId c : episode.classes) {
        if (c != episode.background) {
            targets.push_back(c);
        }
    }
    if (targets.size() != 1) {
        throw EpisodeError("run_zfs_episode: expected exactly one target class, got " +
                           std::to_string(targets.size()));
    }
    const ClassId target = targets.front();
    int shots = 0;
    for (const auto& shot : episode.shots) {
        shots += std::count(shot.targets.begin(), shot.targets.end(), target) > 0 ? 1 : 0;
    }
    if (shots != shot_count(mode)) {
        throw EpisodeError("run_zfs_episode: " + to_string(mode) + "-shot mode needs " +
                           std::to_string(shot_count(mode)) + " support shots for class " + std::to_string(target) +
                           ", got " + std::to_string(shots));
    }
    if (mode == ShotMode::zero && !episode.texts.count(target)) {
        throw EpisodeError("run_zfs_episode: zero-shot needs an embedding record for class " +
                           std::to_string(target));
    }

    const PreparedEpisode prep = prepare_episode(episode, params.shape.n);
    const EpisodeForward fwd = forward_episode(prep, params);

    ZfsResult result;
    result.target = target;
    result.probs = fwd.prediction.final;
    const auto pred = bank_prediction(result.probs, prep.class_ids());
    result.mask = BinaryMask(prep.out_height, prep.out_width);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == target) {
            result.mask.set(static_cast<int>(i) / prep.out_width, static_cast<int>(i) % prep.out_width, true);
        }
    }
    if (episode.query_labels) {
        const auto& gt = episode.query_labels->labels;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool p = pred[i] == target;
            const bool g = gt[i] == target;
            result.intersection += (p && g) ? 1 : 0;
            result.uni += (p || g) ? 1 : 0;
        }
        result.iou = result.uni > 0 && result.intersection > 0
                         ? static_cast<double>(result.intersection) / static_cast<double>(result.uni)
                         : 0.0;
    }
    return result;
}

GfsResult run_gfs_episode(const Episode& episode, const ModelParams& params, const ClassRegistry& registry,
                          bool include_background) {
    const PreparedEpisode prep = prepare_episode(episode, params.shape.n);
    const EpisodeForward fwd = forward_episode(prep, params);
    GfsResult result;
    result.bank_classes = prep.class_ids();
    result.probs = fwd.prediction.final;
    result.prediction = bank_prediction(result.probs, result.bank_classes);
    if (episode.query_labels) {
        result.report = summarize(iou_per_class(result.prediction, episode.query_labels->labels, registry.all()),
                                  registry, include_background);
    }
    return result;
}

Episode make_zfs_episode(const std::vector<Scene>& scenes, std::size_t query, ClassId target,
                         const std::vector<std::size_t>& supports, const std::map<ClassId, EmbeddingRecord>& texts,
                         ClassId background, std::uint64_t seed) {
    Episode ep;
    ep.background = background;
    ep.classes = {target};
    if (auto it = texts.find(target); it != texts.end()) {
        ep.texts.emplace(target, it->second);
    }
    for (std::size_t s : supports) {
        ep.shots.push_back(make_shot(scenes.at(s), {target}, {target}));
    }
    const Scene& q = scenes.at(query);
    ep.query = q.features;
    ep.query_labels = q.labels;
    ep.out_height = q.labels.height;
    ep.out_width = q.labels.width;
    ep.seed = seed;
    return ep;
}

Episode make_gfs_episode(const std::vector<Scene>& scenes, std::size_t query, const std::vector<ClassId>& classes,
                         const std::map<ClassId, std::vector<std::size_t>>& supports,
                         const std::map<ClassId, EmbeddingRecord>& texts, ClassId background, std::uint64_t seed) {
    Episode ep;
    ep.background = background;
    ep.classes = classes;
    for (ClassId c : classes) {
        if (auto it = texts.find(c); it != texts.end()) {
            ep.texts.emplace(c, it->second);
        }
    }
    for (ClassId c : classes) {
        auto it = supports.find(c);
        if (it == supports.end()) {
            continue;
        }
        for (std::size_t s : it->second) {
            ep.shots.push_back(make_shot(scenes.at(s), classes, {c}));
        }
    }
    const Scene& q = scenes.at(query);
    ep.query = q.features;
    ep.query_labels = q.labels;
    ep.out_height = q.labels.height;
    ep.out_width = q.labels.width;
    ep.seed = seed;
    return ep;
}

namespace {

std::vector<std::size_t> pick_supports(const std::vector<Scene>& scenes, ClassId c, std::size_t query, int n,
                                       int shots, std::uint64_t seed) {
    std::vector<std::size_t> pool;
    for (std::size_t i : scenes_with(scenes, c, query)) {
        if (scenes[i].labels.count(c) >= static_cast<std::size_t>(n)) {
            pool.push_back(i);
        }
    }
    if (pool.size() < static_cast<std::size_t>(shots)) {
        return {};
    }
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(shots));
    return pool;
}

}  // namespace

MetricReport evaluate_gfs(const std::vector<Scene>& scenes, const ClassRegistry& registry,
                          const std::map<ClassId, EmbeddingRecord>& texts, const ModelParams& params,
                          const EvalOptions& options) {
    registry.validate();
    std::vector<ClassId> classes;
    for (ClassId c : registry.all()) {
        if (c != registry.background) {
            classes.push_back(c);
        }
    }
    std::vector<IouAccumulator> per_query(scenes.size());
    parallel_for(scenes.size(), [&](std::size_t q) {
        std::map<ClassId, std::vector<std::size_t>> supports;
        for (ClassId c : classes) {
            auto picked = pick_supports(scenes, c, q, options.n, options.shots, split_seed(options.seed, q, c));
            if (!picked.empty()) {
                supports.emplace(c, std::move(picked));
            }
        }
        const Episode ep = make_gfs_episode(scenes, q, classes, supports, texts, registry.background,
                                            split_seed(options.seed, q, registry.background));
        const GfsResult r = run_gfs_episode(ep, params, registry, options.include_background);
        per_query[q].add(r.prediction, scenes[q].labels.labels, registry.all());
    });
    IouAccumulator total;
    for (const auto& acc : per_query) {
        total.merge(acc);
    }
    return summarize(total.iou(), registry, options.include_background);
}

MetricReport evaluate_zfs(const std::vector<Scene>& scenes, const ClassRegistry& registry,
                          const std::vector<ClassId>& classes, const std::map<ClassId, EmbeddingRecord>& texts,
                          const ModelParams& params, ShotMode mode, const EvalOptions& options) {
    struct Job {
        std::size_t query;
        ClassId target;
        std::vector<std::size_t> supports;
    };
    std::vector<Job> jobs;
    const int shots = shot_count(mode);
    for (ClassId c : classes) {
        for (std::size_t q : scenes_with(scenes, c)) {
            std::vector<std::size_t> supports;
            if (shots > 0) {
                supports = pick_supports(scenes, c, q, options.n, shots, split_seed(options.seed, q, c));
                if (supports.empty()) {
                    continue;
                }
            } else if (!texts.count(c)) {
                continue;
            }
            jobs.push_back({q, c, std::move(supports)});
        }
    }
    std::vector<std::pair<long long, long long>> counts(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t j) {
        const Job& job = jobs[j];
        const Episode ep = make_zfs_episode(scenes, job.query, job.target, job.supports, texts, registry.background,
                                            split_seed(options.seed, job.query, job.target));
        const ZfsResult r = run_zfs_episode(ep, params, mode);
        counts[j] = {r.intersection, r.uni};
    });
    std::map<ClassId, std::pair<long long, long long>> per_class;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        auto& [i, u] = per_class[jobs[j].target];
        i += counts[j].first;
        u += counts[j].second;
    }
    std::map<ClassId, double> iou;
    for (const auto& [c, iu] : per_class) {
        if (iu.second > 0) {
            iou[c] = static_cast<double>(iu.first) / static_cast<double>(iu.second);
        }
    }
    return summarize(iou, registry, options.include_background);
}

}  // namespace mproto
