#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mproto/episode.hpp"
#include "mproto/model.hpp"

namespace mproto {

/// Intersection and union pixel counts per class, summed over images.
class IouAccumulator {
public:
    /// Counts every class in `classes` on one prediction/ground-truth pair.
    void add(const std::vector<ClassId>& pred, const std::vector<ClassId>& gt, const std::vector<ClassId>& classes);
    void merge(const IouAccumulator& other);

    /// IoU for each class whose union is non-empty.
    std::map<ClassId, double> iou() const;

private:
    std::map<ClassId, std::pair<long long, long long>> counts_;
};

/// |pred ∩ gt| / |pred ∪ gt| per class; classes absent from both are omitted.
std::map<ClassId, double> iou_per_class(const std::vector<ClassId>& pred, const std::vector<ClassId>& gt,
                                        const std::vector<ClassId>& classes);

double harmonic_iou(double seen, double unseen);

struct MetricReport {
    std::map<ClassId, double> per_class_iou;
    std::optional<double> seen_miou;
    std::optional<double> unseen_miou;
    /// Present when both folds are present.
    std::optional<double> hiou;

    /// key=value lines, values scaled by 100.
    std::string to_text() const;
    /// JSON document, values scaled by 100.
    std::string to_json() const;
};

/// Fold means and their harmonic mean. Classes outside the registry are kept
/// in per_class_iou but join no fold.
MetricReport summarize(const std::map<ClassId, double>& per_class, const ClassRegistry& registry,
                       bool include_background = true);

enum class ShotMode { zero, one, five };

int shot_count(ShotMode mode);
ShotMode parse_shot_mode(const std::string& s);
std::string to_string(ShotMode mode);

struct ZfsResult {
    ClassId target = 0;
    BinaryMask mask;          // on the output grid
    ClassProbMap probs;       // [background, target]
    std::optional<double> iou;
    long long intersection = 0;
    long long uni = 0;
};

/// Binary prediction for the episode's single target class.
ZfsResult run_zfs_episode(const Episode& episode, const ModelParams& params, ShotMode mode);

struct GfsResult {
    std::vector<ClassId> bank_classes;
    ClassProbMap probs;                 // over bank_classes
    std::vector<ClassId> prediction;    // class id per output pixel
    std::optional<MetricReport> report;
};

/// One forward pass over every supported class plus the background. Classes
/// without prototypes never get predicted; ground-truth classes of the
/// registry still count.
GfsResult run_gfs_episode(const Episode& episode, const ModelParams& params, const ClassRegistry& registry,
                          bool include_background = true);

/// Z/FS episode: target class c in scene `query`, support scenes as shots
/// annotating only c.
Episode make_zfs_episode(const std::vector<Scene>& scenes, std::size_t query, ClassId target,
                         const std::vector<std::size_t>& supports, const std::map<ClassId, EmbeddingRecord>& texts,
                         ClassId background, std::uint64_t seed);

/// GFS episode over `classes`: each class gets its own support scenes, each shot
/// annotating every listed class present.
Episode make_gfs_episode(const std::vector<Scene>& scenes, std::size_t query, const std::vector<ClassId>& classes,
                         const std::map<ClassId, std::vector<std::size_t>>& supports,
                         const std::map<ClassId, EmbeddingRecord>& texts, ClassId background, std::uint64_t seed);

struct EvalOptions {
    int n = 3;
    int shots = 1;
    std::uint64_t seed = 0;
    bool include_background = true;
};

/// GFS over every scene as a query; each registry class present in some other
/// scene with at least n pixels is supported. IoU is accumulated over scenes.
MetricReport evaluate_gfs(const std::vector<Scene>& scenes, const ClassRegistry& registry,
                          const std::map<ClassId, EmbeddingRecord>& texts, const ModelParams& params,
                          const EvalOptions& options);

/// Z/FS over every (query scene, class) pair for the given classes; IoU of a
/// class is accumulated over its episodes.
MetricReport evaluate_zfs(const std::vector<Scene>& scenes, const ClassRegistry& registry,
                          const std::vector<ClassId>& classes, const std::map<ClassId, EmbeddingRecord>& texts,
                          const ModelParams& params, ShotMode mode, const EvalOptions& options);

}  // namespace mproto
