#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mproto/mask_partition.hpp"
#include "mproto/prototypes.hpp"

namespace mproto {

/// Per-pixel class ids on a pixel grid.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<ClassId> labels;

    ClassId at(int y, int x) const noexcept { return labels[static_cast<std::size_t>(y) * width + x]; }
    BinaryMask mask_of(ClassId c) const;
    std::size_t count(ClassId c) const noexcept;
    bool contains(ClassId c) const noexcept { return count(c) > 0; }
};

/// Seen and unseen class ids; the background is a seen class.
struct ClassRegistry {
    std::vector<ClassId> seen;
    std::vector<ClassId> unseen;
    ClassId background = 0;

    /// Throws SpecError when the folds overlap or the background is not seen.
    void validate() const;
    bool is_seen(ClassId c) const noexcept;
    bool is_unseen(ClassId c) const noexcept;
    /// Seen then unseen, excluding nothing.
    std::vector<ClassId> all() const;
};

/// One annotated support image.
struct SupportShot {
    FeaturePyramid features;
    /// Every annotation known for this image; their union bounds the background.
    std::map<ClassId, BinaryMask> masks;
    /// Classes whose visual prototypes this shot supplies.
    std::vector<ClassId> targets;
};

/// Everything one forward pass needs.
struct Episode {
    ClassId background = 0;
    /// Candidate foreground classes in bank order (the background goes first).
    std::vector<ClassId> classes;
    std::map<ClassId, EmbeddingRecord> texts;
    std::vector<SupportShot> shots;
    FeaturePyramid query;
    int out_height = 0;
    int out_width = 0;
    std::optional<LabelMap> query_labels;
    /// Seeds mask splitting; each (shot, class) pair derives its own stream.
    std::uint64_t seed = 0;
};

/// A scene with encoder features and a full ground-truth label map.
struct Scene {
    std::string id;
    FeaturePyramid features;
    LabelMap labels;
};

struct Dataset {
    ClassRegistry registry;
    std::map<ClassId, EmbeddingRecord> embeddings;
    std::vector<Scene> train;
    std::vector<Scene> eval;
};

/// Deterministic per-(shot, class) seed for mask splitting.
std::uint64_t split_seed(std::uint64_t episode_seed, std::size_t shot, ClassId class_id);

/// Support shot from a scene, annotating each listed class present in it.
SupportShot make_shot(const Scene& scene, const std::vector<ClassId>& annotate, const std::vector<ClassId>& targets);

/// Indices of scenes containing class c, excluding `skip`.
std::vector<std::size_t> scenes_with(const std::vector<Scene>& scenes, ClassId c,
                                     std::optional<std::size_t> skip = std::nullopt);

}  // namespace mproto
