#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mproto/episode.hpp"
#include "mproto/fusion.hpp"
#include "mproto/prediction.hpp"

namespace mproto {

struct ModelShape {
    int n = 3;        // prototypes per modality
    int levels = 3;   // pyramid levels L
    int width = 8;    // fusion width d
    int dim = 0;      // feature dim D

    bool operator==(const ModelShape&) const = default;
};

/// Named contiguous range of the flattened parameter vector.
struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Every learnable: the fusion penalty, slot weights, the residual level
/// fusion and the background's textual prototypes.
struct ModelParams {
    ModelShape shape;
    FusionParams fusion;
    PredictionParams prediction;
    Matrix background_text;  // n x D

    /// Slot weights 1, alpha 1, orthogonal level weights scaled by 0.1,
    /// zero biases and zero background prototypes.
    static ModelParams initialize(const ModelShape& shape, std::uint64_t seed);
    /// All-zero parameters of the given shape (gradient accumulator).
    static ModelParams zeros(const ModelShape& shape);

    static std::vector<ParamBlock> layout(const ModelShape& shape);
    std::size_t parameter_count() const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
};

/// Support-derived constants of an episode: everything the forward pass needs
/// that does not depend on learnable parameters.
struct PreparedEpisode {
    struct ShotLevel {
        Matrix visual;   // visual prototypes, slot order
        Matrix cells;    // support feature cells, h*w x D
        SoftMask mask;   // class (or background) mask pooled to the level grid
    };
    struct ClassSupport {
        ClassId id = 0;
        bool is_background = false;
        Matrix text;  // textual prototypes; empty for the background
        /// [level][shot]; empty when the class has no visual support.
        std::vector<std::vector<ShotLevel>> shots;
    };

    int n = 0;
    std::vector<ClassSupport> classes;  // bank order, background first
    FeaturePyramid query;
    int out_height = 0;
    int out_width = 0;
    /// Ground truth as bank class indices (empty when unlabeled).
    std::vector<int> target;

    std::vector<ClassId> class_ids() const;
};

/// Splits masks, extracts visual and textual prototypes, and maps ground truth
/// into bank order. Classes with neither text nor a support shot are left out.
PreparedEpisode prepare_episode(const Episode& episode, int n);

/// Caches of one biased-attention fusion call.
struct FusionCall {
    Matrix queries;
    Matrix keys;
    Matrix bias;
    Matrix weights;
};

struct EpisodeForward {
    std::vector<PrototypeBank> banks;  // per level
    /// [level][class][shot]
    std::vector<std::vector<std::vector<FusionCall>>> fusion_calls;
    /// Per level pixel x entry attention at the level grid.
    std::vector<Matrix> attention;
    /// Per level class maps at the level grid.
    std::vector<ClassProbMap> level_maps;
    FullPrediction prediction;
};

/// Builds the per-level banks from prepared support and params.
std::vector<PrototypeBank> build_banks(const PreparedEpisode& episode, const ModelParams& params,
                                       std::vector<std::vector<std::vector<FusionCall>>>* calls = nullptr);

EpisodeForward forward_episode(const PreparedEpisode& episode, const ModelParams& params);

}  // namespace mproto
