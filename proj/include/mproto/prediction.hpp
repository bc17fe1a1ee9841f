#pragma once

#include <vector>

#include "mproto/fusion.hpp"
#include "mproto/numerics.hpp"
#include "mproto/prototypes.hpp"

namespace mproto {

/// All prototypes competing in one forward pass.
///
/// Entries carry the index of their class in `classes` and a slot into the
/// per-slot weights: textual slot s maps to s, visual slot k to n + k.
struct PrototypeBank {
    struct Entry {
        int class_index = 0;
        int slot = 0;
    };

    std::vector<ClassId> classes;
    std::vector<Entry> entries;
    Matrix vectors;

    std::size_t class_count() const noexcept { return classes.size(); }
    std::size_t entry_count() const noexcept { return entries.size(); }
    /// entries x classes one-hot membership.
    Matrix labels() const;

    /// Concatenates fused sets in the given class order. `n` is the number of
    /// textual slots reserved before the visual ones.
    static PrototypeBank from_fused(const std::vector<FusedPrototypes>& per_class, int n);
};

/// Weights of the residual multi-level fusion, one W and b per level.
struct LevelFusion {
    std::vector<double> w_in;              // d
    std::vector<Matrix> w;                 // L of d x d
    std::vector<std::vector<double>> b;    // L of d
    std::vector<double> w_out;             // d

    std::size_t levels() const noexcept { return w.size(); }
    std::size_t width() const noexcept { return w_in.size(); }
};

struct PredictionParams {
    std::vector<double> w_p;  // 2n
    LevelFusion fusion;
};

/// Row-stochastic pixel x class probabilities on a height x width grid.
struct ClassProbMap {
    int height = 0;
    int width = 0;
    Matrix probs;

    std::size_t pixel_count() const noexcept { return probs.rows(); }
    std::size_t class_count() const noexcept { return probs.cols(); }
    /// Per-pixel index of the most probable class, ties to the lower index.
    std::vector<int> argmax() const;
};

/// Joint softmax over every bank entry per pixel, with logits
/// f . (w_slot * p) / sqrt(D); a class's probability is the summed mass of
/// its entries.
ClassProbMap predict_class_probs(const PrototypeBank& bank, const std::vector<double>& w_p,
                                 const FeatureMap& query);

/// Same as predict_class_probs, also returning the pixel x entry attention.
ClassProbMap predict_class_probs(const PrototypeBank& bank, const std::vector<double>& w_p,
                                 const FeatureMap& query, Matrix& attention);

/// Sums attention mass per class by walking entries.
Matrix group_by_class(const Matrix& attention, const PrototypeBank& bank);

struct PredictionGrad {
    std::vector<double> d_w_p;
    Matrix d_vectors;  // entries x D
};

PredictionGrad predict_class_probs_backward(const PrototypeBank& bank, const std::vector<double>& w_p,
                                            const FeatureMap& query, const Matrix& attention,
                                            const Matrix& d_probs);

/// Residual fusion of per-level class maps (each pixels x classes, level 1 the
/// deepest) into one scalar logit per pixel and class:
///   o_1 = ReLU(W_1 W_in y^1 + b_1)
///   o_l = ReLU(W_l o_{l-1} + b_l) + W_in y^l
///   out = W_out . o_L
Matrix multi_level_fuse(const std::vector<Matrix>& levels, const LevelFusion& fusion);

struct LevelFusionGrad {
    std::vector<Matrix> d_levels;
    LevelFusion d_params;
};

LevelFusionGrad multi_level_fuse_backward(const std::vector<Matrix>& levels, const LevelFusion& fusion,
                                          const Matrix& d_out);

/// Nearest-neighbour resampling of a pixels x classes map between grids.
Matrix resample_nearest(const Matrix& map, int src_h, int src_w, int dst_h, int dst_w);
/// Adjoint of resample_nearest: scatter-adds into the source grid.
Matrix resample_nearest_adjoint(const Matrix& d_map, int src_h, int src_w, int dst_h, int dst_w);

struct FullPrediction {
    ClassProbMap final;
    /// Per-level maps resampled to the output grid, level 1 first.
    std::vector<ClassProbMap> levels;
    /// Fused scalar logits before the class softmax.
    Matrix logits;
};

/// Per-level prediction, resampling to out_h x out_w, residual fusion and a
/// class softmax.
FullPrediction forward_full(const FeaturePyramid& query, const std::vector<PrototypeBank>& banks,
                            const PredictionParams& params, int out_h, int out_w);

}  // namespace mproto
