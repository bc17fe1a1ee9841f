#pragma once

#include <cstdint>
#include <vector>

#include "mproto/mask_partition.hpp"
#include "mproto/numerics.hpp"

namespace mproto {

using ClassId = int;

/// Dense encoder output: one D-vector per grid cell, stored as an
/// (height*width) x dim matrix in row-major cell order.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int height, int width, Matrix cells);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int dim() const noexcept { return static_cast<int>(cells_.cols()); }
    std::size_t cell_count() const noexcept { return cells_.rows(); }

    const Matrix& cells() const noexcept { return cells_; }
    Matrix& cells() noexcept { return cells_; }
    std::span<const double> cell(int y, int x) const noexcept {
        return cells_.row(static_cast<std::size_t>(y) * width_ + x);
    }

private:
    int height_ = 0;
    int width_ = 0;
    Matrix cells_;
};

/// Feature maps ordered from the deepest (coarsest) level to the finest.
using FeaturePyramid = std::vector<FeatureMap>;

/// Mask pooled to a feature grid; weights in [0,1], row-major.
struct SoftMask {
    int height = 0;
    int width = 0;
    std::vector<double> weights;

    double at(int y, int x) const noexcept { return weights[static_cast<std::size_t>(y) * width + x]; }
    double total() const noexcept;
};

enum class Modality { textual, visual };

/// Ordered prototypes of one class. Textual slot 0 is the class-name embedding.
struct PrototypeSet {
    struct Entry {
        std::vector<double> vector;
        Modality modality = Modality::visual;
        int slot = 0;
    };

    ClassId class_id = 0;
    std::vector<Entry> entries;

    std::size_t size() const noexcept { return entries.size(); }
    int dim() const noexcept { return entries.empty() ? 0 : static_cast<int>(entries.front().vector.size()); }
    /// Vectors of one modality stacked in entry order (0 x dim when absent).
    Matrix matrix(Modality modality) const;
    std::size_t count(Modality modality) const noexcept;
};

/// Encoder outputs for one class: the name embedding plus description embeddings.
struct EmbeddingRecord {
    ClassId class_id = 0;
    std::vector<double> name_embedding;
    /// (n-1) x D, possibly zero rows.
    Matrix description_embeddings;
};

/// Area-weighted pooling of a pixel mask onto an h x w grid. Each output cell
/// covers a (possibly fractional) box of pixels; its weight is the covered
/// foreground area over the box area.
SoftMask downsample_mask(const BinaryMask& mask, int height, int width);

/// The same area pooling applied to every feature channel.
FeatureMap downsample_features(const FeatureMap& features, int height, int width);

/// Mask-weighted mean of cell features, weights normalized to sum to one.
std::vector<double> masked_mean_prototype(const FeatureMap& features, const SoftMask& mask);

/// One prototype per part of an existing pixel-level partition, in part order.
PrototypeSet visual_prototypes_from_partition(const FeatureMap& features, const Partition& partition,
                                              ClassId class_id = 0);

/// M-Splitting at pixel resolution, then one masked mean per part.
PrototypeSet visual_prototypes(const FeatureMap& features, const BinaryMask& mask, int n, std::uint64_t seed,
                               ClassId class_id = 0);

PrototypeSet textual_prototypes(const EmbeddingRecord& record);

}  // namespace mproto
