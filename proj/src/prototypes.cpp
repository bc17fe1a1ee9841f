#include "mproto/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mproto/error.hpp"

namespace mproto {

FeatureMap::FeatureMap(int height, int width, Matrix cells) : height_(height), width_(width), cells_(std::move(cells)) {
    if (height < 1 || width < 1) {
        throw ShapeError("FeatureMap: grid must be at least 1x1");
    }
    if (cells_.rows() != static_cast<std::size_t>(height) * width) {
        throw ShapeError("FeatureMap: " + std::to_string(cells_.rows()) + " cells for a " + std::to_string(height) +
                         "x" + std::to_string(width) + " grid");
    }
}

double SoftMask::total() const noexcept {
    return std::accumulate(weights.begin(), weights.end(), 0.0);
}

Matrix PrototypeSet::matrix(Modality modality) const {
    const std::size_t rows = count(modality);
    Matrix out(rows, static_cast<std::size_t>(dim()));
    std::size_t r = 0;
    for (const auto& e : entries) {
        if (e.modality == modality) {
            std::copy(e.vector.begin(), e.vector.end(), out.row(r).begin());
            ++r;
        }
    }
    return out;
}

std::size_t PrototypeSet::count(Modality modality) const noexcept {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const Entry& e) { return e.modality == modality; }));
}

namespace {

struct Overlap {
    int src = 0;
    double weight = 0.0;
};

// For each destination index, the source indices it covers and the fraction
// of the destination box each one occupies.
std::vector<std::vector<Overlap>> area_weights(int src_len, int dst_len) {
    std::vector<std::vector<Overlap>> out(static_cast<std::size_t>(dst_len));
    const double step = static_cast<double>(src_len) / dst_len;
    for (int i = 0; i < dst_len; ++i) {
        const double lo = i * step;
        const double hi = (i + 1) * step;
        for (int k = static_cast<int>(std::floor(lo)); k < src_len && k < hi; ++k) {
            const double overlap = std::min(hi, k + 1.0) - std::max(lo, static_cast<double>(k));
            if (overlap > 0.0) {
                out[static_cast<std::size_t>(i)].push_back({k, overlap / step});
            }
        }
    }
    return out;
}

void check_target(int src_h, int src_w, int height, int width, const char* op) {
    if (height < 1 || width < 1) {
        throw ShapeError(std::string(op) + ": target grid must be at least 1x1");
    }
    if (height > src_h || width > src_w) {
        throw ShapeError(std::string(op) + ": cannot upsample " + std::to_string(src_h) + "x" +
                         std::to_string(src_w) + " to " + std::to_string(height) + "x" + std::to_string(width));
    }
}

}  // namespace

SoftMask downsample_mask(const BinaryMask& mask, int height, int width) {
    check_target(mask.height(), mask.width(), height, width, "downsample_mask");
    const auto rows = area_weights(mask.height(), height);
    const auto cols = area_weights(mask.width(), width);
    SoftMask out{height, width, std::vector<double>(static_cast<std::size_t>(height) * width, 0.0)};
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            double acc = 0.0;
            for (const auto& r : rows[static_cast<std::size_t>(i)]) {
                for (const auto& c : cols[static_cast<std::size_t>(j)]) {
                    if (mask.at(r.src, c.src)) {
                        acc += r.weight * c.weight;
                    }
                }
            }
            out.weights[static_cast<std::size_t>(i) * width + j] = std::clamp(acc, 0.0, 1.0);
        }
    }
    return out;
}

FeatureMap downsample_features(const FeatureMap& features, int height, int width) {
    check_target(features.height(), features.width(), height, width, "downsample_features");
    const auto rows = area_weights(features.height(), height);
    const auto cols = area_weights(features.width(), width);
    const auto dim = static_cast<std::size_t>(features.dim());
    Matrix cells(static_cast<std::size_t>(height) * width, dim);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            auto out = cells.row(static_cast<std::size_t>(i) * width + j);
            for (const auto& r : rows[static_cast<std::size_t>(i)]) {
                for (const auto& c : cols[static_cast<std::size_t>(j)]) {
                    const double w = r.weight * c.weight;
                    const auto src = features.cell(r.src, c.src);
                    for (std::size_t d = 0; d < dim; ++d) {
                        out[d] += w * src[d];
                    }
                }
            }
        }
    }
    return FeatureMap(height, width, std::move(cells));
}

std::vector<double> masked_mean_prototype(const FeatureMap& features, const SoftMask& mask) {
    if (features.height() != mask.height || features.width() != mask.width) {
        throw ShapeError("masked_mean_prototype: mask grid " + std::to_string(mask.height) + "x" +
                         std::to_string(mask.width) + " does not match features " +
                         std::to_string(features.height()) + "x" + std::to_string(features.width()));
    }
    const double total = mask.total();
    if (!(total > 0.0)) {
        throw EmptySupportError("masked_mean_prototype: mask has zero total weight");
    }
    const auto dim = static_cast<std::size_t>(features.dim());
    std::vector<double> proto(dim, 0.0);
    for (std::size_t cell = 0; cell < features.cell_count(); ++cell) {
        const double w = mask.weights[cell];
        if (w == 0.0) {
            continue;
        }
        const double omega = w / total;
        const auto f = features.cells().row(cell);
        for (std::size_t d = 0; d < dim; ++d) {
            proto[d] += omega * f[d];
        }
    }
    return proto;
}

PrototypeSet visual_prototypes_from_partition(const FeatureMap& features, const Partition& partition,
                                              ClassId class_id) {
    PrototypeSet set;
    set.class_id = class_id;
    set.entries.reserve(partition.parts.size());
    int slot = 0;
    for (const auto& part : partition.parts) {
        const SoftMask pooled = downsample_mask(part, features.height(), features.width());
        set.entries.push_back({masked_mean_prototype(features, pooled), Modality::visual, slot++});
    }
    return set;
}

PrototypeSet visual_prototypes(const FeatureMap& features, const BinaryMask& mask, int n, std::uint64_t seed,
                               ClassId class_id) {
    return visual_prototypes_from_partition(features, m_splitting(mask, n, seed), class_id);
}

PrototypeSet textual_prototypes(const EmbeddingRecord& record) {
    const std::size_t dim = record.name_embedding.size();
    if (record.description_embeddings.rows() > 0 && record.description_embeddings.cols() != dim) {
        throw ShapeError("textual_prototypes: description dim " +
                         std::to_string(record.description_embeddings.cols()) + " != name dim " +
                         std::to_string(dim));
    }
    PrototypeSet set;
    set.class_id = record.class_id;
    set.entries.push_back({record.name_embedding, Modality::textual, 0});
    for (std::size_t r = 0; r < record.description_embeddings.rows(); ++r) {
        const auto row = record.description_embeddings.row(r);
        set.entries.push_back({std::vector<double>(row.begin(), row.end()), Modality::textual, static_cast<int>(r + 1)});
    }
    return set;
}

}  // namespace mproto
