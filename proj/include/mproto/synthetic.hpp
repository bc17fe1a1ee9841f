#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mproto/episode.hpp"

namespace mproto {

/// One synthetic scene: foreground classes sit in axis-aligned rectangles, one
/// per image quadrant, on a background field.
struct SyntheticSceneSpec {
    int height = 16;
    int width = 16;
    /// Class means indexed by class id; every id below means.size() is valid.
    std::vector<std::vector<double>> means;
    ClassId background = 0;
    /// Foreground classes to place, at most four.
    std::vector<ClassId> classes;
    double noise = 0.1;
    int levels = 3;
    /// Description embeddings per class (n - 1 for n textual prototypes).
    int descriptions = 2;
    double description_offset = 0.1;
    std::uint64_t seed = 0;

    /// SpecError on repeated means, negative noise or unknown classes.
    void validate() const;
};

struct SyntheticScene {
    FeaturePyramid features;
    LabelMap labels;
    std::map<ClassId, EmbeddingRecord> embeddings;
};

/// Pixel features are class mean plus Gaussian noise; coarser levels are area
/// pooled, halving per level.
SyntheticScene gen_scene(const SyntheticSceneSpec& spec);

/// Class c on axis c mod dim, negated for the second pass around the axes.
std::vector<std::vector<double>> axis_means(int classes, int dim, double scale);

/// Name embedding equal to the class mean; descriptions offset from it along
/// random directions orthogonal to the mean.
std::map<ClassId, EmbeddingRecord> make_embeddings(const std::vector<std::vector<double>>& means, int descriptions,
                                                   double offset, std::uint64_t seed);

struct SyntheticDatasetSpec {
    int height = 16;
    int width = 16;
    int dim = 8;
    int levels = 3;
    double noise = 0.1;
    double scale = 3.0;
    ClassId background = 0;
    std::vector<ClassId> seen = {0, 1, 2, 3};
    std::vector<ClassId> unseen = {4};
    int train_scenes = 24;
    int eval_scenes = 12;
    int descriptions = 2;
    std::uint64_t seed = 0;
};

/// Training scenes show only seen classes; every eval scene shows one unseen
/// class beside seen ones.
Dataset gen_dataset(const SyntheticDatasetSpec& spec);

/// Filled disk covering about half of an h x w mask, centered.
BinaryMask half_foreground_disk(int height, int width);

/// Writes tensors, label PGMs and a manifest.json readable by read_dataset.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace mproto
