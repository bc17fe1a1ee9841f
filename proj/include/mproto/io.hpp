#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mproto/episode.hpp"
#include "mproto/evaluation.hpp"
#include "mproto/model.hpp"
#include "mproto/training.hpp"

namespace mproto {

namespace fs = std::filesystem;

/// Dense row-major tensor as stored on disk. Values widen to double on load.
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> values;

    std::size_t element_count() const noexcept;
};

inline constexpr std::uint32_t kMaxTensorRank = 4;

/// "MPF1", u32 rank, rank x u32 dims, then f32 payload; all little-endian.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
/// Rejects bad magic, rank > 4, short or over-long payloads. Messages carry
/// the byte offset where decoding stopped.
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const fs::path& path, const Tensor& t);
Tensor read_tensor(const fs::path& path);

Tensor to_tensor(const Matrix& m);
Matrix to_matrix(const Tensor& t);
/// Rank-1 tensors load as a single row.
Tensor to_tensor(const std::vector<double>& v);
/// (height, width, dim) tensor.
Tensor to_tensor(const FeatureMap& f);
FeatureMap to_feature_map(const Tensor& t);

/// Binary PGM, maxval 255. Pixels above 127 are foreground.
BinaryMask read_mask(const fs::path& path);
void write_mask(const fs::path& path, const BinaryMask& mask);

/// Label maps are PGMs whose bytes are raw class ids (0..255).
LabelMap read_label_map(const fs::path& path);
void write_label_map(const fs::path& path, const LabelMap& labels);

struct PgmImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};
PgmImage decode_pgm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_pgm(const PgmImage& img);

/// Dataset manifest: registry, embedding records and train/eval scenes.
/// Relative paths resolve against the manifest's directory.
///
///   {"registry": {"seen": [...], "unseen": [...], "background": 0},
///    "embeddings": [{"class_id", "name", "descriptions", "name_tensor", "description_tensor"}],
///    "train": [{"id", "features": [deepest .. finest], "labels"}], "eval": [...]}
Dataset read_dataset(const fs::path& manifest);

std::map<ClassId, EmbeddingRecord> read_embeddings(const fs::path& manifest);

/// Episode file for the predict and fuse commands.
///
///   {"background", "classes", "seed", "embeddings": "<dataset manifest>",
///    "query": {"features": [...], "labels": optional},
///    "shots": [{"features": [...], "masks": {"<class>": "mask.pgm"}, "targets": [...]}]}
Episode read_episode(const fs::path& path);

struct RunConfig {
    int n = 3;
    double lambda = 0.01;
    int levels = 3;
    int width = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    ShotMode shot_mode = ShotMode::one;
    int steps = 500;
    double eps = 1e-8;
    bool include_background = true;
    std::string dataset;

    void validate() const;
    TrainConfig train_config(int dim) const;
};

/// Unknown keys and out-of-range values raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig read_run_config(const fs::path& path);
std::string to_json(const RunConfig& cfg);

/// A checkpoint is a directory: manifest.json (shape, step, lr, seed, block
/// list) and one tensor file per parameter block.
void write_checkpoint(const fs::path& dir, const TrainState& state);
TrainState read_checkpoint(const fs::path& dir);

}  // namespace mproto
