#pragma once

#include <cstdint>
#include <vector>

namespace mproto {

/// Pixel coordinate: x is the column, y is the row.
struct Pixel {
    int x = 0;
    int y = 0;
    bool operator==(const Pixel&) const = default;
};

/// Binary annotation at pixel resolution, row-major, values in {0,1}.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0);
    BinaryMask(int height, int width, std::vector<std::uint8_t> bits);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t pixel_count() const noexcept { return bits_.size(); }

    std::uint8_t at(int y, int x) const noexcept { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
    void set(int y, int x, bool on) noexcept { bits_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }

    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

    std::size_t foreground_count() const noexcept;
    /// Foreground pixels in row-major scan order.
    std::vector<Pixel> foreground_pixels() const;
    BinaryMask complement() const;

    bool operator==(const BinaryMask&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Union of masks on a height x width grid; an empty list gives an all-zero mask.
BinaryMask mask_union(const std::vector<BinaryMask>& masks, int height, int width);

/// n disjoint parts covering a mask's foreground, with one center per part.
struct Partition {
    std::vector<BinaryMask> parts;
    std::vector<Pixel> centers;
};

/// M-Splitting: the first center is a uniformly random foreground pixel,
/// each further center is the foreground pixel farthest (squared Euclidean)
/// from all chosen centers, and every foreground pixel joins its nearest
/// center. Ties go to the lower center index; equally far candidates go to
/// the first pixel in row-major order.
Partition m_splitting(const BinaryMask& mask, int n, std::uint64_t seed);

/// M-Splitting with a caller-chosen first center.
Partition m_splitting_from(const BinaryMask& mask, int n, Pixel first_center);

/// Lloyd's k-means over foreground coordinates with greedy k-means++ seeding.
///
/// Stops when assignments stop changing or after `max_iter` updates. Empty
/// clusters are re-seeded to the pixel farthest from its own centroid. Each
/// reported center is the pixel of its part closest to the part centroid.
Partition kmeans_split(const BinaryMask& mask, int n, int max_iter, std::uint64_t seed);

struct SplitTiming {
    int n = 0;
    int runs = 0;
    double m_splitting_median_s = 0.0;
    /// (max_iter, median seconds) per k-means configuration.
    std::vector<std::pair<int, double>> kmeans_median_s;
};

/// Median wall-clock over `runs` repetitions of each splitter on one mask.
SplitTiming benchmark_split(const BinaryMask& mask, int n, int runs, const std::vector<int>& kmeans_iters,
                            std::uint64_t seed);

/// Process-wide: keeps freed large blocks in the heap (glibc) so repeated
/// splits reuse warm pages instead of faulting fresh ones on every call.
/// Affects every allocation in the process; call once at startup.
void retain_freed_memory();

}  // namespace mproto
