#include "mproto/mask_partition.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "mproto/error.hpp"

namespace mproto {

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
    if (height < 0 || width < 0) {
        throw ShapeError("BinaryMask: negative dimensions");
    }
    bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
    if (height < 0 || width < 0 || bits_.size() != static_cast<std::size_t>(height) * width) {
        throw ShapeError("BinaryMask: " + std::to_string(bits_.size()) + " bits for " + std::to_string(height) +
                         "x" + std::to_string(width));
    }
    std::uint8_t seen = 0;
    for (auto b : bits_) {
        seen |= b;
    }
    if (seen > 1) {
        throw ShapeError("BinaryMask: bit values must be 0 or 1");
    }
}

std::size_t BinaryMask::foreground_count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<Pixel> BinaryMask::foreground_pixels() const {
    std::vector<Pixel> out;
    out.reserve(foreground_count());
    for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
            if (at(y, x)) {
                out.push_back({x, y});
            }
        }
    }
    return out;
}

BinaryMask BinaryMask::complement() const {
    BinaryMask out = *this;
    for (auto& b : out.bits_) {
        b = static_cast<std::uint8_t>(1 - b);
    }
    return out;
}

BinaryMask mask_union(const std::vector<BinaryMask>& masks, int height, int width) {
    BinaryMask out(height, width);
    for (const auto& m : masks) {
        if (m.height() != height || m.width() != width) {
            throw ShapeError("mask_union: grid mismatch");
        }
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                if (m.at(y, x)) {
                    out.set(y, x, true);
                }
            }
        }
    }
    return out;
}

namespace {

struct Coords {
    // Dimensions are capped at 32767, so 16 bits hold any coordinate. The
    // vectors may be longer than `count`; storage is reused across calls.
    std::vector<std::int16_t> xs;
    std::vector<std::int16_t> ys;
    std::size_t count = 0;
    std::size_t size() const { return count; }
};

// Foreground coordinates in row-major order, written into `c`.
void collect(const BinaryMask& mask, Coords& c) {
    if (mask.height() > 32767 || mask.width() > 32767) {
        throw ShapeError("mask split: mask dimensions exceed 32767");
    }
    // Every pixel of a nonzero 8-byte block is written and only foreground
    // advances, so up to 8 slots past the last foreground pixel get touched.
    const std::size_t need = mask.pixel_count() + 8;
    if (c.xs.size() < need) {
        c.xs.resize(need);
        c.ys.resize(need);
    }
    const std::uint8_t* bits = mask.bits().data();
    const int w = mask.width();
    std::int16_t* xs = c.xs.data();
    std::int16_t* ys = c.ys.data();
    std::size_t k = 0;
    for (int y = 0; y < mask.height(); ++y) {
        const std::uint8_t* row = bits + static_cast<std::size_t>(y) * w;
        const auto yy = static_cast<std::int16_t>(y);
        int x = 0;
        for (; x + 8 <= w; x += 8) {
            std::uint64_t block;
            std::memcpy(&block, row + x, sizeof block);
            if (block == 0) {
                continue;
            }
            for (int j = 0; j < 8; ++j) {
                xs[k] = static_cast<std::int16_t>(x + j);
                ys[k] = yy;
                k += row[x + j];
            }
        }
        for (; x < w; ++x) {
            xs[k] = static_cast<std::int16_t>(x);
            ys[k] = yy;
            k += row[x];
        }
    }
    c.count = k;
}

// Per-thread buffers for the splitters. Splitting the same large mask many
// times would otherwise map and fault fresh pages on every call.
struct Scratch {
    Coords pts;
    std::vector<std::int32_t> dist;
};

Scratch& scratch() {
    thread_local Scratch s;
    return s;
}

void check_request(int n, std::size_t fg) {
    if (n < 1) {
        throw InsufficientPixelsError("mask split: n must be >= 1, got " + std::to_string(n));
    }
    if (fg == 0) {
        throw EmptyMaskError("mask split: mask has no foreground pixels");
    }
    if (static_cast<std::size_t>(n) > fg) {
        throw InsufficientPixelsError("mask split: n=" + std::to_string(n) + " exceeds foreground count " +
                                      std::to_string(fg));
    }
}

Partition materialize(const BinaryMask& mask, const Coords& pts, const std::vector<std::int32_t>& owner,
                      std::vector<Pixel> centers) {
    const std::size_t w = static_cast<std::size_t>(mask.width());
    std::vector<std::vector<std::uint8_t>> bits(centers.size());
    for (auto& b : bits) {
        b.resize(mask.pixel_count());
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
        bits[static_cast<std::size_t>(owner[i])][static_cast<std::size_t>(pts.ys[i]) * w + pts.xs[i]] = 1;
    }
    Partition out;
    out.parts.reserve(centers.size());
    for (auto& b : bits) {
        out.parts.emplace_back(mask.height(), mask.width(), std::move(b));
    }
    out.centers = std::move(centers);
    return out;
}

// Lowers the running nearest-center distances with center (cx, cy) and
// returns the largest distance afterwards.
[[gnu::target_clones("avx2", "default")]] std::int32_t fold_center(const std::int16_t* xs, const std::int16_t* ys,
                                                                   std::int32_t* dist, std::size_t count,
                                                                   std::int32_t cx, std::int32_t cy) {
    std::int32_t best = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const std::int32_t dx = xs[i] - cx;
        const std::int32_t dy = ys[i] - cy;
        dist[i] = std::min(dist[i], dx * dx + dy * dy);
        best = std::max(best, dist[i]);
    }
    return best;
}

// First index holding `value`, which must occur. Blocks are screened with a
// vectorizable any-equal test before the exact scan.
[[gnu::target_clones("avx2", "default")]] std::size_t find_first(const std::int32_t* v, std::size_t count,
                                                                 std::int32_t value) {
    constexpr std::size_t block = 64;
    std::size_t i = 0;
    for (; i + block <= count; i += block) {
        int hit = 0;
        for (std::size_t j = 0; j < block; ++j) {
            hit |= v[i + j] == value;
        }
        if (hit) {
            break;
        }
    }
    while (v[i] != value) {
        ++i;
    }
    return i;
}

// Nearest center for each of `count` (at most 256) pixels; strict comparison
// keeps ties with the lower center index.
[[gnu::target_clones("avx2", "default")]] void nearest_center(const std::int16_t* xs, const std::int16_t* ys,
                                                              std::size_t count, const Pixel* centers,
                                                              std::size_t n, std::int32_t* owner) {
    std::int32_t best[256];
    for (std::size_t i = 0; i < count; ++i) {
        best[i] = std::numeric_limits<std::int32_t>::max();
        owner[i] = 0;
    }
    for (std::size_t k = 0; k < n; ++k) {
        const std::int32_t cx = centers[k].x;
        const std::int32_t cy = centers[k].y;
        const auto kk = static_cast<std::int32_t>(k);
        for (std::size_t i = 0; i < count; ++i) {
            const std::int32_t dx = xs[i] - cx;
            const std::int32_t dy = ys[i] - cy;
            const std::int32_t d = dx * dx + dy * dy;
            const bool closer = d < best[i];
            best[i] = closer ? d : best[i];
            owner[i] = closer ? kk : owner[i];
        }
    }
}

Partition farthest_point_split(const BinaryMask& mask, const Coords& pts, int n, std::size_t first) {
    const std::size_t count = pts.size();
    Scratch& s = scratch();
    auto& dist = s.dist;
    dist.assign(count, std::numeric_limits<std::int32_t>::max());
    std::vector<Pixel> centers;
    centers.reserve(static_cast<std::size_t>(n));

    std::size_t pick = first;
    for (int k = 0; k < n; ++k) {
        const std::int32_t cx = pts.xs[pick];
        const std::int32_t cy = pts.ys[pick];
        centers.push_back({cx, cy});
        if (k + 1 < n) {
            const std::int32_t far = fold_center(pts.xs.data(), pts.ys.data(), dist.data(), count, cx, cy);
            // First pixel in row-major order at the farthest distance.
            pick = find_first(dist.data(), count, far);
        }
    }

    // Ownership is resolved in small blocks and scattered straight into the parts.
    const std::size_t w = static_cast<std::size_t>(mask.width());
    std::vector<std::vector<std::uint8_t>> bits(centers.size());
    for (auto& b : bits) {
        b.resize(mask.pixel_count());
    }
    std::int32_t owner[256];
    for (std::size_t begin = 0; begin < count; begin += 256) {
        const std::size_t len = std::min<std::size_t>(256, count - begin);
        nearest_center(pts.xs.data() + begin, pts.ys.data() + begin, len, centers.data(), centers.size(), owner);
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t p = begin + i;
            bits[static_cast<std::size_t>(owner[i])][static_cast<std::size_t>(pts.ys[p]) * w + pts.xs[p]] = 1;
        }
    }
    Partition out;
    out.parts.reserve(centers.size());
    for (auto& b : bits) {
        out.parts.emplace_back(mask.height(), mask.width(), std::move(b));
    }
    out.centers = std::move(centers);
    return out;
}

}  // namespace

Partition m_splitting(const BinaryMask& mask, int n, std::uint64_t seed) {
    const Coords& pts = scratch().pts;
    collect(mask, scratch().pts);
    check_request(n, pts.size());
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    return farthest_point_split(mask, pts, n, pick(rng));
}

Partition m_splitting_from(const BinaryMask& mask, int n, Pixel first_center) {
    const Coords& pts = scratch().pts;
    collect(mask, scratch().pts);
    check_request(n, pts.size());
    if (first_center.y < 0 || first_center.y >= mask.height() || first_center.x < 0 ||
        first_center.x >= mask.width() || !mask.at(first_center.y, first_center.x)) {
        throw EmptyMaskError("m_splitting_from: first center is not a foreground pixel");
    }
    std::size_t first = 0;
    while (pts.xs[first] != first_center.x || pts.ys[first] != first_center.y) {
        ++first;
    }
    return farthest_point_split(mask, pts, n, first);
}

namespace {

struct Centroid {
    double x = 0.0;
    double y = 0.0;
};

double sq_dist(const Coords& pts, std::size_t i, const Centroid& c) {
    const double dx = pts.xs[i] - c.x;
    const double dy = pts.ys[i] - c.y;
    return dx * dx + dy * dy;
}

// Greedy k-means++: each new center is the best of 2 + floor(ln k) D^2-sampled
// candidates, judged by the resulting potential.
std::vector<Centroid> kmeanspp_seed(const Coords& pts, int n, std::mt19937_64& rng) {
    const std::size_t count = pts.size();
    std::vector<Centroid> centers;
    centers.reserve(static_cast<std::size_t>(n));
    std::uniform_int_distribution<std::size_t> first(0, count - 1);
    const std::size_t f = first(rng);
    centers.push_back({static_cast<double>(pts.xs[f]), static_cast<double>(pts.ys[f])});

    std::vector<double> closest(count);
    for (std::size_t i = 0; i < count; ++i) {
        closest[i] = sq_dist(pts, i, centers[0]);
    }
    double potential = std::accumulate(closest.begin(), closest.end(), 0.0);

    const int trials = 2 + static_cast<int>(std::log(static_cast<double>(n)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> cumulative(count);
    std::vector<double> candidate_dist(count);
    std::vector<double> best_dist(count);

    for (int k = 1; k < n; ++k) {
        std::partial_sum(closest.begin(), closest.end(), cumulative.begin());
        double best_potential = std::numeric_limits<double>::infinity();
        std::size_t best_candidate = 0;
        for (int t = 0; t < trials; ++t) {
            const double target = unit(rng) * potential;
            auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
            std::size_t cand = static_cast<std::size_t>(it - cumulative.begin());
            cand = std::min(cand, count - 1);
            const Centroid c{static_cast<double>(pts.xs[cand]), static_cast<double>(pts.ys[cand])};
            double pot = 0.0;
            for (std::size_t i = 0; i < count; ++i) {
                candidate_dist[i] = std::min(closest[i], sq_dist(pts, i, c));
                pot += candidate_dist[i];
            }
            if (pot < best_potential) {
                best_potential = pot;
                best_candidate = cand;
                best_dist.swap(candidate_dist);
            }
        }
        centers.push_back({static_cast<double>(pts.xs[best_candidate]), static_cast<double>(pts.ys[best_candidate])});
        closest.swap(best_dist);
        potential = best_potential;
    }
    return centers;
}

// Nearest-centroid labels (ties to the lower index); returns whether any changed.
bool assign(const Coords& pts, const std::vector<Centroid>& centers, std::vector<std::int32_t>& labels,
            std::vector<double>& dist) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::int32_t best = 0;
        double best_d = sq_dist(pts, i, centers[0]);
        for (std::size_t k = 1; k < centers.size(); ++k) {
            const double d = sq_dist(pts, i, centers[k]);
            if (d < best_d) {
                best_d = d;
                best = static_cast<std::int32_t>(k);
            }
        }
        changed = changed || labels[i] != best;
        labels[i] = best;
        dist[i] = best_d;
    }
    return changed;
}

std::vector<std::size_t> cluster_sizes(const std::vector<std::int32_t>& labels, std::size_t k) {
    std::vector<std::size_t> sizes(k, 0);
    for (auto l : labels) {
        ++sizes[static_cast<std::size_t>(l)];
    }
    return sizes;
}

// Moves each empty cluster's centroid onto the pixel farthest from its own
// centroid, then reassigns. A relocated centroid sits exactly on a pixel, so
// that pixel now belongs to it.
void reseed_empty(const Coords& pts, std::vector<Centroid>& centers, std::vector<std::int32_t>& labels,
                  std::vector<double>& dist) {
    const std::size_t limit = pts.size() * centers.size() + 1;
    for (std::size_t guard = 0; guard < limit; ++guard) {
        const auto sizes = cluster_sizes(labels, centers.size());
        auto empty = std::find(sizes.begin(), sizes.end(), std::size_t{0});
        if (empty == sizes.end()) {
            return;
        }
        const std::size_t far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        centers[static_cast<std::size_t>(empty - sizes.begin())] = {static_cast<double>(pts.xs[far]),
                                                                   static_cast<double>(pts.ys[far])};
        assign(pts, centers, labels, dist);
    }
    throw InsufficientPixelsError("kmeans_split: could not populate every cluster");
}

void update_means(const Coords& pts, const std::vector<std::int32_t>& labels, std::vector<Centroid>& centers) {
    std::vector<double> sx(centers.size(), 0.0);
    std::vector<double> sy(centers.size(), 0.0);
    std::vector<std::size_t> cnt(centers.size(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        sx[k] += pts.xs[i];
        sy[k] += pts.ys[i];
        ++cnt[k];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
        if (cnt[k] > 0) {
            centers[k] = {sx[k] / static_cast<double>(cnt[k]), sy[k] / static_cast<double>(cnt[k])};
        }
    }
}

}  // namespace

Partition kmeans_split(const BinaryMask& mask, int n, int max_iter, std::uint64_t seed) {
    const Coords& pts = scratch().pts;
    collect(mask, scratch().pts);
    check_request(n, pts.size());
    if (max_iter < 1) {
        throw InsufficientPixelsError("kmeans_split: max_iter must be >= 1");
    }
    std::mt19937_64 rng(seed);
    std::vector<Centroid> centers = kmeanspp_seed(pts, n, rng);

    std::vector<std::int32_t> labels(pts.size(), -1);
    std::vector<double> dist(pts.size());
    for (int it = 0; it < max_iter; ++it) {
        const bool changed = assign(pts, centers, labels, dist);
        if (!changed) {
            break;
        }
        reseed_empty(pts, centers, labels, dist);
        update_means(pts, labels, centers);
    }
    assign(pts, centers, labels, dist);
    reseed_empty(pts, centers, labels, dist);

    std::vector<Pixel> snapped(centers.size());
    std::vector<double> snapped_d(centers.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        const double d = sq_dist(pts, i, centers[k]);
        if (d < snapped_d[k]) {
            snapped_d[k] = d;
            snapped[k] = {pts.xs[i], pts.ys[i]};
        }
    }
    return materialize(mask, pts, labels, std::move(snapped));
}

namespace {

template <class Fn>
double median_seconds(int runs, Fn&& fn) {
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn(r);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    const std::size_t mid = times.size() / 2;
    return times.size() % 2 == 1 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

}  // namespace

SplitTiming benchmark_split(const BinaryMask& mask, int n, int runs, const std::vector<int>& kmeans_iters,
                            std::uint64_t seed) {
    if (runs < 1) {
        throw InsufficientPixelsError("benchmark_split: runs must be >= 1");
    }
    SplitTiming timing;
    timing.n = n;
    timing.runs = runs;
    std::size_t sink = 0;
    timing.m_splitting_median_s = median_seconds(runs, [&](int r) {
        sink += m_splitting(mask, n, seed + static_cast<std::uint64_t>(r)).centers.size();
    });
    for (int iters : kmeans_iters) {
        const double t = median_seconds(runs, [&](int r) {
            sink += kmeans_split(mask, n, iters, seed + static_cast<std::uint64_t>(r)).centers.size();
        });
        timing.kmeans_median_s.emplace_back(iters, t);
    }
    if (sink == 0) {
        throw InsufficientPixelsError("benchmark_split: no work performed");
    }
    return timing;
}

void retain_freed_memory() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace mproto
