#include "mproto/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <cmath>
#include <random>
#include <set>

#include <json.hpp>

#include "mproto/error.hpp"
#include "mproto/io.hpp"

namespace mproto {

void SyntheticSceneSpec::validate() const {
    if (height < 1 || width < 1 || levels < 1) {
        throw SpecError("synthetic scene: height, width and levels must be >= 1");
    }
    if (!(noise >= 0.0)) {
        throw SpecError("synthetic scene: noise must be >= 0");
    }
    if (means.empty()) {
        throw SpecError("synthetic scene: no class means");
    }
    const std::size_t dim = means.front().size();
    if (dim == 0) {
        throw SpecError("synthetic scene: zero-dimensional means");
    }
    for (std::size_t i = 0; i < means.size(); ++i) {
        if (means[i].size() != dim) {
            throw SpecError("synthetic scene: mean " + std::to_string(i) + " has the wrong dimension");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (means[i] == means[j]) {
                throw SpecError("synthetic scene: classes " + std::to_string(j) + " and " + std::to_string(i) +
                                " share a mean");
            }
        }
    }
    auto valid = [&](ClassId c) { return c >= 0 && static_cast<std::size_t>(c) < means.size(); };
    if (!valid(background)) {
        throw SpecError("synthetic scene: background has no mean");
    }
    if (classes.size() > 4) {
        throw SpecError("synthetic scene: at most four foreground classes fit");
    }
    for (ClassId c : classes) {
        if (!valid(c) || c == background) {
            throw SpecError("synthetic scene: bad foreground class " + std::to_string(c));
        }
    }
}

std::vector<std::vector<double>> axis_means(int classes, int dim, double scale) {
    if (classes < 1 || dim < 1 || classes > 2 * dim) {
        throw SpecError("axis_means: need 1 <= classes <= 2 * dim");
    }
    std::vector<std::vector<double>> out(static_cast<std::size_t>(classes), std::vector<double>(dim, 0.0));
    for (int c = 0; c < classes; ++c) {
        out[c][c % dim] = c < dim ? scale : -scale;
    }
    return out;
}

std::map<ClassId, EmbeddingRecord> make_embeddings(const std::vector<std::vector<double>>& means, int descriptions,
                                                   double offset, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::map<ClassId, EmbeddingRecord> out;
    for (std::size_t c = 0; c < means.size(); ++c) {
        const auto& mu = means[c];
        const double mu2 = std::inner_product(mu.begin(), mu.end(), mu.begin(), 0.0);
        EmbeddingRecord rec;
        rec.class_id = static_cast<ClassId>(c);
        rec.name_embedding = mu;
        rec.description_embeddings = Matrix(static_cast<std::size_t>(descriptions), mu.size());
        for (int k = 0; k < descriptions; ++k) {
            std::vector<double> dir(mu.size());
            for (auto& v : dir) {
                v = gauss(rng);
            }
            if (mu2 > 0.0) {
                const double along = std::inner_product(dir.begin(), dir.end(), mu.begin(), 0.0) / mu2;
                for (std::size_t i = 0; i < dir.size(); ++i) {
                    dir[i] -= along * mu[i];
                }
            }
            const double norm = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
            const double len = offset * std::sqrt(mu2);
            auto row = rec.description_embeddings.row(static_cast<std::size_t>(k));
            for (std::size_t i = 0; i < dir.size(); ++i) {
                row[i] = mu[i] + (norm > 0.0 ? len * dir[i] / norm : 0.0);
            }
        }
        out.emplace(rec.class_id, std::move(rec));
    }
    return out;
}

SyntheticScene gen_scene(const SyntheticSceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const int h = spec.height;
    const int w = spec.width;

    SyntheticScene scene;
    scene.labels = LabelMap{h, w, std::vector<ClassId>(static_cast<std::size_t>(h) * w, spec.background)};

    // Quadrants in random order; each class gets a rectangle strictly inside
    // its quadrant so some background always survives.
    std::vector<int> quadrants = {0, 1, 2, 3};
    std::shuffle(quadrants.begin(), quadrants.end(), rng);
    const int qh = std::max(1, h / 2);
    const int qw = std::max(1, w / 2);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng); };
    for (std::size_t i = 0; i < spec.classes.size(); ++i) {
        const int q = quadrants[i];
        const int y0 = (q / 2) * qh;
        const int x0 = (q % 2) * qw;
        const int rh = pick(std::min(3, std::max(1, qh - 1)), std::max(1, qh - 1));
        const int rw = pick(std::min(3, std::max(1, qw - 1)), std::max(1, qw - 1));
        const int oy = y0 + pick(0, qh - rh);
        const int ox = x0 + pick(0, qw - rw);
        for (int y = oy; y < std::min(h, oy + rh); ++y) {
            for (int x = ox; x < std::min(w, ox + rw); ++x) {
                scene.labels.labels[static_cast<std::size_t>(y) * w + x] = spec.classes[i];
            }
        }
    }

    const std::size_t dim = spec.means.front().size();
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix cells(static_cast<std::size_t>(h) * w, dim);
    for (std::size_t p = 0; p < cells.rows(); ++p) {
        const auto& mu = spec.means[static_cast<std::size_t>(scene.labels.labels[p])];
        auto row = cells.row(p);
        for (std::size_t d = 0; d < dim; ++d) {
            row[d] = mu[d] + (spec.noise > 0.0 ? spec.noise * gauss(rng) : 0.0);
        }
    }
    const FeatureMap finest(h, w, std::move(cells));
    scene.features.resize(static_cast<std::size_t>(spec.levels));
    for (int l = 0; l < spec.levels; ++l) {
        const int shift = spec.levels - 1 - l;
        const int lh = std::max(1, h >> shift);
        const int lw = std::max(1, w >> shift);
        scene.features[static_cast<std::size_t>(l)] =
            shift == 0 ? finest : downsample_features(finest, lh, lw);
    }
    scene.embeddings = make_embeddings(spec.means, spec.descriptions, spec.description_offset, spec.seed ^ 0xe3bULL);
    return scene;
}

Dataset gen_dataset(const SyntheticDatasetSpec& spec) {
    Dataset ds;
    ds.registry.seen = spec.seen;
    ds.registry.unseen = spec.unseen;
    ds.registry.background = spec.background;
    ds.registry.validate();

    const auto all = ds.registry.all();
    const ClassId top = *std::max_element(all.begin(), all.end());
    const auto means = axis_means(top + 1, spec.dim, spec.scale);
    ds.embeddings = make_embeddings(means, spec.descriptions, 0.1, spec.seed);

    std::vector<ClassId> seen_fg;
    for (ClassId c : spec.seen) {
        if (c != spec.background) {
            seen_fg.push_back(c);
        }
    }
    if (seen_fg.empty()) {
        throw SpecError("gen_dataset: no seen foreground class");
    }

    std::mt19937_64 rng(spec.seed);
    SyntheticSceneSpec base;
    base.height = spec.height;
    base.width = spec.width;
    base.means = means;
    base.background = spec.background;
    base.noise = spec.noise;
    base.levels = spec.levels;
    base.descriptions = spec.descriptions;

    auto sample_seen = [&](int max_count) {
        std::vector<ClassId> pool = seen_fg;
        std::shuffle(pool.begin(), pool.end(), rng);
        const int count = std::uniform_int_distribution<int>(1, std::min<int>(max_count, pool.size()))(rng);
        pool.resize(static_cast<std::size_t>(count));
        return pool;
    };

    for (int i = 0; i < spec.train_scenes; ++i) {
        SyntheticSceneSpec s = base;
        s.classes = sample_seen(3);
        s.seed = rng();
        SyntheticScene sc = gen_scene(s);
        ds.train.push_back({"train_" + std::to_string(i), std::move(sc.features), std::move(sc.labels)});
    }
    for (int i = 0; i < spec.eval_scenes; ++i) {
        SyntheticSceneSpec s = base;
        s.classes = sample_seen(2);
        if (!spec.unseen.empty()) {
            s.classes.insert(s.classes.begin(), spec.unseen[static_cast<std::size_t>(i) % spec.unseen.size()]);
        }
        s.seed = rng();
        SyntheticScene sc = gen_scene(s);
        ds.eval.push_back({"eval_" + std::to_string(i), std::move(sc.features), std::move(sc.labels)});
    }
    return ds;
}

BinaryMask half_foreground_disk(int height, int width) {
    BinaryMask mask(height, width);
    const double r = std::sqrt(static_cast<double>(height) * width / (2.0 * std::acos(-1.0)));
    const double cy = (height - 1) / 2.0;
    const double cx = (width - 1) / 2.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dy = y - cy;
            const double dx = x - cx;
            mask.set(y, x, dy * dy + dx * dx <= r * r);
        }
    }
    return mask;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
    using nlohmann::ordered_json;
    std::filesystem::create_directories(dir);
    ordered_json j;
    j["registry"] = {{"seen", dataset.registry.seen},
                     {"unseen", dataset.registry.unseen},
                     {"background", dataset.registry.background}};
    j["embeddings"] = ordered_json::array();
    for (const auto& [c, rec] : dataset.embeddings) {
        const std::string stem = "embeddings/class_" + std::to_string(c);
        write_tensor(dir / (stem + "_name.mpf"), to_tensor(rec.name_embedding));
        write_tensor(dir / (stem + "_descriptions.mpf"), to_tensor(rec.description_embeddings));
        std::vector<std::string> texts;
        for (std::size_t k = 0; k < rec.description_embeddings.rows(); ++k) {
            texts.push_back("synthetic description " + std::to_string(k + 1) + " of class " + std::to_string(c));
        }
        j["embeddings"].push_back({{"class_id", c},
                                   {"name", "class_" + std::to_string(c)},
                                   {"descriptions", texts},
                                   {"name_tensor", stem + "_name.mpf"},
                                   {"description_tensor", stem + "_descriptions.mpf"}});
    }
    auto scenes = [&](const std::vector<Scene>& list) {
        ordered_json arr = ordered_json::array();
        for (const auto& s : list) {
            std::vector<std::string> feats;
            for (std::size_t l = 0; l < s.features.size(); ++l) {
                const std::string p = "scenes/" + s.id + "_level" + std::to_string(l) + ".mpf";
                write_tensor(dir / p, to_tensor(s.features[l]));
                feats.push_back(p);
            }
            const std::string lp = "scenes/" + s.id + "_labels.pgm";
            write_label_map(dir / lp, s.labels);
            arr.push_back({{"id", s.id}, {"features", feats}, {"labels", lp}});
        }
        return arr;
    };
    j["train"] = scenes(dataset.train);
    j["eval"] = scenes(dataset.eval);
    std::ofstream out(dir / "manifest.json");
    out << j.dump(2) << "\n";
    if (!out) {
        throw FormatError("cannot write " + (dir / "manifest.json").string());
    }
}

}  // namespace mproto
