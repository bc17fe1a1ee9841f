#include "mproto/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "mproto/error.hpp"

namespace mproto {

namespace {

// Gram-Schmidt on a Gaussian matrix; rows come out orthonormal.
Matrix random_orthogonal(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix q(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (;;) {
            auto row = q.row(i);
            for (double& x : row) {
                x = normal(rng);
            }
            for (std::size_t j = 0; j < i; ++j) {
                const double proj = dot(row, q.row(j));
                for (std::size_t k = 0; k < d; ++k) {
                    row[k] -= proj * q(j, k);
                }
            }
            const double norm = std::sqrt(dot(row, row));
            if (norm > 1e-8) {
                for (double& x : row) {
                    x /= norm;
                }
                break;
            }
        }
    }
    return q;
}

void check_shape(const ModelShape& s) {
    if (s.n < 1 || s.levels < 1 || s.width < 1 || s.dim < 1) {
        throw ConfigError("model shape needs n, levels, width and dim >= 1");
    }
}

}  // namespace

ModelParams ModelParams::zeros(const ModelShape& shape) {
    check_shape(shape);
    ModelParams p;
    p.shape = shape;
    p.fusion.rho = 0.0;
    const auto d = static_cast<std::size_t>(shape.width);
    p.prediction.w_p.assign(2 * static_cast<std::size_t>(shape.n), 0.0);
    p.prediction.fusion.w_in.assign(d, 0.0);
    p.prediction.fusion.w_out.assign(d, 0.0);
    for (int l = 0; l < shape.levels; ++l) {
        p.prediction.fusion.w.emplace_back(d, d, 0.0);
        p.prediction.fusion.b.emplace_back(d, 0.0);
    }
    p.background_text = Matrix(static_cast<std::size_t>(shape.n), static_cast<std::size_t>(shape.dim));
    return p;
}

ModelParams ModelParams::initialize(const ModelShape& shape, std::uint64_t seed) {
    ModelParams p = zeros(shape);
    std::mt19937_64 rng(seed);
    std::fill(p.prediction.w_p.begin(), p.prediction.w_p.end(), 1.0);
    const auto d = static_cast<std::size_t>(shape.width);
    for (auto& w : p.prediction.fusion.w) {
        w = scale(random_orthogonal(d, rng), 0.1);
    }
    // W_in is d x 1 and W_out is 1 x d; both take the same orthonormal
    // direction so the collapsed residual path W_out . W_in is positive.
    const Matrix dir = random_orthogonal(d, rng);
    for (std::size_t i = 0; i < d; ++i) {
        p.prediction.fusion.w_in[i] = 0.1 * dir(0, i);
        p.prediction.fusion.w_out[i] = 0.1 * dir(0, i);
    }
    return p;
}

std::vector<ParamBlock> ModelParams::layout(const ModelShape& s) {
    const auto n = static_cast<std::size_t>(s.n);
    const auto d = static_cast<std::size_t>(s.width);
    std::vector<ParamBlock> out;
    std::size_t off = 0;
    auto push = [&](std::string name, std::size_t size) {
        out.push_back({std::move(name), off, size});
        off += size;
    };
    push("rho", 1);
    push("w_p", 2 * n);
    push("w_in", d);
    for (int l = 0; l < s.levels; ++l) {
        push("w_" + std::to_string(l + 1), d * d);
    }
    for (int l = 0; l < s.levels; ++l) {
        push("b_" + std::to_string(l + 1), d);
    }
    push("w_out", d);
    push("background_text", n * static_cast<std::size_t>(s.dim));
    return out;
}

std::size_t ModelParams::parameter_count() const {
    const auto blocks = layout(shape);
    return blocks.back().offset + blocks.back().size;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    flat.push_back(fusion.rho);
    const auto& f = prediction.fusion;
    flat.insert(flat.end(), prediction.w_p.begin(), prediction.w_p.end());
    flat.insert(flat.end(), f.w_in.begin(), f.w_in.end());
    for (const auto& w : f.w) {
        flat.insert(flat.end(), w.data().begin(), w.data().end());
    }
    for (const auto& b : f.b) {
        flat.insert(flat.end(), b.begin(), b.end());
    }
    flat.insert(flat.end(), f.w_out.begin(), f.w_out.end());
    flat.insert(flat.end(), background_text.data().begin(), background_text.data().end());
    return flat;
}

void ModelParams::assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
        throw ShapeError("ModelParams::assign: " + std::to_string(flat.size()) + " values for " +
                         std::to_string(parameter_count()) + " parameters");
    }
    auto it = flat.begin();
    auto take = [&](std::span<double> dst) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
        it += static_cast<std::ptrdiff_t>(dst.size());
    };
    fusion.rho = *it++;
    auto& f = prediction.fusion;
    take(prediction.w_p);
    take(f.w_in);
    for (auto& w : f.w) {
        take(w.data());
    }
    for (auto& b : f.b) {
        take(b);
    }
    take(f.w_out);
    take(background_text.data());
}

std::vector<ClassId> PreparedEpisode::class_ids() const {
    std::vector<ClassId> out;
    for (const auto& c : classes) {
        out.push_back(c.id);
    }
    return out;
}

namespace {

void check_pyramid(const FeaturePyramid& pyramid, std::size_t levels, int dim, const char* what) {
    if (pyramid.size() != levels) {
        throw ShapeError(std::string(what) + ": " + std::to_string(pyramid.size()) + " levels, expected " +
                         std::to_string(levels));
    }
    for (const auto& f : pyramid) {
        if (f.dim() != dim) {
            throw ShapeError(std::string(what) + ": feature dim " + std::to_string(f.dim()) + " != " +
                             std::to_string(dim));
        }
    }
}

std::vector<PreparedEpisode::ShotLevel> prepare_levels(const FeaturePyramid& features, const BinaryMask& mask,
                                                       const Partition& partition) {
    std::vector<PreparedEpisode::ShotLevel> out;
    for (const auto& f : features) {
        PreparedEpisode::ShotLevel sl;
        sl.visual = visual_prototypes_from_partition(f, partition).matrix(Modality::visual);
        sl.cells = f.cells();
        sl.mask = downsample_mask(mask, f.height(), f.width());
        out.push_back(std::move(sl));
    }
    return out;
}

}  // namespace

PreparedEpisode prepare_episode(const Episode& episode, int n) {
    if (n < 1) {
        throw ConfigError("prepare_episode: n must be >= 1");
    }
    if (episode.query.empty()) {
        throw EpisodeError("prepare_episode: query has no feature levels");
    }
    const std::size_t levels = episode.query.size();
    const int dim = episode.query.front().dim();
    check_pyramid(episode.query, levels, dim, "query");
    for (const auto& shot : episode.shots) {
        check_pyramid(shot.features, levels, dim, "support");
    }

    PreparedEpisode prep;
    prep.n = n;
    prep.query = episode.query;
    prep.out_height = episode.out_height;
    prep.out_width = episode.out_width;
    if (prep.out_height == 0 || prep.out_width == 0) {
        if (episode.query_labels) {
            prep.out_height = episode.query_labels->height;
            prep.out_width = episode.query_labels->width;
        } else {
            prep.out_height = episode.query.back().height();
            prep.out_width = episode.query.back().width();
        }
    }

    // Per level, reshape class support into [level][shot].
    auto add_shot = [&](PreparedEpisode::ClassSupport& cls, std::vector<PreparedEpisode::ShotLevel> per_level) {
        if (cls.shots.empty()) {
            cls.shots.resize(levels);
        }
        for (std::size_t l = 0; l < levels; ++l) {
            cls.shots[l].push_back(std::move(per_level[l]));
        }
    };

    PreparedEpisode::ClassSupport bg;
    bg.id = episode.background;
    bg.is_background = true;
    for (std::size_t s = 0; s < episode.shots.size(); ++s) {
        const auto& shot = episode.shots[s];
        if (shot.masks.empty()) {
            continue;
        }
        const auto& any = shot.masks.begin()->second;
        std::vector<BinaryMask> annotated;
        for (const auto& [c, m] : shot.masks) {
            annotated.push_back(m);
        }
        const BinaryMask background = mask_union(annotated, any.height(), any.width()).complement();
        const auto count = static_cast<int>(background.foreground_count());
        if (count == 0) {
            continue;
        }
        const Partition part =
            m_splitting(background, std::min(n, count), split_seed(episode.seed, s, episode.background));
        add_shot(bg, prepare_levels(shot.features, background, part));
    }
    prep.classes.push_back(std::move(bg));

    std::vector<ClassId> seen_ids{episode.background};
    for (ClassId c : episode.classes) {
        if (std::find(seen_ids.begin(), seen_ids.end(), c) != seen_ids.end()) {
            continue;
        }
        seen_ids.push_back(c);
        PreparedEpisode::ClassSupport cls;
        cls.id = c;
        if (auto it = episode.texts.find(c); it != episode.texts.end()) {
            cls.text = textual_prototypes(it->second).matrix(Modality::textual);
            if (cls.text.rows() > static_cast<std::size_t>(n)) {
                throw ShapeError("prepare_episode: class " + std::to_string(c) + " has " +
                                 std::to_string(cls.text.rows()) + " textual prototypes, more than n=" +
                                 std::to_string(n));
            }
            if (cls.text.cols() != static_cast<std::size_t>(dim)) {
                throw ShapeError("prepare_episode: class " + std::to_string(c) + " embedding dim " +
                                 std::to_string(cls.text.cols()) + " != feature dim " + std::to_string(dim));
            }
        }
        for (std::size_t s = 0; s < episode.shots.size(); ++s) {
            const auto& shot = episode.shots[s];
            if (std::find(shot.targets.begin(), shot.targets.end(), c) == shot.targets.end()) {
                continue;
            }
            const auto mask = shot.masks.find(c);
            if (mask == shot.masks.end()) {
                throw EpisodeError("prepare_episode: shot " + std::to_string(s) + " targets class " +
                                   std::to_string(c) + " without a mask");
            }
            const Partition part = m_splitting(mask->second, n, split_seed(episode.seed, s, c));
            add_shot(cls, prepare_levels(shot.features, mask->second, part));
        }
        if (cls.text.rows() == 0 && cls.shots.empty()) {
            continue;
        }
        prep.classes.push_back(std::move(cls));
    }

    if (episode.query_labels) {
        const auto& gt = *episode.query_labels;
        if (gt.height != prep.out_height || gt.width != prep.out_width) {
            throw ShapeError("prepare_episode: label grid does not match output grid");
        }
        const auto ids = prep.class_ids();
        prep.target.reserve(gt.labels.size());
        for (ClassId c : gt.labels) {
            const auto it = std::find(ids.begin(), ids.end(), c);
            prep.target.push_back(it == ids.end() ? -1 : static_cast<int>(it - ids.begin()));
        }
    }
    return prep;
}

std::vector<PrototypeBank> build_banks(const PreparedEpisode& episode, const ModelParams& params,
                                       std::vector<std::vector<std::vector<FusionCall>>>* calls) {
    const std::size_t levels = episode.query.size();
    const double alpha = params.fusion.alpha();
    std::vector<PrototypeBank> banks;
    if (calls) {
        calls->assign(levels, std::vector<std::vector<FusionCall>>(episode.classes.size()));
    }
    for (std::size_t l = 0; l < levels; ++l) {
        std::vector<FusedPrototypes> fused;
        for (std::size_t ci = 0; ci < episode.classes.size(); ++ci) {
            const auto& cls = episode.classes[ci];
            const Matrix& text = cls.is_background ? params.background_text : cls.text;
            auto textual_only = [&] {
                FusedPrototypes f;
                f.class_id = cls.id;
                f.vectors = text;
                for (std::size_t r = 0; r < text.rows(); ++r) {
                    f.modality.push_back(Modality::textual);
                    f.slots.push_back(static_cast<int>(r));
                }
                return f;
            };
            if (cls.shots.empty()) {
                fused.push_back(textual_only());
                continue;
            }
            std::vector<FusedPrototypes> per_shot;
            for (const auto& shot : cls.shots[l]) {
                FusionCall call;
                call.queries = vstack(text, shot.visual);
                call.keys = vstack(text, shot.cells);
                call.bias = background_bias(shot.mask, text.rows(), call.queries.rows());
                BiasedAttention att = biased_attention(call.queries, call.keys, call.bias, alpha);
                FusedPrototypes f;
                f.class_id = cls.id;
                f.vectors = std::move(att.output);
                for (std::size_t r = 0; r < text.rows(); ++r) {
                    f.modality.push_back(Modality::textual);
                    f.slots.push_back(static_cast<int>(r));
                }
                for (std::size_t r = 0; r < shot.visual.rows(); ++r) {
                    f.modality.push_back(Modality::visual);
                    f.slots.push_back(static_cast<int>(r));
                }
                per_shot.push_back(std::move(f));
                if (calls) {
                    call.weights = std::move(att.weights);
                    (*calls)[l][ci].push_back(std::move(call));
                }
            }
            fused.push_back(average_fused(per_shot));
        }
        banks.push_back(PrototypeBank::from_fused(fused, episode.n));
    }
    return banks;
}

EpisodeForward forward_episode(const PreparedEpisode& episode, const ModelParams& params) {
    if (episode.query.size() != params.prediction.fusion.levels()) {
        throw ShapeError("forward_episode: episode has " + std::to_string(episode.query.size()) +
                         " levels, model has " + std::to_string(params.prediction.fusion.levels()));
    }
    EpisodeForward fwd;
    fwd.banks = build_banks(episode, params, &fwd.fusion_calls);
    std::vector<Matrix> maps;
    for (std::size_t l = 0; l < episode.query.size(); ++l) {
        Matrix attention;
        ClassProbMap level = predict_class_probs(fwd.banks[l], params.prediction.w_p, episode.query[l], attention);
        Matrix up = resample_nearest(level.probs, level.height, level.width, episode.out_height, episode.out_width);
        fwd.prediction.levels.push_back({episode.out_height, episode.out_width, up});
        maps.push_back(std::move(up));
        fwd.attention.push_back(std::move(attention));
        fwd.level_maps.push_back(std::move(level));
    }
    fwd.prediction.logits = multi_level_fuse(maps, params.prediction.fusion);
    fwd.prediction.final = {episode.out_height, episode.out_width, softmax_rows(fwd.prediction.logits)};
    return fwd;
}

}  // namespace mproto
