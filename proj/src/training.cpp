#include "mproto/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mproto/error.hpp"

namespace mproto {

void LossConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("loss: lambda must be a finite value >= 0");
    }
    if (!(eps > 0.0 && eps <= 1e-3)) {
        throw ConfigError("loss: eps must lie in (0, 1e-3]");
    }
}

double cross_entropy(const ClassProbMap& probs, const std::vector<int>& target, double eps) {
    if (target.size() != probs.pixel_count()) {
        throw ShapeError("cross_entropy: " + std::to_string(target.size()) + " targets for " +
                         std::to_string(probs.pixel_count()) + " pixels");
    }
    if (target.empty()) {
        throw ShapeError("cross_entropy: empty prediction");
    }
    double acc = 0.0;
    for (std::size_t p = 0; p < target.size(); ++p) {
        const int t = target[p];
        if (t < 0 || static_cast<std::size_t>(t) >= probs.class_count()) {
            throw LabelError("cross_entropy: pixel " + std::to_string(p) + " has invalid class index " +
                             std::to_string(t));
        }
        acc -= std::log(std::max(probs.probs(p, static_cast<std::size_t>(t)), eps));
    }
    return acc / static_cast<double>(target.size());
}

double total_loss(const ClassProbMap& final, const std::vector<ClassProbMap>& intermediates,
                  const std::vector<int>& target, const LossConfig& cfg) {
    cfg.validate();
    double aux = 0.0;
    for (const auto& level : intermediates) {
        aux += cross_entropy(level, target, cfg.eps);
    }
    return cross_entropy(final, target, cfg.eps) + cfg.lambda * aux;
}

double episode_loss(const PreparedEpisode& episode, const ModelParams& params, const LossConfig& cfg) {
    const EpisodeForward fwd = forward_episode(episode, params);
    return total_loss(fwd.prediction.final, fwd.prediction.levels, episode.target, cfg);
}

namespace {

// dL/dp for a clamped CE term with weight `w`, added into `grad`.
void add_ce_grad(const Matrix& probs, const std::vector<int>& target, double eps, double w, Matrix& grad) {
    const double inv_n = 1.0 / static_cast<double>(target.size());
    for (std::size_t p = 0; p < target.size(); ++p) {
        const auto t = static_cast<std::size_t>(target[p]);
        const double q = probs(p, t);
        if (q > eps) {
            grad(p, t) -= w * inv_n / q;
        }
    }
}

}  // namespace

LossAndGradient episode_loss_and_gradient(const PreparedEpisode& episode, const ModelParams& params,
                                          const LossConfig& cfg) {
    const EpisodeForward fwd = forward_episode(episode, params);
    LossAndGradient out;
    out.loss = total_loss(fwd.prediction.final, fwd.prediction.levels, episode.target, cfg);

    const auto& final = fwd.prediction.final.probs;
    const std::size_t pixels = final.rows();
    const std::size_t classes = final.cols();

    Matrix d_final(pixels, classes);
    add_ce_grad(final, episode.target, cfg.eps, 1.0, d_final);
    Matrix d_logits(pixels, classes);
    for (std::size_t p = 0; p < pixels; ++p) {
        const double inner = dot(final.row(p), d_final.row(p));
        for (std::size_t c = 0; c < classes; ++c) {
            d_logits(p, c) = final(p, c) * (d_final(p, c) - inner);
        }
    }

    std::vector<Matrix> maps;
    for (const auto& m : fwd.prediction.levels) {
        maps.push_back(m.probs);
    }
    LevelFusionGrad fuse_grad = multi_level_fuse_backward(maps, params.prediction.fusion, d_logits);

    ModelParams grad = ModelParams::zeros(params.shape);
    grad.prediction.fusion = std::move(fuse_grad.d_params);
    double d_alpha = 0.0;

    for (std::size_t l = 0; l < maps.size(); ++l) {
        Matrix& d_level = fuse_grad.d_levels[l];
        add_ce_grad(maps[l], episode.target, cfg.eps, cfg.lambda, d_level);
        const ClassProbMap& grid = fwd.level_maps[l];
        const Matrix d_grid =
            resample_nearest_adjoint(d_level, grid.height, grid.width, episode.out_height, episode.out_width);
        const PredictionGrad pg = predict_class_probs_backward(fwd.banks[l], params.prediction.w_p,
                                                               episode.query[l], fwd.attention[l], d_grid);
        for (std::size_t s = 0; s < pg.d_w_p.size(); ++s) {
            grad.prediction.w_p[s] += pg.d_w_p[s];
        }

        // Bank rows are contiguous per class, in class order.
        std::size_t row = 0;
        for (std::size_t ci = 0; ci < episode.classes.size(); ++ci) {
            const auto& cls = episode.classes[ci];
            const auto& calls = fwd.fusion_calls[l][ci];
            if (calls.empty()) {
                const std::size_t rows = cls.is_background ? params.background_text.rows() : cls.text.rows();
                if (cls.is_background) {
                    for (std::size_t r = 0; r < rows; ++r) {
                        const auto src = pg.d_vectors.row(row + r);
                        auto dst = grad.background_text.row(r);
                        for (std::size_t d = 0; d < dst.size(); ++d) {
                            dst[d] += src[d];
                        }
                    }
                }
                row += rows;
                continue;
            }
            const std::size_t n_txt = cls.is_background ? params.background_text.rows() : cls.text.rows();
            std::size_t max_visual = 0;
            for (const auto& call : calls) {
                max_visual = std::max(max_visual, call.queries.rows() - n_txt);
            }
            // Shots sharing a slot were averaged; split the gradient evenly.
            std::vector<double> visual_count(max_visual, 0.0);
            for (const auto& call : calls) {
                for (std::size_t v = 0; v < call.queries.rows() - n_txt; ++v) {
                    visual_count[v] += 1.0;
                }
            }
            const auto shots = static_cast<double>(calls.size());
            for (const auto& call : calls) {
                Matrix d_out(call.queries.rows(), call.queries.cols());
                for (std::size_t r = 0; r < call.queries.rows(); ++r) {
                    const bool textual = r < n_txt;
                    const std::size_t fused_row = row + r;  // text rows first, then visual slots in order
                    const double share = textual ? 1.0 / shots : 1.0 / visual_count[r - n_txt];
                    const auto src = pg.d_vectors.row(fused_row);
                    auto dst = d_out.row(r);
                    for (std::size_t d = 0; d < dst.size(); ++d) {
                        dst[d] = share * src[d];
                    }
                }
                const BiasedAttentionGrad ag =
                    biased_attention_backward(call.queries, call.keys, call.bias, call.weights, d_out);
                d_alpha += ag.d_alpha;
                if (cls.is_background) {
                    for (std::size_t r = 0; r < n_txt; ++r) {
                        auto dst = grad.background_text.row(r);
                        const auto dq = ag.d_queries.row(r);
                        const auto dk = ag.d_keys.row(r);
                        for (std::size_t d = 0; d < dst.size(); ++d) {
                            dst[d] += dq[d] + dk[d];
                        }
                    }
                }
            }
            row += n_txt + max_visual;
        }
    }
    grad.fusion.rho = params.fusion.alpha() * d_alpha;
    out.gradient = grad.flatten();
    return out;
}

TrainState sgd_step(const TrainState& state, std::span<const double> grads) {
    std::vector<double> flat = state.params.flatten();
    if (grads.size() != flat.size()) {
        throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(flat.size()) + " parameters");
    }
    if (!std::all_of(grads.begin(), grads.end(), [](double g) { return std::isfinite(g); })) {
        throw DivergenceError("sgd_step: non-finite gradient at step " + std::to_string(state.step));
    }
    for (std::size_t i = 0; i < flat.size(); ++i) {
        flat[i] -= state.lr * grads[i];
    }
    if (!std::all_of(flat.begin(), flat.end(), [](double x) { return std::isfinite(x); })) {
        throw DivergenceError("sgd_step: update produced non-finite parameters at step " +
                              std::to_string(state.step));
    }
    TrainState next = state;
    next.params.assign(flat);
    ++next.step;
    return next;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss_fn,
                                     std::span<const double> params, double h) {
    if (!(h > 0.0)) {
        throw ConfigError("finite_diff_grad: step must be positive");
    }
    std::vector<double> x(params.begin(), params.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = loss_fn(x);
        x[i] = orig - h;
        const double down = loss_fn(x);
        x[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

EpisodeSampler::EpisodeSampler(const Dataset& dataset, int n, std::uint64_t seed)
    : dataset_(dataset), rng_(seed), n_(n) {
    for (ClassId c : dataset.registry.seen) {
        if (c != dataset.registry.background && !scenes_with(dataset.train, c).empty()) {
            foreground_.push_back(c);
        }
    }
    if (foreground_.empty()) {
        throw EpisodeError("EpisodeSampler: no seen foreground class appears in the training scenes");
    }
}

Episode EpisodeSampler::next() {
    const auto& reg = dataset_.registry;
    std::uniform_int_distribution<std::size_t> pick_class(0, foreground_.size() - 1);
    const ClassId target = foreground_[pick_class(rng_)];

    const auto supports = scenes_with(dataset_.train, target);
    std::uniform_int_distribution<std::size_t> pick_support(0, supports.size() - 1);
    const std::size_t support = supports[pick_support(rng_)];
    auto queries = scenes_with(dataset_.train, target, support);
    if (queries.empty()) {
        queries = supports;
    }
    std::uniform_int_distribution<std::size_t> pick_query(0, queries.size() - 1);
    const Scene& query = dataset_.train[queries[pick_query(rng_)]];
    const Scene& shot_scene = dataset_.train[support];

    Episode ep;
    ep.background = reg.background;
    std::vector<ClassId> annotated;
    std::vector<ClassId> shown;
    for (ClassId c : reg.seen) {
        if (c == reg.background) {
            continue;
        }
        ep.classes.push_back(c);
        if (auto it = dataset_.embeddings.find(c); it != dataset_.embeddings.end()) {
            ep.texts.emplace(c, it->second);
        }
        const std::size_t pixels = shot_scene.labels.count(c);
        if (pixels > 0) {
            annotated.push_back(c);
        }
        if (pixels >= static_cast<std::size_t>(n_)) {
            shown.push_back(c);
        }
    }
    ep.shots.push_back(make_shot(shot_scene, annotated, shown));
    ep.query = query.features;
    LabelMap gt = query.labels;
    for (ClassId& c : gt.labels) {
        if (!reg.is_seen(c)) {
            c = reg.background;
        }
    }
    ep.out_height = gt.height;
    ep.out_width = gt.width;
    ep.query_labels = std::move(gt);
    ep.seed = rng_();
    return ep;
}

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const std::function<void(long long, double)>& on_step) {
    cfg.loss.validate();
    if (!(cfg.lr > 0.0)) {
        throw ConfigError("train: lr must be positive");
    }
    TrainResult result;
    result.state.params = ModelParams::initialize(cfg.shape, cfg.seed);
    result.state.lr = cfg.lr;
    result.state.seed = cfg.seed;
    EpisodeSampler sampler(dataset, cfg.shape.n, cfg.seed ^ 0x5eedULL);
    for (int s = 0; s < cfg.steps; ++s) {
        const PreparedEpisode prep = prepare_episode(sampler.next(), cfg.shape.n);
        const LossAndGradient lg = episode_loss_and_gradient(prep, result.state.params, cfg.loss);
        result.state = sgd_step(result.state, lg.gradient);
        result.losses.push_back(lg.loss);
        if (on_step) {
            on_step(result.state.step, lg.loss);
        }
    }
    return result;
}

}  // namespace mproto
