#include "mproto/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mproto/error.hpp"

namespace mproto {

Matrix PrototypeBank::labels() const {
    Matrix out(entries.size(), classes.size());
    for (std::size_t e = 0; e < entries.size(); ++e) {
        out(e, static_cast<std::size_t>(entries[e].class_index)) = 1.0;
    }
    return out;
}

PrototypeBank PrototypeBank::from_fused(const std::vector<FusedPrototypes>& per_class, int n) {
    PrototypeBank bank;
    std::size_t total = 0;
    std::size_t dim = 0;
    for (const auto& f : per_class) {
        total += f.size();
        if (f.size() > 0) {
            dim = f.vectors.cols();
        }
    }
    bank.vectors = Matrix(total, dim);
    std::size_t row = 0;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const auto& f = per_class[c];
        if (f.size() > 0 && f.vectors.cols() != dim) {
            throw ShapeError("PrototypeBank: class " + std::to_string(f.class_id) + " has dim " +
                             std::to_string(f.vectors.cols()) + ", expected " + std::to_string(dim));
        }
        bank.classes.push_back(f.class_id);
        for (std::size_t r = 0; r < f.size(); ++r) {
            const int slot = f.modality[r] == Modality::textual ? f.slots[r] : n + f.slots[r];
            bank.entries.push_back({static_cast<int>(c), slot});
            std::copy(f.vectors.row(r).begin(), f.vectors.row(r).end(), bank.vectors.row(row).begin());
            ++row;
        }
    }
    return bank;
}

std::vector<int> ClassProbMap::argmax() const {
    std::vector<int> out(probs.rows(), 0);
    for (std::size_t p = 0; p < probs.rows(); ++p) {
        const auto row = probs.row(p);
        out[p] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

namespace {

void check_bank(const PrototypeBank& bank, const std::vector<double>& w_p, const FeatureMap& query) {
    if (bank.entries.empty() || bank.classes.empty()) {
        throw EmptyBankError("predict_class_probs: prototype bank is empty");
    }
    if (bank.vectors.rows() != bank.entries.size()) {
        throw ShapeError("predict_class_probs: bank has " + std::to_string(bank.vectors.rows()) + " vectors for " +
                         std::to_string(bank.entries.size()) + " entries");
    }
    if (bank.vectors.cols() != static_cast<std::size_t>(query.dim())) {
        throw ShapeError("predict_class_probs: prototype dim " + std::to_string(bank.vectors.cols()) +
                         " != query dim " + std::to_string(query.dim()));
    }
    for (const auto& e : bank.entries) {
        if (e.slot < 0 || static_cast<std::size_t>(e.slot) >= w_p.size()) {
            throw ShapeError("predict_class_probs: slot " + std::to_string(e.slot) + " outside " +
                             std::to_string(w_p.size()) + " slot weights");
        }
        if (e.class_index < 0 || static_cast<std::size_t>(e.class_index) >= bank.classes.size()) {
            throw ShapeError("predict_class_probs: entry class index out of range");
        }
    }
}

}  // namespace

Matrix group_by_class(const Matrix& attention, const PrototypeBank& bank) {
    Matrix out(attention.rows(), bank.classes.size());
    for (std::size_t p = 0; p < attention.rows(); ++p) {
        const auto a = attention.row(p);
        auto o = out.row(p);
        for (std::size_t e = 0; e < bank.entries.size(); ++e) {
            o[static_cast<std::size_t>(bank.entries[e].class_index)] += a[e];
        }
    }
    return out;
}

ClassProbMap predict_class_probs(const PrototypeBank& bank, const std::vector<double>& w_p, const FeatureMap& query,
                                 Matrix& attention) {
    check_bank(bank, w_p, query);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.dim()));
    Matrix keys = bank.vectors;
    for (std::size_t e = 0; e < bank.entries.size(); ++e) {
        const double w = w_p[static_cast<std::size_t>(bank.entries[e].slot)];
        for (double& x : keys.row(e)) {
            x *= w;
        }
    }
    attention = matmul_transposed(query.cells(), keys);
    for (double& x : attention.data()) {
        x *= inv_sqrt_d;
    }
    attention = softmax_rows(attention);
    return {query.height(), query.width(), group_by_class(attention, bank)};
}

ClassProbMap predict_class_probs(const PrototypeBank& bank, const std::vector<double>& w_p, const FeatureMap& query) {
    Matrix attention;
    return predict_class_probs(bank, w_p, query, attention);
}

PredictionGrad predict_class_probs_backward(const PrototypeBank& bank, const std::vector<double>& w_p,
                                            const FeatureMap& query, const Matrix& attention, const Matrix& d_probs) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.dim()));
    const std::size_t entries = bank.entries.size();
    const auto dim = static_cast<std::size_t>(query.dim());

    // dL/d(logit) for every pixel and entry.
    Matrix d_logits(attention.rows(), entries);
    for (std::size_t p = 0; p < attention.rows(); ++p) {
        const auto a = attention.row(p);
        const auto dp = d_probs.row(p);
        double inner = 0.0;
        for (std::size_t e = 0; e < entries; ++e) {
            inner += a[e] * dp[static_cast<std::size_t>(bank.entries[e].class_index)];
        }
        auto dz = d_logits.row(p);
        for (std::size_t e = 0; e < entries; ++e) {
            dz[e] = a[e] * (dp[static_cast<std::size_t>(bank.entries[e].class_index)] - inner) * inv_sqrt_d;
        }
    }

    // logit = w_slot * (f . p) / sqrt(D), so the two factors share one pass.
    const Matrix d_keys_unweighted = matmul(transpose(d_logits), query.cells());  // entries x D
    PredictionGrad g;
    g.d_w_p.assign(w_p.size(), 0.0);
    g.d_vectors = Matrix(entries, dim);
    for (std::size_t e = 0; e < entries; ++e) {
        const auto slot = static_cast<std::size_t>(bank.entries[e].slot);
        const auto dk = d_keys_unweighted.row(e);
        g.d_w_p[slot] += dot(dk, bank.vectors.row(e));
        auto dv = g.d_vectors.row(e);
        for (std::size_t d = 0; d < dim; ++d) {
            dv[d] = w_p[slot] * dk[d];
        }
    }
    return g;
}

namespace {

void check_fusion(const LevelFusion& fusion) {
    const std::size_t d = fusion.width();
    if (fusion.levels() < 1 || d < 1) {
        throw ShapeError("multi_level_fuse: need at least one level and width >= 1");
    }
    if (fusion.b.size() != fusion.levels() || fusion.w_out.size() != d) {
        throw ShapeError("multi_level_fuse: inconsistent parameter counts");
    }
    for (std::size_t l = 0; l < fusion.levels(); ++l) {
        if (fusion.w[l].rows() != d || fusion.w[l].cols() != d || fusion.b[l].size() != d) {
            throw ShapeError("multi_level_fuse: level " + std::to_string(l + 1) + " weights are not " +
                             std::to_string(d) + "x" + std::to_string(d));
        }
    }
}

void check_levels(const std::vector<Matrix>& levels, const LevelFusion& fusion) {
    check_fusion(fusion);
    if (levels.size() != fusion.levels()) {
        throw ShapeError("multi_level_fuse: " + std::to_string(levels.size()) + " maps for " +
                         std::to_string(fusion.levels()) + " levels");
    }
    for (const auto& m : levels) {
        if (m.rows() != levels.front().rows() || m.cols() != levels.front().cols()) {
            throw ShapeError("multi_level_fuse: level maps differ in shape");
        }
    }
}

// Forward for a single pixel/class; pre and post hold u_l and o_l per level.
double fuse_one(const std::vector<Matrix>& levels, const LevelFusion& f, std::size_t p, std::size_t c,
                std::vector<std::vector<double>>& pre, std::vector<std::vector<double>>& post) {
    const std::size_t d = f.width();
    const std::size_t L = f.levels();
    std::vector<double> input(d);
    for (std::size_t l = 0; l < L; ++l) {
        const double y = levels[l](p, c);
        const auto& prev = l == 0 ? input : post[l - 1];
        if (l == 0) {
            for (std::size_t i = 0; i < d; ++i) {
                input[i] = f.w_in[i] * y;
            }
        }
        for (std::size_t i = 0; i < d; ++i) {
            double acc = f.b[l][i];
            for (std::size_t j = 0; j < d; ++j) {
                acc += f.w[l](i, j) * prev[j];
            }
            pre[l][i] = acc;
            post[l][i] = std::max(0.0, acc) + (l == 0 ? 0.0 : f.w_in[i] * y);
        }
    }
    double out = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        out += f.w_out[i] * post[L - 1][i];
    }
    return out;
}

LevelFusion zero_like(const LevelFusion& f) {
    LevelFusion z;
    z.w_in.assign(f.width(), 0.0);
    z.w_out.assign(f.width(), 0.0);
    for (std::size_t l = 0; l < f.levels(); ++l) {
        z.w.emplace_back(f.width(), f.width(), 0.0);
        z.b.emplace_back(f.width(), 0.0);
    }
    return z;
}

}  // namespace

Matrix multi_level_fuse(const std::vector<Matrix>& levels, const LevelFusion& fusion) {
    check_levels(levels, fusion);
    const std::size_t d = fusion.width();
    std::vector<std::vector<double>> pre(fusion.levels(), std::vector<double>(d));
    std::vector<std::vector<double>> post(fusion.levels(), std::vector<double>(d));
    Matrix out(levels.front().rows(), levels.front().cols());
    for (std::size_t p = 0; p < out.rows(); ++p) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out(p, c) = fuse_one(levels, fusion, p, c, pre, post);
        }
    }
    return out;
}

LevelFusionGrad multi_level_fuse_backward(const std::vector<Matrix>& levels, const LevelFusion& fusion,
                                          const Matrix& d_out) {
    check_levels(levels, fusion);
    const std::size_t d = fusion.width();
    const std::size_t L = fusion.levels();
    LevelFusionGrad g;
    g.d_params = zero_like(fusion);
    for (const auto& m : levels) {
        g.d_levels.emplace_back(m.rows(), m.cols(), 0.0);
    }
    std::vector<std::vector<double>> pre(L, std::vector<double>(d));
    std::vector<std::vector<double>> post(L, std::vector<double>(d));
    std::vector<double> d_o(d);
    std::vector<double> d_u(d);
    std::vector<double> input(d);

    for (std::size_t p = 0; p < d_out.rows(); ++p) {
        for (std::size_t c = 0; c < d_out.cols(); ++c) {
            const double g_out = d_out(p, c);
            if (g_out == 0.0) {
                continue;
            }
            fuse_one(levels, fusion, p, c, pre, post);
            for (std::size_t i = 0; i < d; ++i) {
                g.d_params.w_out[i] += g_out * post[L - 1][i];
                d_o[i] = g_out * fusion.w_out[i];
            }
            for (std::size_t l = L; l-- > 0;) {
                const double y = levels[l](p, c);
                if (l > 0) {
                    // Skip branch W_in y^l.
                    for (std::size_t i = 0; i < d; ++i) {
                        g.d_params.w_in[i] += d_o[i] * y;
                        g.d_levels[l](p, c) += d_o[i] * fusion.w_in[i];
                    }
                } else {
                    for (std::size_t i = 0; i < d; ++i) {
                        input[i] = fusion.w_in[i] * y;
                    }
                }
                const auto& prev = l == 0 ? input : post[l - 1];
                for (std::size_t i = 0; i < d; ++i) {
                    d_u[i] = pre[l][i] > 0.0 ? d_o[i] : 0.0;
                    g.d_params.b[l][i] += d_u[i];
                    for (std::size_t j = 0; j < d; ++j) {
                        g.d_params.w[l](i, j) += d_u[i] * prev[j];
                    }
                }
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        acc += fusion.w[l](i, j) * d_u[i];
                    }
                    d_o[j] = acc;
                }
                if (l == 0) {
                    // d_o now holds dL/d(W_in y^1).
                    for (std::size_t i = 0; i < d; ++i) {
                        g.d_params.w_in[i] += d_o[i] * y;
                        g.d_levels[0](p, c) += d_o[i] * fusion.w_in[i];
                    }
                }
            }
        }
    }
    return g;
}

namespace {

std::vector<std::size_t> nearest_index(int src_len, int dst_len) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(dst_len));
    for (int i = 0; i < dst_len; ++i) {
        idx[static_cast<std::size_t>(i)] =
            static_cast<std::size_t>((static_cast<long long>(i) * src_len) / dst_len);
    }
    return idx;
}

}  // namespace

Matrix resample_nearest(const Matrix& map, int src_h, int src_w, int dst_h, int dst_w) {
    if (map.rows() != static_cast<std::size_t>(src_h) * src_w) {
        throw ShapeError("resample_nearest: map rows do not match source grid");
    }
    if (src_h == dst_h && src_w == dst_w) {
        return map;
    }
    const auto rows = nearest_index(src_h, dst_h);
    const auto cols = nearest_index(src_w, dst_w);
    Matrix out(static_cast<std::size_t>(dst_h) * dst_w, map.cols());
    for (int y = 0; y < dst_h; ++y) {
        for (int x = 0; x < dst_w; ++x) {
            const auto src = map.row(rows[static_cast<std::size_t>(y)] * src_w + cols[static_cast<std::size_t>(x)]);
            std::copy(src.begin(), src.end(), out.row(static_cast<std::size_t>(y) * dst_w + x).begin());
        }
    }
    return out;
}

Matrix resample_nearest_adjoint(const Matrix& d_map, int src_h, int src_w, int dst_h, int dst_w) {
    if (src_h == dst_h && src_w == dst_w) {
        return d_map;
    }
    const auto rows = nearest_index(src_h, dst_h);
    const auto cols = nearest_index(src_w, dst_w);
    Matrix out(static_cast<std::size_t>(src_h) * src_w, d_map.cols());
    for (int y = 0; y < dst_h; ++y) {
        for (int x = 0; x < dst_w; ++x) {
            const auto src = d_map.row(static_cast<std::size_t>(y) * dst_w + x);
            auto dst = out.row(rows[static_cast<std::size_t>(y)] * src_w + cols[static_cast<std::size_t>(x)]);
            for (std::size_t c = 0; c < src.size(); ++c) {
                dst[c] += src[c];
            }
        }
    }
    return out;
}

FullPrediction forward_full(const FeaturePyramid& query, const std::vector<PrototypeBank>& banks,
                            const PredictionParams& params, int out_h, int out_w) {
    if (query.size() != banks.size() || query.size() != params.fusion.levels()) {
        throw ShapeError("forward_full: " + std::to_string(query.size()) + " query levels, " +
                         std::to_string(banks.size()) + " banks, " + std::to_string(params.fusion.levels()) +
                         " fusion levels");
    }
    for (const auto& bank : banks) {
        if (bank.classes != banks.front().classes) {
            throw ShapeError("forward_full: class registry differs across levels");
        }
    }
    FullPrediction out;
    std::vector<Matrix> maps;
    for (std::size_t l = 0; l < query.size(); ++l) {
        const ClassProbMap level = predict_class_probs(banks[l], params.w_p, query[l]);
        Matrix up = resample_nearest(level.probs, level.height, level.width, out_h, out_w);
        out.levels.push_back({out_h, out_w, up});
        maps.push_back(std::move(up));
    }
    out.logits = multi_level_fuse(maps, params.fusion);
    out.final = {out_h, out_w, softmax_rows(out.logits)};
    return out;
}

}  // namespace mproto
