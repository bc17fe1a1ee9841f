#include "mproto/fusion.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "mproto/error.hpp"

namespace mproto {

Matrix background_bias(const SoftMask& support_mask, std::size_t n_txt, std::size_t rows) {
    const std::size_t cells = support_mask.weights.size();
    Matrix bias(rows, n_txt + cells, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = bias.row(r);
        for (std::size_t c = 0; c < cells; ++c) {
            row[n_txt + c] = 1.0 - support_mask.weights[c];
        }
    }
    return bias;
}

BiasedAttention biased_attention(const Matrix& queries, const Matrix& keys, const Matrix& bias, double alpha) {
    if (queries.cols() != keys.cols()) {
        throw ShapeError("biased_attention: query dim " + std::to_string(queries.cols()) + " != key dim " +
                         std::to_string(keys.cols()));
    }
    if (bias.rows() != queries.rows() || bias.cols() != keys.rows()) {
        throw ShapeError("biased_attention: bias shape does not match queries x keys");
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
    Matrix logits = matmul_transposed(queries, keys);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        logits.data()[i] = logits.data()[i] * inv_sqrt_d - alpha * bias.data()[i];
    }
    BiasedAttention out;
    out.weights = softmax_rows(logits);
    out.output = matmul(out.weights, keys);
    return out;
}

BiasedAttentionGrad biased_attention_backward(const Matrix& queries, const Matrix& keys, const Matrix& bias,
                                              const Matrix& weights, const Matrix& d_output) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
    BiasedAttentionGrad g;
    // Value role.
    g.d_keys = matmul(transpose(weights), d_output);

    Matrix d_weights = matmul_transposed(d_output, keys);
    Matrix d_logits(weights.rows(), weights.cols());
    for (std::size_t i = 0; i < weights.rows(); ++i) {
        const auto a = weights.row(i);
        const auto da = d_weights.row(i);
        const double inner = dot(a, da);
        auto ds = d_logits.row(i);
        for (std::size_t j = 0; j < a.size(); ++j) {
            ds[j] = a[j] * (da[j] - inner);
        }
    }
    for (std::size_t i = 0; i < d_logits.size(); ++i) {
        g.d_alpha -= d_logits.data()[i] * bias.data()[i];
    }
    g.d_queries = scale(matmul(d_logits, keys), inv_sqrt_d);
    // Key role.
    g.d_keys = add(g.d_keys, scale(matmul(transpose(d_logits), queries), inv_sqrt_d));
    return g;
}

FusedPrototypes complementary_fuse(const PrototypeSet& textual, const PrototypeSet& visual,
                                   const FeatureMap& support_features, const SoftMask& support_mask,
                                   const FusionParams& params) {
    if (support_features.height() != support_mask.height || support_features.width() != support_mask.width) {
        throw ShapeError("complementary_fuse: support mask grid does not match features");
    }
    const auto dim = static_cast<std::size_t>(support_features.dim());
    for (const auto* set : {&textual, &visual}) {
        if (set->size() > 0 && static_cast<std::size_t>(set->dim()) != dim) {
            throw ShapeError("complementary_fuse: prototype dim " + std::to_string(set->dim()) +
                             " != feature dim " + std::to_string(dim));
        }
    }
    Matrix txt = textual.matrix(Modality::textual);
    Matrix img = visual.matrix(Modality::visual);
    if (txt.cols() == 0) {
        txt = Matrix(0, dim);
    }
    if (img.cols() == 0) {
        img = Matrix(0, dim);
    }
    const Matrix queries = vstack(txt, img);
    const Matrix keys = vstack(txt, support_features.cells());
    const Matrix bias = background_bias(support_mask, txt.rows(), queries.rows());

    FusedPrototypes fused;
    fused.class_id = textual.size() > 0 ? textual.class_id : visual.class_id;
    fused.vectors = biased_attention(queries, keys, bias, params.alpha()).output;
    for (const auto* set : {&textual, &visual}) {
        const Modality want = set == &textual ? Modality::textual : Modality::visual;
        for (const auto& e : set->entries) {
            if (e.modality == want) {
                fused.modality.push_back(want);
                fused.slots.push_back(e.slot);
            }
        }
    }
    return fused;
}

FusedPrototypes average_fused(const std::vector<FusedPrototypes>& shots) {
    if (shots.empty()) {
        throw EmptySupportError("average_fused: no shots");
    }
    const std::size_t dim = shots.front().vectors.cols();
    // Keyed by (modality, slot) so textual rows sort before visual rows.
    std::map<std::pair<int, int>, std::pair<std::vector<double>, int>> acc;
    for (const auto& shot : shots) {
        if (shot.vectors.cols() != dim) {
            throw ShapeError("average_fused: shots disagree on dim");
        }
        for (std::size_t r = 0; r < shot.size(); ++r) {
            const std::pair<int, int> key{shot.modality[r] == Modality::textual ? 0 : 1, shot.slots[r]};
            auto& [sum, count] = acc[key];
            if (sum.empty()) {
                sum.assign(dim, 0.0);
            }
            const auto row = shot.vectors.row(r);
            for (std::size_t d = 0; d < dim; ++d) {
                sum[d] += row[d];
            }
            ++count;
        }
    }
    FusedPrototypes out;
    out.class_id = shots.front().class_id;
    out.vectors = Matrix(acc.size(), dim);
    std::size_t r = 0;
    for (const auto& [key, value] : acc) {
        const auto& [sum, count] = value;
        auto row = out.vectors.row(r++);
        for (std::size_t d = 0; d < dim; ++d) {
            row[d] = sum[d] / count;
        }
        out.modality.push_back(key.first == 0 ? Modality::textual : Modality::visual);
        out.slots.push_back(key.second);
    }
    return out;
}

}  // namespace mproto
