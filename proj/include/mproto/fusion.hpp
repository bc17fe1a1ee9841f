#pragma once

#include <cmath>
#include <vector>

#include "mproto/numerics.hpp"
#include "mproto/prototypes.hpp"

namespace mproto {

/// Background penalty of the fusion attention. Stored as alpha = exp(rho) so
/// that gradient steps on rho keep alpha non-negative.
struct FusionParams {
    double rho = 0.0;

    double alpha() const noexcept { return std::exp(rho); }
    static FusionParams from_alpha(double alpha) { return {std::log(alpha)}; }
};

/// Fused prototypes of one class: textual rows first, then visual rows.
struct FusedPrototypes {
    ClassId class_id = 0;
    Matrix vectors;
    std::vector<Modality> modality;
    /// Slot within the modality, inherited from the input prototype.
    std::vector<int> slots;

    std::size_t size() const noexcept { return vectors.rows(); }
};

/// rows x (n_txt + h*w) penalty: zero on the textual columns, 1 - m on each
/// cell column, identical across rows.
Matrix background_bias(const SoftMask& support_mask, std::size_t n_txt, std::size_t rows);

/// Cross-attention with queries [P_txt; P_img], keys = values = [P_txt; F_vis]
/// and the background penalty subtracted from the scaled logits.
FusedPrototypes complementary_fuse(const PrototypeSet& textual, const PrototypeSet& visual,
                                   const FeatureMap& support_features, const SoftMask& support_mask,
                                   const FusionParams& params);

/// Scaled dot-product attention with an additive penalty:
/// softmax(Q K^T / sqrt(D) - alpha * bias) K.
struct BiasedAttention {
    Matrix output;
    /// Post-softmax weights, rows x keys.
    Matrix weights;
};

BiasedAttention biased_attention(const Matrix& queries, const Matrix& keys, const Matrix& bias, double alpha);

struct BiasedAttentionGrad {
    Matrix d_queries;
    /// Includes the key and the value roles of `keys`.
    Matrix d_keys;
    double d_alpha = 0.0;
};

/// Vector-Jacobian product of biased_attention given dL/d(output).
BiasedAttentionGrad biased_attention_backward(const Matrix& queries, const Matrix& keys, const Matrix& bias,
                                              const Matrix& weights, const Matrix& d_output);

/// Slot-wise arithmetic mean over several fused sets of the same class
/// (k-shot aggregation). Rows are ordered textual slots then visual slots.
FusedPrototypes average_fused(const std::vector<FusedPrototypes>& shots);

}  // namespace mproto
