#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "mproto/error.hpp"
#include "mproto/model.hpp"
#include "mproto/prediction.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace mproto;
using namespace mproto::testing;

namespace {

PrototypeBank bank_of(std::vector<ClassId> classes, std::vector<PrototypeBank::Entry> entries, Matrix vectors) {
    PrototypeBank b;
    b.classes = std::move(classes);
    b.entries = std::move(entries);
    b.vectors = std::move(vectors);
    return b;
}

PrototypeBank random_bank(std::mt19937_64& rng, int classes, int n, int dim, bool textual_only, int visual_mult = 1) {
    std::vector<FusedPrototypes> fused;
    std::uniform_int_distribution<int> count(1, n);
    for (int c = 0; c < classes; ++c) {
        FusedPrototypes f;
        f.class_id = c;
        const int t = count(rng);
        const int v = textual_only ? 0 : count(rng) * visual_mult;
        f.vectors = random_matrix(rng, static_cast<std::size_t>(t + v), static_cast<std::size_t>(dim));
        for (int r = 0; r < t; ++r) {
            f.modality.push_back(Modality::textual);
            f.slots.push_back(r);
        }
        for (int r = 0; r < v; ++r) {
            f.modality.push_back(Modality::visual);
            f.slots.push_back(r % n);
        }
        fused.push_back(f);
    }
    return PrototypeBank::from_fused(fused, n);
}

std::vector<OracleEntry> entries_of(const PrototypeBank& b) {
    std::vector<OracleEntry> out;
    for (std::size_t e = 0; e < b.entry_count(); ++e) {
        const auto row = b.vectors.row(e);
        out.push_back({b.entries[e].class_index, b.entries[e].slot, {row.begin(), row.end()}});
    }
    return out;
}

LevelFusion unit_fusion(int levels, double w, double b) {
    LevelFusion f;
    f.w_in = {1.0};
    f.w_out = {1.0};
    for (int l = 0; l < levels; ++l) {
        f.w.push_back(Matrix{{w}});
        f.b.push_back({b});
    }
    return f;
}

LevelFusion random_fusion(std::mt19937_64& rng, int levels, int d) {
    LevelFusion f;
    f.w_in = random_vector(rng, static_cast<std::size_t>(d));
    f.w_out = random_vector(rng, static_cast<std::size_t>(d));
    for (int l = 0; l < levels; ++l) {
        f.w.push_back(random_matrix(rng, static_cast<std::size_t>(d), static_cast<std::size_t>(d)));
        f.b.push_back(random_vector(rng, static_cast<std::size_t>(d), 0.3));
    }
    return f;
}

void expect_row_stochastic(const Matrix& m, double tol = 1e-9) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double s = 0.0;
        for (double v : m.row(r)) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0 + 1e-12);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, tol);
    }
}

}  // namespace

TEST(PredictClassProbs, TwoEntryEnumeration) {
    const PrototypeBank b = bank_of({0, 1}, {{0, 0}, {1, 0}}, Matrix{{1}, {-1}});
    const ClassProbMap p = predict_class_probs(b, {1.0}, FeatureMap(1, 1, Matrix{{2}}));
    const double e2 = std::exp(2.0);
    const double em2 = std::exp(-2.0);
    EXPECT_NEAR(p.probs(0, 0), e2 / (e2 + em2), 1e-15);
    EXPECT_NEAR(p.probs(0, 0), 0.9820, 1e-4);
}

TEST(PredictClassProbs, SingleClassIsCertain) {
    std::mt19937_64 rng(41);
    const PrototypeBank b = random_bank(rng, 1, 3, 4, false);
    const ClassProbMap p = predict_class_probs(b, std::vector<double>(6, 1.3), random_features(rng, 3, 3, 4));
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        EXPECT_DOUBLE_EQ(p.probs(i, 0), 1.0);
    }
}

TEST(PredictClassProbs, IdenticalEntriesGiveUniform) {
    std::mt19937_64 rng(42);
    const auto v = random_vector(rng, 3);
    Matrix vectors(8, 3);
    std::vector<PrototypeBank::Entry> entries;
    for (int e = 0; e < 8; ++e) {
        std::copy(v.begin(), v.end(), vectors.row(static_cast<std::size_t>(e)).begin());
        entries.push_back({e / 2, 0});
    }
    const ClassProbMap p = predict_class_probs(bank_of({0, 1, 2, 3}, entries, vectors), {0.7},
                                               random_features(rng, 2, 3, 3));
    for (double x : p.probs.data()) {
        EXPECT_NEAR(x, 0.25, 1e-15);
    }
}

TEST(PredictClassProbs, MatchesLoopOracle) {
    std::mt19937_64 rng(43);
    for (int t = 0; t < 20; ++t) {
        const PrototypeBank b = random_bank(rng, 3, 3, 4, t % 3 == 0);
        const auto w_p = random_vector(rng, 6);
        const FeatureMap q = random_features(rng, 2, 3, 4);
        const ClassProbMap p = predict_class_probs(b, w_p, q);
        const Rows expect = oracle_level(entries_of(b), 3, w_p, q);
        for (std::size_t i = 0; i < p.pixel_count(); ++i) {
            for (std::size_t c = 0; c < 3; ++c) {
                EXPECT_NEAR(p.probs(i, c), expect[i][c], 1e-13);
            }
        }
    }
}

TEST(PredictClassProbs, RowsNormalizedForElasticBanks) {
    std::mt19937_64 rng(44);
    for (int t = 0; t < 100; ++t) {
        const bool zero_shot = t % 3 == 0;
        const int mult = t % 3 == 1 ? 5 : 1;
        const PrototypeBank b = random_bank(rng, 1 + t % 4, 3, 5, zero_shot, mult);
        const ClassProbMap p =
            predict_class_probs(b, random_vector(rng, 6, 2.0), random_features(rng, 3, 4, 5, 3.0));
        expect_row_stochastic(p.probs);
    }
}

TEST(PredictClassProbs, GroupSumEqualsLabelProduct) {
    std::mt19937_64 rng(45);
    for (int t = 0; t < 20; ++t) {
        const PrototypeBank b = random_bank(rng, 4, 3, 3, false);
        Matrix attention;
        predict_class_probs(b, random_vector(rng, 6), random_features(rng, 3, 3, 3), attention);
        EXPECT_LE(max_abs_diff(group_by_class(attention, b), matmul(attention, b.labels())), 1e-12);
    }
}

TEST(PredictClassProbs, LargeSlotWeightPicksBestDotInSlot) {
    // D = 1, slot 0 carries one entry per class; scaling w_p[0] up makes the
    // entry with the largest f * p win.
    std::mt19937_64 rng(46);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int t = 0; t < 30; ++t) {
        Matrix vectors(6, 1);
        std::vector<PrototypeBank::Entry> entries;
        for (int c = 0; c < 3; ++c) {
            vectors(2 * static_cast<std::size_t>(c), 0) = g(rng);
            vectors(2 * static_cast<std::size_t>(c) + 1, 0) = g(rng);
            entries.push_back({c, 0});
            entries.push_back({c, 1});
        }
        const PrototypeBank b = bank_of({0, 1, 2}, entries, vectors);
        const double f = g(rng);
        int best = 0;
        for (int c = 1; c < 3; ++c) {
            if (f * vectors(2 * static_cast<std::size_t>(c), 0) > f * vectors(2 * static_cast<std::size_t>(best), 0)) {
                best = c;
            }
        }
        const ClassProbMap p = predict_class_probs(b, {1e4, 1.0}, FeatureMap(1, 1, Matrix{{f}}));
        EXPECT_EQ(p.argmax()[0], best);
    }
}

TEST(PredictClassProbs, Errors) {
    const FeatureMap q(1, 1, Matrix{{1, 2}});
    EXPECT_THROW(predict_class_probs(PrototypeBank{}, {1.0}, q), EmptyBankError);
    EXPECT_THROW(predict_class_probs(bank_of({0}, {{0, 0}}, Matrix{{1}}), {1.0}, q), ShapeError);
    EXPECT_THROW(predict_class_probs(bank_of({0}, {{0, 3}}, Matrix{{1, 1}}), {1.0, 1.0}, q), ShapeError);
}

TEST(PredictClassProbs, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(47);
    for (int t = 0; t < 5; ++t) {
        const PrototypeBank bank = random_bank(rng, 3, 2, 3, false);
        const auto w_p = random_vector(rng, 4);
        const FeatureMap q = random_features(rng, 2, 2, 3);
        const Matrix probe = random_matrix(rng, 4, 3);
        auto loss = [&](const PrototypeBank& b, const std::vector<double>& w) {
            const Matrix p = predict_class_probs(b, w, q).probs;
            double s = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                s += p.data()[i] * probe.data()[i];
            }
            return s;
        };
        Matrix attention;
        predict_class_probs(bank, w_p, q, attention);
        const PredictionGrad g = predict_class_probs_backward(bank, w_p, q, attention, probe);
        const double h = 1e-6;
        for (std::size_t i = 0; i < w_p.size(); ++i) {
            auto a = w_p;
            auto b = w_p;
            a[i] += h;
            b[i] -= h;
            EXPECT_LT(rel_err((loss(bank, a) - loss(bank, b)) / (2 * h), g.d_w_p[i]), 1e-6);
        }
        for (std::size_t i = 0; i < bank.vectors.size(); ++i) {
            PrototypeBank a = bank;
            PrototypeBank b = bank;
            a.vectors.data()[i] += h;
            b.vectors.data()[i] -= h;
            EXPECT_LT(rel_err((loss(a, w_p) - loss(b, w_p)) / (2 * h), g.d_vectors.data()[i]), 1e-6);
        }
    }
}

TEST(MultiLevelFuse, TwoLevelHandEvaluation) {
    const Matrix out = multi_level_fuse({Matrix{{1.0}}, Matrix{{0.5}}}, unit_fusion(2, 1.0, 0.0));
    EXPECT_DOUBLE_EQ(out(0, 0), 1.5);
}

TEST(MultiLevelFuse, ZeroWeightsCollapseToLastLevel) {
    std::mt19937_64 rng(48);
    LevelFusion f = random_fusion(rng, 3, 4);
    for (auto& w : f.w) {
        w = Matrix(4, 4, 0.0);
    }
    for (auto& b : f.b) {
        std::fill(b.begin(), b.end(), 0.0);
    }
    const std::vector<Matrix> levels{random_matrix(rng, 5, 2), random_matrix(rng, 5, 2), random_matrix(rng, 5, 2)};
    const Matrix out = multi_level_fuse(levels, f);
    const double gain = dot(f.w_out, f.w_in);
    for (std::size_t i = 0; i < out.size(); ++i) {
        EXPECT_NEAR(out.data()[i], gain * levels[2].data()[i], 1e-14);
    }
}

TEST(MultiLevelFuse, SingleZeroLevelIsZero) {
    std::mt19937_64 rng(49);
    LevelFusion f = random_fusion(rng, 1, 3);
    f.w[0] = Matrix(3, 3, 0.0);
    std::fill(f.b[0].begin(), f.b[0].end(), 0.0);
    EXPECT_EQ(multi_level_fuse({random_matrix(rng, 4, 3)}, f), Matrix(4, 3, 0.0));
}

TEST(MultiLevelFuse, MatchesLoopOracle) {
    std::mt19937_64 rng(50);
    for (int t = 0; t < 20; ++t) {
        const LevelFusion f = random_fusion(rng, 3, 4);
        const std::vector<Matrix> levels{random_matrix(rng, 6, 3), random_matrix(rng, 6, 3), random_matrix(rng, 6, 3)};
        const Matrix out = multi_level_fuse(levels, f);
        for (std::size_t p = 0; p < 6; ++p) {
            for (std::size_t c = 0; c < 3; ++c) {
                EXPECT_NEAR(out(p, c), oracle_fuse({levels[0](p, c), levels[1](p, c), levels[2](p, c)}, f), 1e-13);
            }
        }
    }
}

TEST(MultiLevelFuse, ShapeMismatch) {
    EXPECT_THROW(multi_level_fuse({Matrix(2, 2), Matrix(3, 2)}, unit_fusion(2, 1.0, 0.0)), ShapeError);
    EXPECT_THROW(multi_level_fuse({Matrix(2, 2)}, unit_fusion(2, 1.0, 0.0)), ShapeError);
}

TEST(MultiLevelFuse, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(51);
    const LevelFusion f = random_fusion(rng, 2, 3);
    const std::vector<Matrix> levels{random_matrix(rng, 4, 2), random_matrix(rng, 4, 2)};
    const Matrix probe = random_matrix(rng, 4, 2);
    auto loss = [&](const std::vector<Matrix>& ls) {
        const Matrix out = multi_level_fuse(ls, f);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            s += out.data()[i] * probe.data()[i];
        }
        return s;
    };
    const LevelFusionGrad g = multi_level_fuse_backward(levels, f, probe);
    const double h = 1e-6;
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t i = 0; i < levels[l].size(); ++i) {
            auto a = levels;
            auto b = levels;
            a[l].data()[i] += h;
            b[l].data()[i] -= h;
            EXPECT_NEAR((loss(a) - loss(b)) / (2 * h), g.d_levels[l].data()[i], 1e-6);
        }
    }
}

TEST(ResampleNearest, AdjointIdentity) {
    // <R x, y> == <x, R^T y> for random maps.
    std::mt19937_64 rng(52);
    for (auto [sh, sw, dh, dw] : {std::array{2, 2, 4, 4}, std::array{3, 5, 7, 4}, std::array{1, 1, 3, 2}}) {
        const Matrix x = random_matrix(rng, static_cast<std::size_t>(sh * sw), 3);
        const Matrix y = random_matrix(rng, static_cast<std::size_t>(dh * dw), 3);
        const Matrix rx = resample_nearest(x, sh, sw, dh, dw);
        const Matrix rty = resample_nearest_adjoint(y, sh, sw, dh, dw);
        double lhs = 0.0;
        double rhs = 0.0;
        for (std::size_t i = 0; i < rx.size(); ++i) {
            lhs += rx.data()[i] * y.data()[i];
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            rhs += x.data()[i] * rty.data()[i];
        }
        EXPECT_NEAR(lhs, rhs, 1e-12);
    }
}

TEST(ResampleNearest, UpsamplesByRepetition) {
    const Matrix m{{1}, {2}, {3}, {4}};
    EXPECT_EQ(resample_nearest(m, 2, 2, 4, 4),
              (Matrix{{1}, {1}, {2}, {2}, {1}, {1}, {2}, {2}, {3}, {3}, {4}, {4}, {3}, {3}, {4}, {4}}));
}

TEST(ForwardFull, MonotoneSingleLevelKeepsRanking) {
    // With one level a zero W_1 zeroes everything, so the monotone map uses W_1 = 1.
    std::mt19937_64 rng(53);
    PredictionParams params;
    params.w_p = std::vector<double>(6, 1.0);
    params.fusion = unit_fusion(1, 1.0, 0.0);
    params.fusion.w_out = {2.0};
    for (int t = 0; t < 10; ++t) {
        const PrototypeBank b = random_bank(rng, 3, 3, 4, false);
        const FeatureMap q = random_features(rng, 3, 3, 4);
        const FullPrediction out = forward_full({q}, {b}, params, 3, 3);
        EXPECT_EQ(out.final.argmax(), predict_class_probs(b, params.w_p, q).argmax());
        expect_row_stochastic(out.final.probs);
    }
}

TEST(ForwardFull, IdenticalPrototypesGiveUniform) {
    std::mt19937_64 rng(54);
    PredictionParams params;
    params.w_p = {1.0, 1.0};
    params.fusion = random_fusion(rng, 2, 3);
    const Matrix v{{0.3, -1.0}, {0.3, -1.0}, {0.3, -1.0}};
    const PrototypeBank b = bank_of({0, 1, 2}, {{0, 0}, {1, 0}, {2, 1}}, v);
    const FullPrediction out =
        forward_full({random_features(rng, 1, 1, 2), random_features(rng, 2, 2, 2)}, {b, b}, params, 2, 2);
    for (double x : out.final.probs.data()) {
        EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
    }
}

TEST(ForwardFull, LevelRegistryMismatch) {
    PredictionParams params;
    params.w_p = {1.0};
    params.fusion = unit_fusion(2, 1.0, 0.0);
    const PrototypeBank a = bank_of({0, 1}, {{0, 0}, {1, 0}}, Matrix{{1}, {2}});
    const PrototypeBank b = bank_of({0, 2}, {{0, 0}, {1, 0}}, Matrix{{1}, {2}});
    const FeatureMap q(1, 1, Matrix{{1}});
    EXPECT_THROW(forward_full({q, q}, {a, b}, params, 1, 1), ShapeError);
}

TEST(ForwardEpisode, MatchesStraightLineOracle) {
    std::mt19937_64 rng(55);
    for (int t = 0; t < 40; ++t) {
        const int n = 1 + t % 2;
        const int levels = 1 + (t / 2) % 2;
        const ModelShape shape{n, levels, 3, 3};
        const Episode ep = tiny_episode(rng, n, levels, 3, 1 + t % 2);
        const ModelParams params = random_params(rng, shape);
        const PreparedEpisode prep = prepare_episode(ep, n);
        const EpisodeForward fwd = forward_episode(prep, params);
        const OracleResult ref = oracle_episode(ep, params);
        ASSERT_EQ(prep.class_ids(), ref.classes);
        for (std::size_t p = 0; p < ref.final.size(); ++p) {
            for (std::size_t c = 0; c < ref.classes.size(); ++c) {
                EXPECT_NEAR(fwd.prediction.final.probs(p, c), ref.final[p][c], 1e-10);
                for (std::size_t l = 0; l < static_cast<std::size_t>(levels); ++l) {
                    EXPECT_NEAR(fwd.prediction.levels[l].probs(p, c), ref.levels[l][p][c], 1e-10);
                }
            }
        }
    }
}

TEST(PrototypeBank, FromFusedSlotsAndLabels) {
    FusedPrototypes a{7, Matrix{{1}, {2}, {3}}, {Modality::textual, Modality::visual, Modality::visual}, {0, 0, 1}};
    FusedPrototypes b{9, Matrix{{4}}, {Modality::textual}, {1}};
    const PrototypeBank bank = PrototypeBank::from_fused({a, b}, 3);
    EXPECT_EQ(bank.classes, (std::vector<ClassId>{7, 9}));
    ASSERT_EQ(bank.entry_count(), 4u);
    EXPECT_EQ(bank.entries[1].slot, 3);
    EXPECT_EQ(bank.entries[2].slot, 4);
    EXPECT_EQ(bank.entries[3].slot, 1);
    EXPECT_EQ(bank.labels(), (Matrix{{1, 0}, {1, 0}, {1, 0}, {0, 1}}));
}
