#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "mproto/error.hpp"
#include "mproto/evaluation.hpp"
#include "mproto/synthetic.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace mproto;
using namespace mproto::testing;

namespace {

ClassRegistry registry(std::vector<ClassId> seen, std::vector<ClassId> unseen) {
    return ClassRegistry{std::move(seen), std::move(unseen), 0};
}

// Minimal model: one prototype per modality, one level, width 1, with a
// monotone level fusion so the final argmax equals the level argmax.
ModelParams monotone_params(int dim, std::vector<double> background) {
    ModelParams p = ModelParams::zeros({1, 1, 1, dim});
    p.prediction.w_p = {1.0, 1.0};
    p.prediction.fusion.w_in = {1.0};
    p.prediction.fusion.w_out = {1.0};
    p.prediction.fusion.w[0] = Matrix{{1.0}};
    std::copy(background.begin(), background.end(), p.background_text.row(0).begin());
    return p;
}

SyntheticScene clean_scene(std::vector<ClassId> classes, std::uint64_t seed) {
    SyntheticSceneSpec spec;
    spec.means = axis_means(5, 8, 3.0);
    spec.classes = std::move(classes);
    spec.noise = 0.0;
    spec.descriptions = 2;
    spec.seed = seed;
    return gen_scene(spec);
}

Scene as_scene(SyntheticScene s, std::string id) { return Scene{std::move(id), std::move(s.features), std::move(s.labels)}; }

}  // namespace

TEST(Iou, HandCountedThird) {
    // Class 1 predicted on cells 0,1 and present on cells 0,2.
    const auto iou = iou_per_class({1, 1, 0, 0}, {1, 0, 1, 0}, {1});
    EXPECT_DOUBLE_EQ(iou.at(1), 1.0 / 3.0);
}

TEST(Iou, IdenticalAndDisjoint) {
    const std::vector<ClassId> a{0, 1, 2, 2, 1};
    for (const auto& [c, v] : iou_per_class(a, a, {0, 1, 2})) {
        EXPECT_EQ(v, 1.0) << c;
    }
    EXPECT_EQ(iou_per_class({1, 1, 0}, {0, 0, 1}, {1}).at(1), 0.0);
    EXPECT_TRUE(iou_per_class({0, 0}, {0, 0}, {3}).empty());
}

TEST(Iou, SymmetricAndBounded) {
    std::mt19937_64 rng(71);
    std::uniform_int_distribution<int> label(0, 3);
    for (int t = 0; t < 100; ++t) {
        std::vector<ClassId> p(20);
        std::vector<ClassId> g(20);
        for (std::size_t i = 0; i < 20; ++i) {
            p[i] = label(rng);
            g[i] = label(rng);
        }
        const auto pg = iou_per_class(p, g, {0, 1, 2, 3});
        const auto gp = iou_per_class(g, p, {0, 1, 2, 3});
        EXPECT_EQ(pg, gp);
        for (const auto& [c, v] : pg) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Iou, AccumulatorMergeMatchesSinglePass) {
    std::mt19937_64 rng(72);
    std::uniform_int_distribution<int> label(0, 2);
    std::vector<ClassId> p(30);
    std::vector<ClassId> g(30);
    for (std::size_t i = 0; i < 30; ++i) {
        p[i] = label(rng);
        g[i] = label(rng);
    }
    IouAccumulator a;
    IouAccumulator b;
    a.add({p.begin(), p.begin() + 12}, {g.begin(), g.begin() + 12}, {0, 1, 2});
    b.add({p.begin() + 12, p.end()}, {g.begin() + 12, g.end()}, {0, 1, 2});
    a.merge(b);
    EXPECT_EQ(a.iou(), iou_per_class(p, g, {0, 1, 2}));
    EXPECT_THROW(a.add({0}, {0, 1}, {0}), ShapeError);
}

TEST(Summarize, PublishedHarmonicMeans) {
    const ClassRegistry reg = registry({0, 1}, {2});
    const MetricReport a = summarize({{1, 0.7171}, {2, 0.3944}}, reg);
    EXPECT_NEAR(100.0 * *a.hiou, 50.89, 0.01);
    const MetricReport b = summarize({{1, 0.7089}, {2, 0.3511}}, reg);
    EXPECT_NEAR(100.0 * *b.hiou, 46.96, 0.01);
}

TEST(Summarize, EqualFoldsGiveSameValue) {
    const MetricReport r = summarize({{1, 0.4}, {2, 0.4}}, registry({0, 1}, {2}));
    EXPECT_NEAR(*r.hiou, 0.4, 1e-15);
    EXPECT_EQ(harmonic_iou(0.0, 0.0), 0.0);
}

TEST(Summarize, FoldMeansAndBackgroundFlag) {
    const ClassRegistry reg = registry({0, 1, 2}, {3, 4});
    const std::map<ClassId, double> iou{{0, 0.9}, {1, 0.5}, {2, 0.1}, {3, 0.2}, {4, 0.6}};
    const MetricReport with = summarize(iou, reg, true);
    EXPECT_NEAR(*with.seen_miou, 0.5, 1e-15);
    EXPECT_NEAR(*with.unseen_miou, 0.4, 1e-15);
    const MetricReport without = summarize(iou, reg, false);
    EXPECT_NEAR(*without.seen_miou, 0.3, 1e-15);
}

TEST(Summarize, PermutationInvariantWithinFolds) {
    std::mt19937_64 rng(73);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        std::vector<ClassId> seen{0, 1, 2, 3};
        std::vector<ClassId> unseen{4, 5, 6};
        std::map<ClassId, double> iou;
        for (ClassId c = 0; c < 7; ++c) {
            iou[c] = u(rng);
        }
        const MetricReport ref = summarize(iou, registry(seen, unseen));
        std::shuffle(seen.begin() + 1, seen.end(), rng);
        std::shuffle(unseen.begin(), unseen.end(), rng);
        const MetricReport perm = summarize(iou, registry(seen, unseen));
        EXPECT_NEAR(*perm.seen_miou, *ref.seen_miou, 1e-15);
        EXPECT_NEAR(*perm.unseen_miou, *ref.unseen_miou, 1e-15);
        EXPECT_NEAR(*perm.hiou, *ref.hiou, 1e-15);
    }
}

TEST(Summarize, EmptyFoldIsAbsent) {
    const MetricReport r = summarize({{1, 0.5}}, registry({0, 1}, {2}));
    EXPECT_TRUE(r.seen_miou.has_value());
    EXPECT_FALSE(r.unseen_miou.has_value());
    EXPECT_FALSE(r.hiou.has_value());
    const std::string text = r.to_text();
    EXPECT_NE(text.find("unseen_miou=absent"), std::string::npos);
    EXPECT_NE(text.find("seen_miou=50.00"), std::string::npos);
    EXPECT_NE(text.find("iou.1=50.00"), std::string::npos);
    EXPECT_NE(r.to_json().find("\"hiou\": null"), std::string::npos);
}

TEST(Summarize, RejectsOutOfRange) {
    EXPECT_THROW(summarize({{1, 1.5}}, registry({0, 1}, {2})), SpecError);
}

TEST(ShotMode, ParseAndCount) {
    EXPECT_EQ(parse_shot_mode("zero"), ShotMode::zero);
    EXPECT_EQ(parse_shot_mode("1"), ShotMode::one);
    EXPECT_EQ(parse_shot_mode("five"), ShotMode::five);
    EXPECT_EQ(shot_count(ShotMode::five), 5);
    EXPECT_EQ(to_string(ShotMode::one), "one");
    EXPECT_THROW(parse_shot_mode("two"), ConfigError);
}

TEST(ZfsEpisode, SelfSegmentation) {
    const ModelParams params = ModelParams::initialize({3, 3, 8, 8}, 1);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SyntheticScene sc = clean_scene({1, 2}, seed);
        const auto texts = sc.embeddings;
        const std::vector<Scene> scenes{as_scene(std::move(sc), "s")};
        const Episode ep = make_zfs_episode(scenes, 0, 1, {0}, texts, 0, seed);
        const ZfsResult r = run_zfs_episode(ep, params, ShotMode::one);
        ASSERT_TRUE(r.iou.has_value());
        EXPECT_GE(*r.iou, 0.95);
    }
}

TEST(ZfsEpisode, ZeroShotDotProductRule) {
    // D = 1: the target's name embedding t against a background prototype b.
    std::mt19937_64 rng(74);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const double t = g(rng);
        const double b = g(rng);
        Matrix cells(4, 1);
        for (auto& v : cells.data()) {
            v = g(rng);
        }
        Episode ep;
        ep.classes = {3};
        ep.texts.emplace(3, EmbeddingRecord{3, {t}, Matrix(0, 1)});
        ep.query = {FeatureMap(2, 2, cells)};
        ep.out_height = 2;
        ep.out_width = 2;
        const ZfsResult r = run_zfs_episode(ep, monotone_params(1, {b}), ShotMode::zero);
        for (int i = 0; i < 4; ++i) {
            const double f = cells(static_cast<std::size_t>(i), 0);
            EXPECT_EQ(r.mask.at(i / 2, i % 2), f * t > f * b) << "f=" << f << " t=" << t << " b=" << b;
        }
    }
}

TEST(ZfsEpisode, EmptyTargetCountsFalsePositives) {
    Episode ep;
    ep.classes = {3};
    ep.query = {FeatureMap(1, 2, Matrix{{1.0}, {-1.0}})};
    ep.out_height = 1;
    ep.out_width = 2;
    ep.query_labels = LabelMap{1, 2, {0, 0}};
    // Target wins on the first pixel only.
    ep.texts.emplace(3, EmbeddingRecord{3, {2.0}, Matrix(0, 1)});
    ZfsResult r = run_zfs_episode(ep, monotone_params(1, {0.0}), ShotMode::zero);
    EXPECT_EQ(r.intersection, 0);
    EXPECT_EQ(r.uni, 1);
    EXPECT_EQ(*r.iou, 0.0);
    // Background wins everywhere: nothing predicted, nothing present.
    ep.query = {FeatureMap(1, 2, Matrix{{0.0}, {0.0}})};
    r = run_zfs_episode(ep, monotone_params(1, {0.0}), ShotMode::zero);
    EXPECT_EQ(r.uni, 0);
    EXPECT_EQ(*r.iou, 0.0);
}

TEST(ZfsEpisode, Errors) {
    SyntheticScene sc = clean_scene({1, 2}, 3);
    const auto texts = sc.embeddings;
    const std::vector<Scene> scenes{as_scene(std::move(sc), "s")};
    const ModelParams params = ModelParams::initialize({3, 3, 8, 8}, 1);
    const Episode one = make_zfs_episode(scenes, 0, 1, {0}, texts, 0, 0);
    EXPECT_THROW(run_zfs_episode(one, params, ShotMode::five), EpisodeError);
    EXPECT_THROW(run_zfs_episode(one, params, ShotMode::zero), EpisodeError);
    Episode two = one;
    two.classes = {1, 2};
    EXPECT_THROW(run_zfs_episode(two, params, ShotMode::one), EpisodeError);
    Episode no_text = make_zfs_episode(scenes, 0, 1, {}, {}, 0, 0);
    EXPECT_THROW(run_zfs_episode(no_text, params, ShotMode::zero), EpisodeError);
}

TEST(GfsEpisode, SeparableSupportsGivePerfectIou) {
    const ModelParams params = ModelParams::initialize({3, 3, 8, 8}, 2);
    SyntheticScene sc = clean_scene({1, 2, 3}, 7);
    const auto texts = sc.embeddings;
    const std::vector<Scene> scenes{as_scene(std::move(sc), "s")};
    const ClassRegistry reg = registry({0, 1, 2}, {3});
    const Episode ep = make_gfs_episode(scenes, 0, {1, 2, 3}, {{1, {0}}, {2, {0}}, {3, {0}}}, texts, 0, 1);
    const GfsResult r = run_gfs_episode(ep, params, reg);
    ASSERT_TRUE(r.report.has_value());
    for (const auto& [c, v] : r.report->per_class_iou) {
        EXPECT_EQ(v, 1.0) << c;
    }
}

TEST(GfsEpisode, UnsupportedClassScoresZero) {
    const ModelParams params = ModelParams::initialize({3, 3, 8, 8}, 2);
    SyntheticScene sc = clean_scene({1, 2}, 8);
    const std::vector<Scene> scenes{as_scene(std::move(sc), "s")};
    const ClassRegistry reg = registry({0, 1}, {2});
    // Class 2 is in the ground truth but has neither support nor text.
    const Episode ep = make_gfs_episode(scenes, 0, {1, 2}, {{1, {0}}}, {}, 0, 1);
    const GfsResult r = run_gfs_episode(ep, params, reg);
    EXPECT_EQ(std::count(r.bank_classes.begin(), r.bank_classes.end(), 2), 0);
    EXPECT_EQ(r.report->per_class_iou.at(2), 0.0);
    EXPECT_EQ(std::count(r.prediction.begin(), r.prediction.end(), 2), 0);
}

TEST(GfsEpisode, MatchesExhaustiveArgmax) {
    std::mt19937_64 rng(75);
    for (int t = 0; t < 20; ++t) {
        const ModelShape shape{2, 2, 3, 3};
        Episode ep = tiny_episode(rng, 2, 2, 3, 2);
        label_randomly(rng, ep);
        const ModelParams params = random_params(rng, shape);
        const GfsResult r = run_gfs_episode(ep, params, registry({0, 1}, {2}));
        const OracleResult ref = oracle_episode(ep, params);
        ASSERT_EQ(r.bank_classes, ref.classes);
        for (std::size_t p = 0; p < ref.final.size(); ++p) {
            const auto& row = ref.final[p];
            const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            EXPECT_EQ(r.prediction[p], ref.classes[best]);
        }
    }
}

TEST(Protocols, GfsSingleClassEqualsZfs) {
    SyntheticDatasetSpec spec;
    spec.train_scenes = 0;
    spec.eval_scenes = 6;
    spec.seed = 76;
    const Dataset ds = gen_dataset(spec);
    const ModelParams params = ModelParams::initialize({3, 3, 8, spec.dim}, 3);
    for (std::size_t q = 0; q < ds.eval.size(); ++q) {
        const ClassId c = 4;
        const std::vector<std::size_t> supports{(q + 1) % ds.eval.size()};
        const Episode z = make_zfs_episode(ds.eval, q, c, supports, ds.embeddings, 0, q);
        const Episode g = make_gfs_episode(ds.eval, q, {c}, {{c, supports}}, ds.embeddings, 0, q);
        const ZfsResult zr = run_zfs_episode(z, params, ShotMode::one);
        const GfsResult gr = run_gfs_episode(g, params, ds.registry);
        for (std::size_t i = 0; i < gr.prediction.size(); ++i) {
            EXPECT_EQ(zr.mask.at(static_cast<int>(i) / zr.mask.width(), static_cast<int>(i) % zr.mask.width()),
                      gr.prediction[i] == c);
        }
    }
}

TEST(Evaluate, ReportsAreDeterministicAndComplete) {
    SyntheticDatasetSpec spec;
    spec.train_scenes = 0;
    spec.eval_scenes = 6;
    spec.seed = 77;
    const Dataset ds = gen_dataset(spec);
    const ModelParams params = ModelParams::initialize({3, 3, 8, spec.dim}, 4);
    const EvalOptions opt{3, 1, 5, true};
    const MetricReport a = evaluate_gfs(ds.eval, ds.registry, ds.embeddings, params, opt);
    const MetricReport b = evaluate_gfs(ds.eval, ds.registry, ds.embeddings, params, opt);
    EXPECT_EQ(a.per_class_iou, b.per_class_iou);
    EXPECT_TRUE(a.seen_miou && a.unseen_miou && a.hiou);
    const MetricReport z = evaluate_zfs(ds.eval, ds.registry, {4}, ds.embeddings, params, ShotMode::one, opt);
    ASSERT_TRUE(z.unseen_miou.has_value());
    EXPECT_GE(*z.unseen_miou, 0.0);
    EXPECT_LE(*z.unseen_miou, 1.0);
    const MetricReport z0 = evaluate_zfs(ds.eval, ds.registry, {4}, ds.embeddings, params, ShotMode::zero, opt);
    EXPECT_TRUE(z0.unseen_miou.has_value());
}
