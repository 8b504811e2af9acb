#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "criteria.hpp"
#include "metadefa/data.hpp"
#include "metadefa/metaloop.hpp"

using namespace metadefa;
using criteria::scalar_image;
using criteria::ToyLogistic;

namespace {

std::vector<LabeledImage> labeled_source(std::size_t n, std::size_t classes, Rng& rng) {
    std::vector<LabeledImage> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(scalar_image(rng.uniform(), rng.index(classes), i));
    return v;
}

LossWeights ce_only() {
    LossWeights w;
    w.lambda1 = 0.0;
    w.lambda2 = 0.0;
    return w;
}

CorruptionConfig no_corruption() {
    CorruptionConfig c;
    c.threshold = 1.0;
    return c;
}

// Objective 0.5 |theta - a|^2, whose gradient is theta - a regardless of the data.
struct Quadratic {
    ParamSet target;
    ParamSet init(Rng&) const { return target.zeros_like(); }
    LossBreakdown batch_objective(const ParamSet& p, std::span<const LabeledImage>, std::span<const LabeledImage>,
                                  const LossWeights&, ParamSet& grads) const {
        grads = p;
        grads.axpy(-1.0, target);
        LossBreakdown l;
        l.ce = 0.5 * grads.squared_norm();
        l.total = l.ce;
        return l;
    }
    std::size_t predict(const ParamSet&, const Tensor&) const { return 0; }
};

static_assert(MetaLearner<ToyLogistic>);
static_assert(MetaLearner<Quadratic>);
static_assert(MetaLearner<CnnLearner>);

}  // namespace

TEST(FoMaml, MatchesAnalyticTwoStepReference) {
    const auto o = criteria::fomaml_oracle(20, 41);
    EXPECT_TRUE(o.pass) << o.detail;
}

TEST(TaskPool, InvariantsOverRandomSources) {
    Rng rng(1);
    MetaConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 10 + rng.index(60), classes = 2 + rng.index(3);
        const auto source = labeled_source(n, classes, rng);
        if (detail::distinct_labels(source) < 2) continue;
        cfg.pool_size = 1 + rng.index(8);
        cfg.tasks_per_iteration = 1;
        Rng pool_rng(static_cast<std::uint64_t>(trial));
        const auto pool = build_task_pool(source, cfg, pool_rng);
        ASSERT_EQ(pool.size(), cfg.pool_size);
        const auto n_train = static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(n)));
        for (const Task& t : pool) {
            EXPECT_NO_THROW(validate_task(t));
            EXPECT_EQ(t.train_split.size(), n_train);
            EXPECT_EQ(t.train_split.size() + t.test_split.size(), n);
            std::set<std::size_t> ids;
            for (const auto& s : t.train_split) ids.insert(s.id);
            for (const auto& s : t.test_split) ids.insert(s.id);
            EXPECT_EQ(ids.size(), n);  // a partition of the source
        }
    }
}

TEST(TaskPool, TenSamplesSplitEightTwo) {
    Rng rng(2);
    std::vector<LabeledImage> source;
    for (std::size_t i = 0; i < 10; ++i) source.push_back(scalar_image(0.1 * static_cast<double>(i), i % 2, i));
    MetaConfig cfg;
    cfg.pool_size = 1;
    cfg.tasks_per_iteration = 1;
    const auto pool = build_task_pool(source, cfg, rng);
    ASSERT_EQ(pool.size(), 1u);
    EXPECT_EQ(pool[0].train_split.size(), 8u);
    EXPECT_EQ(pool[0].test_split.size(), 2u);
    EXPECT_EQ(detail::distinct_labels(pool[0].test_split), 2u);
}

TEST(TaskPool, Errors) {
    Rng rng(3);
    MetaConfig cfg;
    std::vector<LabeledImage> one_class;
    for (std::size_t i = 0; i < 10; ++i) one_class.push_back(scalar_image(0.5, 0, i));
    EXPECT_THROW(build_task_pool(one_class, cfg, rng), std::invalid_argument);
    std::vector<LabeledImage> tiny{scalar_image(0, 0, 0), scalar_image(0, 1, 1), scalar_image(0, 0, 2)};
    EXPECT_THROW(build_task_pool(tiny, cfg, rng), std::invalid_argument);
    Task overlap{{scalar_image(0, 0, 0), scalar_image(0, 1, 1)}, {scalar_image(0, 0, 1), scalar_image(0, 1, 2)}};
    EXPECT_THROW(validate_task(overlap), std::invalid_argument);
}

TEST(MetaTrainStep, ZeroInnerRateKeepsPhi) {
    auto t = criteria::toy_problem(4);
    t.config.inner_lr = 0.0;
    Rng rng(5);
    const StepResult r = meta_train_step(ToyLogistic{}, t.phi, t.task, t.config, ce_only(), t.identity_aug, rng);
    EXPECT_EQ(r.params, t.phi);
    EXPECT_GT(r.loss.ce, 0.0);
}

TEST(MetaTestGrads, QuadraticGivesThetaMinusTarget) {
    Quadratic q;
    q.target.add("a", Tensor({3}, {1.0, -2.0, 0.5}));
    auto t = criteria::toy_problem(6);
    ParamSet theta;
    theta.add("a", Tensor({3}, {0.25, 0.0, 4.0}));
    Rng rng(7);
    const StepResult g = meta_test_grads(q, theta, t.task, t.config, ce_only(), t.identity_aug, rng);
    EXPECT_EQ(g.params.at("a"), Tensor({3}, {-0.75, 2.0, 3.5}));
    // meta-train on the same stand-in: theta = phi - lr (phi - a)
    Rng rng2(8);
    const StepResult s = meta_train_step(q, theta, t.task, t.config, ce_only(), t.identity_aug, rng2);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_NEAR(s.params.at("a")[i], theta.at("a")[i] - 0.7 * (theta.at("a")[i] - q.target.at("a")[i]), 1e-15);
}

TEST(MetaTestGrads, VanishAtMinimum) {
    Quadratic q;
    q.target.add("a", Tensor({2}, {0.3, -0.6}));
    auto t = criteria::toy_problem(10);
    Rng rng(11);
    const StepResult g = meta_test_grads(q, q.target, t.task, t.config, ce_only(), t.identity_aug, rng);
    EXPECT_LT(std::sqrt(g.params.squared_norm()), 1e-8);
}

// Neither stage touches phi; only outer_update produces new parameters.
TEST(MetaLoop, PhiUnchangedByTaskStages) {
    TinyCnnConfig net;
    net.widths = {4, 4};
    net.input_size = 8;
    const CnnLearner learner(net);
    SyntheticSpec spec;
    spec.per_class = 4;
    spec.image_size = 8;
    const auto src = generate_synthetic(spec, 3)[0].samples;
    MetaConfig cfg;
    cfg.pool_size = 2;
    cfg.batch_size = 4;
    Rng rng(12);
    const auto pool = build_task_pool(src, cfg, rng);
    const ParamSet phi = learner.init(rng);
    const std::uint64_t before = checksum(phi);
    std::vector<ParamSet> grads;
    for (const Task& task : pool) {
        const StepResult a = meta_train_step(learner, phi, task, cfg, LossWeights{}, CorruptionConfig{}, rng);
        EXPECT_EQ(checksum(phi), before);
        EXPECT_NE(checksum(a.params), before);
        grads.push_back(meta_test_grads(learner, a.params, task, cfg, LossWeights{}, CorruptionConfig{}, rng).params);
        EXPECT_EQ(checksum(phi), before);
    }
    EXPECT_NE(checksum(outer_update(phi, grads, cfg)), before);
    EXPECT_EQ(checksum(phi), before);
}

TEST(OuterUpdate, Cases) {
    ParamSet phi;
    phi.add("w", Tensor({2}, {1.0, -1.0}));
    MetaConfig cfg;
    cfg.outer_lr = 0.5;
    ParamSet g;
    g.add("w", Tensor({2}, {0.4, 2.0}));
    ParamSet neg = g;
    neg.scale(-1.0);
    EXPECT_EQ(outer_update(phi, {phi.zeros_like()}, cfg), phi);
    EXPECT_EQ(outer_update(phi, {g, neg}, cfg), phi);
    EXPECT_EQ(outer_update(phi, {g}, cfg).at("w"), Tensor({2}, {0.8, -2.0}));
    ParamSet g2;
    g2.add("w", Tensor({2}, {0.0, 1.0}));
    EXPECT_EQ(outer_update(phi, {g, g2}, cfg).at("w"), Tensor({2}, {0.9, -1.75}));
    cfg.outer_lr = 0.0;
    EXPECT_EQ(outer_update(phi, {g}, cfg), phi);
    EXPECT_THROW(outer_update(phi, {}, cfg), std::invalid_argument);
}

// Pixel values encode sample ids and masks are empty, so every scored image is a
// donor patch; the meta-train stage may only see train-split ids and the meta-test
// stage only test-split ids.
TEST(MetaLoop, StagesReadOnlyTheirSplit) {
    Rng rng(9);
    Task task;
    for (std::size_t i = 0; i < 12; ++i) {
        LabeledImage img = scalar_image(static_cast<double>(i) / 100.0, i % 2, i);
        img.mask = Tensor({1, 1}, 0.0);
        (i < 8 ? task.train_split : task.test_split).push_back(img);
    }
    MetaConfig cfg;
    cfg.batch_size = 3;
    const ToyLogistic learner;
    ParamSet phi = learner.init(rng);
    for (int rep = 0; rep < 20; ++rep) {
        learner.seen_ids.clear();
        learner.seen_pixels.clear();
        Rng r1(static_cast<std::uint64_t>(rep));
        const StepResult a = meta_train_step(learner, phi, task, cfg, ce_only(), no_corruption(), r1);
        for (std::size_t id : learner.seen_ids) EXPECT_LT(id, 8u);
        for (double px : learner.seen_pixels) EXPECT_LT(std::lround(px * 100.0), 8);
        EXPECT_EQ(learner.seen_ids.size(), 2 * cfg.batch_size);

        learner.seen_ids.clear();
        learner.seen_pixels.clear();
        Rng r2(static_cast<std::uint64_t>(rep) + 100);
        meta_test_grads(learner, a.params, task, cfg, ce_only(), no_corruption(), r2);
        for (std::size_t id : learner.seen_ids) EXPECT_GE(id, 8u);
        for (double px : learner.seen_pixels) EXPECT_GE(std::lround(px * 100.0), 8);
    }
}

namespace {

std::vector<LabeledImage> small_synthetic_source() {
    SyntheticSpec spec;
    spec.per_class = 6;
    spec.image_size = 8;
    return generate_synthetic(spec, 11)[0].samples;
}

TinyCnnConfig small_net() {
    TinyCnnConfig c;
    c.widths = {4, 4};
    c.input_size = 8;
    return c;
}

MetaConfig quick_config() {
    MetaConfig cfg;
    cfg.epochs = 2;
    cfg.iterations_per_epoch = 3;
    cfg.pool_size = 4;
    cfg.batch_size = 4;
    return cfg;
}

}  // namespace

TEST(Train, EpochsZeroReturnsInitialParameters) {
    MetaConfig cfg = quick_config();
    cfg.epochs = 0;
    const auto r = train(CnnLearner(small_net()), small_synthetic_source(), cfg, LossWeights{}, CorruptionConfig{});
    EXPECT_EQ(r.final, r.initial);
    EXPECT_TRUE(r.history.empty());
}

TEST(Train, BitIdenticalReruns) {
    const auto src = small_synthetic_source();
    const CnnLearner learner(small_net());
    const auto a = train(learner, src, quick_config(), LossWeights{}, CorruptionConfig{});
    const auto b = train(learner, src, quick_config(), LossWeights{}, CorruptionConfig{});
    EXPECT_EQ(checksum(a.final), checksum(b.final));
    EXPECT_EQ(a.final, b.final);
    ASSERT_EQ(a.history.size(), 2u);
    for (std::size_t e = 0; e < 2; ++e) {
        EXPECT_EQ(a.history[e].loss.total, b.history[e].loss.total);
        EXPECT_EQ(a.history[e].val_accuracy, b.history[e].val_accuracy);
        EXPECT_EQ(a.history[e].epoch, e + 1);
    }
    MetaConfig other = quick_config();
    other.seed = 1;
    EXPECT_NE(checksum(train(learner, src, other, LossWeights{}, CorruptionConfig{}).final), checksum(a.final));
    EXPECT_NE(checksum(a.final), checksum(a.initial));
}

TEST(Train, CallbackSeesEveryEpoch) {
    std::vector<std::size_t> epochs;
    std::vector<std::uint64_t> sums;
    const auto r = train(CnnLearner(small_net()), small_synthetic_source(), quick_config(), LossWeights{},
                         CorruptionConfig{}, [&](const EpochRecord& rec, const ParamSet& phi) {
                             epochs.push_back(rec.epoch);
                             sums.push_back(checksum(phi));
                         });
    EXPECT_EQ(epochs, (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(sums.back(), checksum(r.final));
}

TEST(Train, LearnsToyLogistic) {
    Rng rng(12);
    std::vector<LabeledImage> src;
    for (std::size_t i = 0; i < 60; ++i) {
        const double x = rng.uniform();
        src.push_back(scalar_image(x, x > 0.5 ? 1 : 0, i));
    }
    MetaConfig cfg;
    cfg.epochs = 40;
    cfg.inner_lr = 0.5;
    cfg.outer_lr = 2.0;
    cfg.tasks_per_iteration = 1;
    cfg.pool_size = 4;
    const auto r = train(ToyLogistic{}, src, cfg, ce_only(), no_corruption());
    EXPECT_LT(r.history.back().loss.ce, r.history.front().loss.ce);
    EXPECT_GE(r.history.back().val_accuracy, 0.9);
}

TEST(SplitValidation, DisjointAndSeeded) {
    Rng rng(13);
    const auto src = labeled_source(50, 3, rng);
    const auto [tr, va] = split_validation(src, 0.2, 4);
    EXPECT_EQ(va.size(), 10u);
    EXPECT_EQ(tr.size(), 40u);
    std::set<std::size_t> ids;
    for (const auto& s : tr) ids.insert(s.id);
    for (const auto& s : va) EXPECT_EQ(ids.count(s.id), 0u);
    const auto [tr2, va2] = split_validation(src, 0.2, 4);
    EXPECT_EQ(va2.front().id, va.front().id);
    EXPECT_TRUE(split_validation(src, 0.0, 4).second.empty());
}

TEST(MetaConfig, Validation) {
    MetaConfig c;
    EXPECT_NO_THROW(c.validate());
    c.inner_lr = -1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.tasks_per_iteration = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.pool_size = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.train_fraction = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.iterations_per_epoch = 0;
    EXPECT_EQ(c.effective_iterations(), 4u);
}
