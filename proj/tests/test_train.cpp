#include <algorithm>
#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include "cak/train.hpp"

using namespace cak;

namespace {

NetworkSpec small_spec(AttentionKind kind = AttentionKind::eca) {
    NetworkSpec s;
    s.stem_channels = 8;
    s.stages = {{8, 1, 1}, {16, 1, 2}};
    s.attention.kind = kind;
    return s;
}

Dataset synth(std::size_t per_class, std::uint64_t seed = 0, const std::string& split = "train") {
    SynthOptions o;
    o.n_per_class = per_class;
    o.size = 8;
    o.seed = seed;
    o.split = split;
    return synth_dataset(o);
}

std::vector<Tensor> learnable_values(const Network& net) {
    std::vector<Tensor> out;
    for (const auto& p : net.params())
        if (p.learnable()) out.push_back(p.value);
    return out;
}

} // namespace

TEST(Schedule, StepMilestones) {
    EXPECT_EQ(step_milestones(30, 90), (std::vector<std::size_t>{30, 60}));
    EXPECT_EQ(step_milestones(4, 12), (std::vector<std::size_t>{4, 8}));
    EXPECT_TRUE(step_milestones(0, 12).empty());
    EXPECT_TRUE(step_milestones(20, 12).empty());
    TrainConfig cfg;
    cfg.lr = 0.4;
    cfg.lr_factor = 0.5;
    cfg.milestones = {2, 5};
    EXPECT_EQ(cfg.lr_at(0), 0.4);
    EXPECT_EQ(cfg.lr_at(1), 0.4);
    EXPECT_EQ(cfg.lr_at(2), 0.2);
    EXPECT_EQ(cfg.lr_at(5), 0.1);
    EXPECT_EQ(cfg.lr_at(100), 0.1);
}

TEST(Sgd, ZeroGradientWeightDecayShrinks) {
    Network net(small_spec(), 0);
    const auto before = learnable_values(net);
    const double lr = 0.1, wd = 0.01;
    Sgd sgd(0.0, wd);
    std::vector<Tensor> zero;
    for (const auto& p : net.params()) zero.push_back(Tensor::zeros_like(p.value));
    const int steps = 5;
    for (int i = 0; i < steps; ++i) sgd.step(net, zero, lr);
    const double factor = std::pow(1.0 - lr * wd, steps);
    const auto after = learnable_values(net);
    for (std::size_t i = 0; i < after.size(); ++i)
        for (std::size_t j = 0; j < after[i].size(); ++j)
            EXPECT_NEAR(after[i][j], before[i][j] * factor, 1e-15 * std::abs(before[i][j]));
}

TEST(Sgd, MomentumRecurrence) {
    Network net(small_spec(), 1);
    const double p0 = net.params()[0].value[0];
    const double lr = 0.05, mu = 0.9, wd = 1e-3, g = 0.25;
    std::vector<Tensor> grads;
    for (const auto& p : net.params()) grads.push_back(Tensor(p.value.shape(), g));
    Sgd sgd(mu, wd);
    sgd.step(net, grads, lr);
    sgd.step(net, grads, lr);
    // Unrolled by hand: v1 = g + wd p0, p1 = p0 - lr v1, v2 = mu v1 + g + wd p1, p2 = p1 - lr v2.
    const double v1 = g + wd * p0, p1 = p0 - lr * v1, v2 = mu * v1 + (g + wd * p1), p2 = p1 - lr * v2;
    EXPECT_EQ(net.params()[0].value[0], p2);
    // Buffers never move.
    for (const auto& p : net.params())
        if (!p.learnable()) {
            EXPECT_EQ(p.value, Tensor(p.value.shape(), p.name == "input.std" ? 1.0 : 0.0));
        }
}

TEST(Train, ZeroLearningRateFreezesEverything) {
    NetworkSpec spec = small_spec(AttentionKind::se);
    spec.attention.reduction = 4;
    Network net(spec, 2);
    const auto before = learnable_values(net);
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.epochs = 3;
    cfg.batch = 7;
    const Dataset d = synth(4);
    const auto report = train(net, d, nullptr, cfg);
    EXPECT_EQ(learnable_values(net), before);
    ASSERT_EQ(report.epochs.size(), 3u);
    EXPECT_EQ(report.epochs[1].train_loss, report.epochs[0].train_loss);
    EXPECT_EQ(report.epochs[2].train_loss, report.epochs[0].train_loss);
    EXPECT_EQ(report.epochs[2].train_top1, report.epochs[0].train_top1);
}

TEST(Train, SameSeedIsBitwiseReproducible) {
    const Dataset d = synth(4), v = synth(2, 0, "val");
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 8;
    cfg.milestones = {2};
    Network a(small_spec(), 5), b(small_spec(), 5);
    const std::string ra = to_csv(train(a, d, &v, cfg)), rb = to_csv(train(b, d, &v, cfg));
    EXPECT_EQ(ra, rb);
    for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
    EXPECT_EQ(std::count(ra.begin(), ra.end(), '\n'), 4);

    cfg.seed = 1;
    Network c(small_spec(), 5);
    EXPECT_NE(to_csv(train(c, d, &v, cfg)), ra);
}

TEST(Train, OverfitsEightSamples) {
    for (auto kind : {AttentionKind::none, AttentionKind::eca}) {
        NetworkSpec spec;
        spec.attention.kind = kind;
        Network net(spec, 0);
        SynthOptions o;
        o.n_per_class = 1;
        Dataset d = synth_dataset(o).head(8);
        TrainConfig cfg;
        cfg.epochs = 200;
        cfg.batch = 8;
        cfg.milestones = {};
        std::size_t first_perfect = 0;
        train(net, d, nullptr, cfg, [&](const EpochMetrics& m) {
            if (first_perfect == 0 && m.train_top1 == 100.0) first_perfect = m.epoch + 1;
        });
        EXPECT_EQ(evaluate(net, d).top1, 100.0) << to_string(kind);
        EXPECT_GT(first_perfect, 0u) << to_string(kind);
    }
}

TEST(Train, DivergenceRaisesNumericalError) {
    Network net(small_spec(AttentionKind::none), 0);
    TrainConfig cfg;
    cfg.lr = 1e200;
    cfg.epochs = 5;
    cfg.batch = 10;
    EXPECT_THROW(train(net, synth(2), nullptr, cfg), NumericalError);
}

TEST(Train, RejectsBadInputs) {
    Network net(small_spec(), 0);
    TrainConfig cfg;
    cfg.batch = 0;
    EXPECT_THROW(train(net, synth(1), nullptr, cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.lr = -1;
    EXPECT_THROW(train(net, synth(1), nullptr, cfg), ConfigError);
    EXPECT_THROW(train(net, synth(0), nullptr, TrainConfig{}), Error);
    SynthOptions o;
    o.num_classes = 3;
    o.n_per_class = 1;
    EXPECT_THROW(train(net, synth_dataset(o), nullptr, TrainConfig{}), ConfigError);
}

TEST(Evaluate, ConstantLogitsScoreTheLargestClassPrior) {
    Network net(small_spec(), 0);
    for (auto& p : net.params()) {
        if (p.name == "fc.weight") p.value.fill(0.0);
        if (p.name == "fc.bias") {
            p.value.fill(0.0);
            p.value[3] = 1.0;
        }
    }
    // Relabelling seven more samples gives class 3 eleven of 40; no other class has more than 4.
    Dataset d = synth(4);
    for (std::size_t i = 0; i < 8; ++i) d.labels[i * 4 + 1] = 3;
    std::vector<std::size_t> counts(10);
    for (int l : d.labels) ++counts[static_cast<std::size_t>(l)];
    const double prior = 100.0 * static_cast<double>(*std::max_element(counts.begin(), counts.end())) / 40.0;
    const auto m = evaluate(net, d);
    EXPECT_EQ(m.top1, prior);
    EXPECT_EQ(m.top1, 27.5);
    EXPECT_GE(m.top5, m.top1);
    EXPECT_EQ(m.count, 40u);
}

TEST(Evaluate, ShuffledLabelsScoreNearChance) {
    const Network net(small_spec(), 3);
    Dataset d = synth(100);
    Rng rng(11);
    for (int& l : d.labels) l = static_cast<int>(rng.below(10));
    const auto m = evaluate(net, d);
    // n = 1000, p = 0.1: the 99.9% binomial interval is about +/- 3.1 points.
    EXPECT_NEAR(m.top1, 10.0, 3.2);
    EXPECT_NEAR(m.top5, 50.0, 5.3);
    EXPECT_GE(m.top5, m.top1);
}

TEST(Evaluate, ScoreLogitsByHand) {
    const Tensor z(Shape{3, 3}, std::vector<double>{2.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 5.0, 5.0});
    const auto m = score_logits(z, {0, 1, 2});
    // Ties go to the lower index, so only sample 0 is a top-1 hit.
    EXPECT_NEAR(m.top1, 100.0 / 3.0, 1e-12);
    EXPECT_FALSE(m.has_top5);
    const double l0 = std::log(std::exp(2.0) + std::exp(1.0) + 1.0) - 2.0;
    const double l1 = std::log(3.0);
    const double l2 = std::log(std::exp(-1.0) + 2 * std::exp(5.0)) - 5.0;
    EXPECT_NEAR(m.loss, (l0 + l1 + l2) / 3.0, 1e-14);
    EXPECT_THROW(evaluate(Network(small_spec(), 0), synth(0)), Error);
}

TEST(Report, CsvLayout) {
    TrainReport r;
    EXPECT_THROW(r.last(), Error);
    EpochMetrics e;
    e.lr = 0.1;
    e.train_loss = 2.0;
    e.train_top1 = 50.0;
    r.epochs.push_back(e);
    EXPECT_EQ(to_csv(r), "epoch,lr,train_loss,train_top1,val_loss,val_top1,val_top5\n"
                         "1,0.10000000000000001,2,50,,,\n");
}
