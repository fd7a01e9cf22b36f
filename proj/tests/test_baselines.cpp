#include <gtest/gtest.h>

#include "support.hpp"

using namespace ddaig;
using namespace testing_support;

namespace {

const MultiDomainDataset& sources() {
    static const MultiDomainDataset s = make_source_view(tiny_benchmark(10, 16, 4, 4), "patches").sources;
    return s;
}

}  // namespace

TEST(Vanilla, TrainsOnASingleSourceDomain) {
    auto one = tiny_benchmark();
    for (auto& [name, items] : one.splits)
        std::erase_if(items, [](const LabeledImage& im) { return im.domain_label != 0; });
    one.domains.resize(1);
    const auto res = train_vanilla(one, tiny_config());
    EXPECT_EQ(res.reports.size(), tiny_config().max_iters);
    EXPECT_FALSE(res.trainer.has_domain_classifier());
    EXPECT_FALSE(res.trainer.has_dotnet());
    for (const auto& r : res.reports) {
        EXPECT_FALSE(r.domain_loss.has_value());
        EXPECT_FALSE(r.transformed_label_loss.has_value());
    }
}

TEST(Vanilla, LowersTrainingLoss) {
    auto c = tiny_config();
    c.max_iters = 60;
    c.eta = 0.05;
    const auto res = train_vanilla(sources(), c);
    double head = 0, tail = 0;
    for (std::size_t k = 0; k < 10; ++k) {
        head += res.reports[k].label_loss;
        tail += res.reports[res.reports.size() - 1 - k].label_loss;
    }
    EXPECT_LT(tail, head);
}

TEST(CrossGrad, ZeroEpsilonWithHalfAlphaMatchesVanillaBitwise) {
    // x~ = x, so (1 - a) J_L + a J_L has exactly the gradient of J_L when a = 0.5.
    auto c = tiny_config();
    c.crossgrad.epsilon = 0.0;
    c.alpha = 0.5;
    c.max_iters = 20;
    const auto cg = train_crossgrad(sources(), c);
    const auto va = train_vanilla(sources(), c);
    EXPECT_EQ(cg.trainer.label_classifier().params(), va.trainer.label_classifier().params());
    for (std::size_t k = 0; k < cg.reports.size(); ++k) EXPECT_EQ(cg.reports[k].label_loss, va.reports[k].label_loss);
}

TEST(CrossGrad, WarmupSkipsPerturbationAndLaterStepsUseIt) {
    auto c = tiny_config();
    const auto res = train_crossgrad(sources(), c);
    for (const auto& r : res.reports) {
        EXPECT_TRUE(r.domain_loss.has_value());
        EXPECT_EQ(r.transformed_label_loss.has_value(), !r.warmup) << r.iter;
        EXPECT_FALSE(r.dotnet_objective.has_value());
    }
    EXPECT_FALSE(res.trainer.has_dotnet());
}

TEST(Reductions, AllThreeTrainersAgreeWhenPerturbationsVanish) {
    auto c = tiny_config();
    c.max_iters = 20;
    c.alpha = 0.5;
    c.lambda = 0.0;
    c.crossgrad.epsilon = 0.0;
    const auto va = train_vanilla(sources(), c);
    const auto dd = train<float>(sources(), Method::ddaig, c);
    const auto cg = train_crossgrad(sources(), c);
    EXPECT_EQ(dd.trainer.label_classifier().params(), va.trainer.label_classifier().params());
    EXPECT_EQ(cg.trainer.label_classifier().params(), va.trainer.label_classifier().params());
}
