#include <gtest/gtest.h>

#include "support.hpp"

using namespace ddaig;
using namespace testing_support;

namespace {

const MultiDomainDataset& sources() {
    static const MultiDomainDataset s = make_source_view(tiny_benchmark(10, 16, 4, 4), "texture").sources;
    return s;
}

bool all_finite_nonnegative(const LossReport& r) {
    auto ok = [](const std::optional<double>& v) { return !v || *v >= 0.0; };
    return r.label_loss >= 0.0 && ok(r.transformed_label_loss) && ok(r.domain_loss) && ok(r.transformed_domain_loss);
}

}  // namespace

TEST(TrainConfig, ValidatesRangesAndParsesStrictly) {
    TrainConfig c;
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.lambda = -0.1;
    EXPECT_THROW(c.validate(), Error);
    EXPECT_THROW(train_config_from_json(json{{"etaa", 0.1}}), Error);
    EXPECT_THROW(train_config_from_json(json{{"dotnet", {{"blocks", 2}}}}), Error);
    const auto parsed = train_config_from_json(json{{"lambda", 0.5}, {"dotnet", {{"use_stn", true}}}});
    EXPECT_EQ(parsed.lambda, 0.5);
    EXPECT_TRUE(parsed.dotnet.use_stn);
    EXPECT_EQ(to_json(train_config_from_json(to_json(parsed))), to_json(parsed));
}

TEST(Trainer, WarmupMustBeShorterThanTraining) {
    auto c = tiny_config();
    c.warmup_iters = static_cast<long>(c.max_iters);
    EXPECT_THROW(Trainer<float>(sources(), Method::ddaig, c), Error);
    EXPECT_THROW(Trainer<float>(sources(), Method::crossgrad, c), Error);
    EXPECT_NO_THROW(Trainer<float>(sources(), Method::vanilla, c));
}

TEST(Trainer, NeedsTwoSourceDomainsForAdversarialMethods) {
    const auto& ds = tiny_benchmark();
    auto one = ds;
    for (auto& [name, items] : one.splits)
        std::erase_if(items, [](const LabeledImage& im) { return im.domain_label != 0; });
    one.domains.resize(1);
    EXPECT_THROW(Trainer<float>(one, Method::ddaig, tiny_config()), Error);
    EXPECT_NO_THROW(Trainer<float>(one, Method::vanilla, tiny_config()));
}

TEST(Trainer, LearningRateDecaysTenfoldEveryTwentyEpochs) {
    Trainer<float> t(sources(), Method::ddaig, tiny_config());
    const std::size_t ipe = t.iters_per_epoch();
    EXPECT_DOUBLE_EQ(t.learning_rate(0), 0.05);
    EXPECT_DOUBLE_EQ(t.learning_rate(20 * ipe - 1), 0.05);
    EXPECT_NEAR(t.learning_rate(20 * ipe), 0.005, 1e-15);
    EXPECT_NEAR(t.learning_rate(39 * ipe), 0.005, 1e-15);
    EXPECT_NEAR(t.learning_rate(40 * ipe), 0.0005, 1e-15);
}

TEST(Trainer, IterationBudgetFollowsEpochsWhenMaxItersUnset) {
    auto c = tiny_config();
    c.max_iters = 0;
    c.epochs = 3;
    c.warmup_iters = -1;
    c.warmup_epochs = 1;
    Trainer<float> t(sources(), Method::ddaig, c);
    EXPECT_EQ(t.iters_per_epoch(), sources().split("train").size() / c.batch_size);
    EXPECT_EQ(t.total_iters(), 3 * t.iters_per_epoch());
    EXPECT_EQ(t.warmup_iters(), t.iters_per_epoch());
}

TEST(UpdateIsolation, EachSubStepTouchesOnlyItsOwnNetwork) {
    auto c = tiny_config();
    c.max_iters = 200;
    c.warmup_iters = 0;
    Trainer<float> t(sources(), Method::ddaig, c);
    for (int k = 0; k < 100; ++k) {
        const auto batch = t.next_batch();
        const double lr = t.learning_rate(t.iteration());
        const auto f0 = t.label_classifier().params(), h0 = t.domain_classifier().params();
        const auto th0 = t.dotnet().params();
        t.update_dotnet(batch, lr);
        ASSERT_EQ(t.label_classifier().params(), f0) << k;
        ASSERT_EQ(t.domain_classifier().params(), h0) << k;
        const auto th1 = t.dotnet().params();
        t.update_label_classifier(batch, lr, k % 2 == 0);
        ASSERT_EQ(t.dotnet().params(), th1) << k;
        ASSERT_EQ(t.domain_classifier().params(), h0) << k;
        const auto f1 = t.label_classifier().params();
        t.update_domain_classifier(batch, lr);
        ASSERT_EQ(t.dotnet().params(), th1) << k;
        ASSERT_EQ(t.label_classifier().params(), f1) << k;
        if (k == 0) EXPECT_NE(th1, th0);
    }
}

TEST(UpdateIsolation, WarmupStepsMatchVanillaStepsBitwise) {
    auto c = tiny_config();
    c.warmup_iters = 6;
    Trainer<float> ddaig(sources(), Method::ddaig, c), vanilla(sources(), Method::vanilla, c);
    ASSERT_EQ(ddaig.label_classifier().params(), vanilla.label_classifier().params());
    for (int k = 0; k < 6; ++k) {
        const auto batch = ddaig.next_batch();
        const auto r = ddaig.step(batch);
        EXPECT_TRUE(r.warmup);
        vanilla.step(batch);
        ASSERT_EQ(ddaig.label_classifier().params(), vanilla.label_classifier().params()) << k;
        EXPECT_FALSE(ddaig.last_trace().classifier_batch_version.has_value());
    }
    const auto batch = ddaig.next_batch();
    EXPECT_FALSE(ddaig.step(batch).warmup);
    vanilla.step(batch);
    EXPECT_NE(ddaig.label_classifier().params(), vanilla.label_classifier().params());
}

TEST(TrainStep, ZeroLearningRateLeavesEveryParameterUnchanged) {
    auto c = tiny_config();
    c.eta = 0.0;
    for (Method m : {Method::vanilla, Method::crossgrad, Method::ddaig}) {
        Trainer<float> t(sources(), m, c);
        const auto before = t.checkpoint();
        for (int k = 0; k < 6; ++k) t.step();
        const auto after = t.checkpoint();
        EXPECT_EQ(after.tensors, before.tensors) << to_string(m);
    }
}

TEST(TrainStep, ClassifierSeesBatchFromUpdatedDotnet) {
    auto c = tiny_config();
    c.warmup_iters = 1;
    Trainer<float> t(sources(), Method::ddaig, c);
    t.step();
    EXPECT_FALSE(t.last_trace().classifier_batch_version.has_value());
    for (int k = 0; k < 4; ++k) {
        t.step();
        const auto& tr = t.last_trace();
        ASSERT_TRUE(tr.generator_batch_version && tr.classifier_batch_version);
        EXPECT_EQ(*tr.classifier_batch_version, *tr.generator_batch_version + 1);
    }
}

TEST(TrainStep, LossesAreNonNegativeAndPerturbationIsBounded) {
    for (double lambda : {0.1, 0.3, 0.7}) {
        auto c = tiny_config();
        c.lambda = lambda;
        c.max_iters = 20;
        c.eta = 0.2;
        Trainer<float> t(sources(), Method::ddaig, c);
        while (!t.done()) {
            const auto r = t.step();
            EXPECT_TRUE(all_finite_nonnegative(r)) << to_json(r);
            EXPECT_EQ(*r.dotnet_objective, *r.transformed_label_loss - *r.transformed_domain_loss);
            EXPECT_LE(t.last_trace().max_perturbation, lambda + 1e-6);
        }
        EXPECT_GT(t.last_trace().max_perturbation, 0.0);
    }
}

TEST(TrainStep, LoggedLossesMatchRecomputationFromPreStepCheckpoint) {
    auto c = tiny_config();
    c.warmup_iters = 0;
    Trainer<float> t(sources(), Method::ddaig, c);
    t.step();
    t.step();
    const Checkpoint ck = t.checkpoint();
    const auto& train = sources().split("train");
    const Batch<float> batch = make_batch<float>(train, {0, 7, 19, 30}, sources().image_shape);
    const LossReport r = t.step(batch);

    // Rebuild the three networks from nothing but the checkpoint.
    const TrainConfig saved = train_config_from_json(ck.meta.at("config"));
    ClassifierConfig cc{sources().image_shape, sources().classes.size(), saved.conv_channels, saved.num_conv_blocks};
    ConvClassifier<float> f(cc);
    cc.num_outputs = sources().domains.size();
    ConvClassifier<float> h(cc);
    DotNetConfig dc = saved.dotnet;
    dc.input_channels = sources().image_shape[0];
    DotNet<float> g(dc);
    restore_entries(ck.tensors, "label/", f.params());
    restore_entries(ck.tensors, "domain/", h.params());
    restore_entries(ck.tensors, "dotnet/", g.params());

    const Tensor<float> xt = transform(g, batch.images, saved.lambda);
    auto ce = [](ConvClassifier<float>& net, const Tensor<float>& x, const std::vector<int>& y) {
        Tensor<float> logits = net.forward(x);
        double sum = 0;
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < y.size(); ++i) {
            const float* z = logits.data() + i * k;
            double m = z[0];
            for (std::size_t j = 1; j < k; ++j) m = std::max(m, static_cast<double>(z[j]));
            double s = 0;
            for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(z[j]) - m);
            sum += m + std::log(s) - static_cast<double>(z[static_cast<std::size_t>(y[i])]);
        }
        return sum / static_cast<double>(y.size());
    };
    EXPECT_NEAR(r.label_loss, ce(f, batch.images, batch.labels), 1e-5);
    EXPECT_NEAR(*r.domain_loss, ce(h, batch.images, batch.domains), 1e-5);
    EXPECT_NEAR(*r.transformed_label_loss, ce(f, xt, batch.labels), 1e-5);
    EXPECT_NEAR(*r.transformed_domain_loss, ce(h, xt, batch.domains), 1e-5);
}

TEST(Train, SameSeedGivesIdenticalChecksums) {
    auto c = tiny_config();
    const auto a = train(sources(), Method::ddaig, c);
    const auto b = train(sources(), Method::ddaig, c);
    EXPECT_EQ(checksum(a.trainer.label_classifier().params()), checksum(b.trainer.label_classifier().params()));
    EXPECT_EQ(checksum(a.trainer.dotnet().params()), checksum(b.trainer.dotnet().params()));
    EXPECT_EQ(a.reports, b.reports);
    c.seed = 4;
    const auto d = train(sources(), Method::ddaig, c);
    EXPECT_NE(checksum(a.trainer.label_classifier().params()), checksum(d.trainer.label_classifier().params()));
}

TEST(Train, AlphaZeroLambdaZeroReducesToVanilla) {
    auto c = tiny_config();
    c.alpha = 0.0;
    c.lambda = 0.0;
    c.max_iters = 50;
    c.warmup_iters = 5;
    c.augment_crop = true;
    c.augment_flip = true;
    Trainer<float> ddaig(sources(), Method::ddaig, c), vanilla(sources(), Method::vanilla, c);
    for (int k = 0; k < 50; ++k) {
        ddaig.step();
        vanilla.step();
        ASSERT_EQ(ddaig.label_classifier().params(), vanilla.label_classifier().params()) << k;
    }
}

TEST(Train, WritesLossLogAndEpochCheckpoints) {
    const auto dir = temp_dir("train_outputs");
    auto c = tiny_config();
    c.max_iters = 0;
    c.epochs = 2;
    c.warmup_iters = 2;
    TrainOutputs out{dir / "ckpt", dir / "loss.jsonl", json{{"held_out", "texture"}}};
    fs::create_directories(out.checkpoint_dir);
    const auto res = train(sources(), Method::ddaig, c, out);
    EXPECT_TRUE(fs::exists(dir / "ckpt" / "epoch_001.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "ckpt" / "epoch_002.ckpt"));
    const auto fin = load_checkpoint(dir / "ckpt" / "final.ckpt");
    EXPECT_EQ(fin.meta.at("held_out"), "texture");
    EXPECT_EQ(fin.iter, res.trainer.total_iters());
    std::ifstream log(out.loss_log);
    std::string line;
    std::size_t n = 0;
    while (std::getline(log, line)) {
        const json j = json::parse(line);
        EXPECT_EQ(j.at("iter"), n);
        EXPECT_EQ(j.at("dotnet_objective").get<double>(),
                  j.at("J~_L").get<double>() - j.at("J~_D").get<double>());
        ++n;
    }
    EXPECT_EQ(n, res.trainer.total_iters());
}

TEST(Train, NonFiniteLossAbortsBeforeAnyUpdate) {
    Trainer<float> t(sources(), Method::ddaig, tiny_config());
    auto batch = t.next_batch();
    batch.images[5] = std::numeric_limits<float>::quiet_NaN();
    const auto before = t.checkpoint();
    try {
        t.step(batch);
        FAIL() << "expected TrainingAborted";
    } catch (const TrainingAborted& e) {
        EXPECT_FALSE(e.report().finite());
        EXPECT_EQ(e.report().iter, 0u);
    }
    EXPECT_EQ(t.checkpoint().tensors, before.tensors);
}

TEST(Train, DivergenceIsLoggedThenRaised) {
    const auto dir = temp_dir("diverge");
    auto c = tiny_config();
    c.eta = 1e30;
    c.max_iters = 30;
    EXPECT_THROW(train(sources(), Method::ddaig, c, {{}, dir / "loss.jsonl"}), TrainingAborted);
    std::ifstream log(dir / "loss.jsonl");
    std::string line, last;
    while (std::getline(log, line)) last = line;
    ASSERT_FALSE(last.empty());
    const json j = json::parse(last);
    bool nonfinite = j.at("J_L").is_null() || !std::isfinite(j.at("J_L").get<double>());
    for (const char* k : {"J~_L", "J_D", "J~_D"})
        if (!j.at(k).is_null() && !std::isfinite(j.at(k).get<double>())) nonfinite = true;
    EXPECT_TRUE(nonfinite) << last;
}
