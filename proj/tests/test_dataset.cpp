#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace ddaig;
using namespace testing_support;

namespace {

SynthBenchmarkSpec small_spec(std::uint64_t seed) {
    SynthBenchmarkSpec s;
    s.num_domains = 4;
    s.num_classes = 10;
    s.images_per_class_per_domain = 5;
    s.image_shape = {3, 16, 16};
    s.seed = seed;
    return s;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_text_file(e.path());
    }
    return out;
}

}  // namespace

TEST(Synthetic, SameSpecGivesByteIdenticalTrees) {
    const auto a = temp_dir("synth_a"), b = temp_dir("synth_b"), c = temp_dir("synth_c");
    generate_synthetic_benchmark(small_spec(7), a);
    generate_synthetic_benchmark(small_spec(7), b);
    generate_synthetic_benchmark(small_spec(8), c);
    const auto ta = tree_bytes(a);
    EXPECT_EQ(ta, tree_bytes(b));
    EXPECT_NE(ta, tree_bytes(c));
}

TEST(Synthetic, CountsAndEightyTwentySplit) {
    auto spec = small_spec(1);
    spec.images_per_class_per_domain = 50;
    spec.image_shape = {3, 8, 8};
    const auto ds = generate_synthetic_benchmark(spec, temp_dir("synth_counts"));
    EXPECT_EQ(ds.split("train").size() + ds.split("val").size(), 4u * 10u * 50u);
    EXPECT_EQ(ds.split("train").size(), 1600u);
    EXPECT_EQ(ds.split("val").size(), 400u);
    std::map<std::pair<int, int>, int> per;
    for (const auto& im : ds.split("train")) per[{im.domain_label, im.class_label}]++;
    for (const auto& [key, n] : per) EXPECT_EQ(n, 40);
    std::set<std::string> train_paths;
    for (const auto& im : ds.split("train")) train_paths.insert(im.path);
    for (const auto& im : ds.split("val")) EXPECT_FALSE(train_paths.count(im.path));
}

TEST(Synthetic, PixelsAreNormalizedAndLabelsInRange) {
    const auto& ds = tiny_benchmark();
    for (const auto& [name, items] : ds.splits)
        for (const auto& im : items) {
            ASSERT_EQ(im.pixels.size(), ds.image_size());
            for (float v : im.pixels) {
                EXPECT_GE(v, -1.0f);
                EXPECT_LE(v, 1.0f);
            }
            EXPECT_LT(static_cast<std::size_t>(im.class_label), ds.classes.size());
            EXPECT_LT(static_cast<std::size_t>(im.domain_label), ds.domains.size());
            EXPECT_EQ(im.path.substr(0, im.path.find('/')), ds.domains[static_cast<std::size_t>(im.domain_label)]);
        }
}

TEST(Synthetic, DomainsLookDifferent) {
    // Mean absolute pixel difference between domain means must be clearly non-zero.
    const auto& ds = tiny_benchmark();
    std::vector<std::vector<double>> mean(ds.domains.size(), std::vector<double>(ds.image_size(), 0.0));
    std::vector<int> count(ds.domains.size(), 0);
    for (const auto& im : ds.split("train")) {
        auto d = static_cast<std::size_t>(im.domain_label);
        for (std::size_t k = 0; k < im.pixels.size(); ++k) mean[d][k] += im.pixels[k];
        count[d]++;
    }
    for (std::size_t a = 0; a < mean.size(); ++a)
        for (std::size_t b = a + 1; b < mean.size(); ++b) {
            double diff = 0;
            for (std::size_t k = 0; k < ds.image_size(); ++k) diff += std::abs(mean[a][k] / count[a] - mean[b][k] / count[b]);
            EXPECT_GT(diff / static_cast<double>(ds.image_size()), 0.05) << ds.domains[a] << " vs " << ds.domains[b];
        }
}

TEST(Synthetic, RejectsInvalidSpecs) {
    auto s = small_spec(0);
    s.num_domains = 1;
    EXPECT_THROW(generate_synthetic_benchmark(s, temp_dir("synth_bad1")), Error);
    s = small_spec(0);
    s.num_domains = 2;
    s.domain_recipes = {default_recipes(1)[0], default_recipes(1)[0]};
    s.domain_recipes[1].name = "copy";
    EXPECT_THROW(generate_synthetic_benchmark(s, temp_dir("synth_bad2")), Error);
}

TEST(Synthetic, RefusesNonEmptyDirectoryUnlessForced) {
    const auto dir = temp_dir("synth_force");
    write_text_file(dir / "notes.txt", "keep me");
    EXPECT_THROW(generate_synthetic_benchmark(small_spec(1), dir), Error);
    EXPECT_THROW(generate_synthetic_benchmark(small_spec(1), dir, true), Error);
    const auto ds_dir = temp_dir("synth_force2");
    generate_synthetic_benchmark(small_spec(1), ds_dir);
    EXPECT_THROW(generate_synthetic_benchmark(small_spec(2), ds_dir), Error);
    EXPECT_NO_THROW(generate_synthetic_benchmark(small_spec(2), ds_dir, true));
}

TEST(Synthetic, SpecJsonIsStrict) {
    EXPECT_THROW(synth_spec_from_json(json{{"num_domain", 4}}), Error);
    const auto s = synth_spec_from_json(json{{"num_domains", 3}, {"seed", 9}, {"image_shape", {1, 16, 16}}});
    EXPECT_EQ(s.num_domains, 3u);
    EXPECT_EQ(s.seed, 9u);
    EXPECT_EQ(s.image_shape[0], 1u);
    const auto back = synth_spec_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
}

TEST(ImageFolder, RoundTripsGeneratedDataset) {
    const auto dir = temp_dir("roundtrip");
    const auto generated = generate_synthetic_benchmark(small_spec(3), dir);
    EXPECT_EQ(load_image_folder(dir), generated);
}

TEST(ImageFolder, GrayscaleImagesAreReplicatedToThreeChannels) {
    const auto dir = temp_dir("gray");
    fs::create_directories(dir / "a" / "0");
    Image8 img{8, 8, 1, std::vector<std::uint8_t>(64)};
    for (std::size_t k = 0; k < 64; ++k) img.pixels[k] = static_cast<std::uint8_t>(k * 4);
    write_png(dir / "a" / "0" / "00000.png", img);
    json m = {{"domains", {"a"}}, {"classes", {"0"}}, {"image_shape", {3, 8, 8}}, {"splits", {{"train", {"a/0/00000.png"}}}}};
    write_text_file(dir / "manifest.json", m.dump());
    const auto ds = load_image_folder(dir);
    const auto& px = ds.split("train")[0].pixels;
    for (std::size_t k = 0; k < 64; ++k) {
        EXPECT_EQ(px[k], px[64 + k]);
        EXPECT_EQ(px[k], px[128 + k]);
        EXPECT_FLOAT_EQ(px[k], static_cast<float>(k * 4) / 255.0f * 2.0f - 1.0f);
    }
}

TEST(ImageFolder, ShapeMismatchNamesTheFile) {
    const auto dir = temp_dir("mismatch");
    fs::create_directories(dir / "a" / "0");
    write_png(dir / "a" / "0" / "bad.png", Image8{30, 30, 3, std::vector<std::uint8_t>(30 * 30 * 3, 9)});
    json m = {{"domains", {"a"}}, {"classes", {"0"}}, {"image_shape", {3, 32, 32}}, {"splits", {{"train", {"a/0/bad.png"}}}}};
    write_text_file(dir / "manifest.json", m.dump());
    try {
        load_image_folder(dir);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("bad.png"), std::string::npos) << msg;
        EXPECT_NE(msg.find("3x32x32"), std::string::npos) << msg;
    }
}

TEST(ImageFolder, MissingManifestIsAnError) {
    EXPECT_THROW(load_image_folder(temp_dir("no_manifest")), Error);
}

TEST(Sampler, ReturnsRequestedBatchSizeAndIsDeterministic) {
    const auto& ds = tiny_benchmark();
    const auto& train = ds.split("train");
    BatchSampler a(train, ds.domains.size(), 5, false), b(train, ds.domains.size(), 5, false);
    for (int i = 0; i < 20; ++i) {
        const auto ia = a.next(16);
        EXPECT_EQ(ia.size(), 16u);
        EXPECT_EQ(ia, b.next(16));
    }
    EXPECT_EQ(sample_minibatch(ds, "train", 12, a).size(), 12u);
}

TEST(Sampler, EpochCoversEveryItemExactlyOnce) {
    const auto& ds = tiny_benchmark();
    const auto& train = ds.split("train");
    ASSERT_EQ(train.size() % 8, 0u);
    BatchSampler s(train, ds.domains.size(), 1, false);
    std::multiset<std::size_t> seen;
    for (std::size_t i = 0; i < train.size() / 8; ++i)
        for (auto k : s.next(8)) seen.insert(k);
    EXPECT_EQ(seen.size(), train.size());
    for (std::size_t k = 0; k < train.size(); ++k) EXPECT_EQ(seen.count(k), 1u);
}

TEST(Sampler, BalancedModeDrawsEqualPerDomainCounts) {
    const auto& ds = tiny_benchmark(10, 16, 4, 4);
    const auto& train = ds.split("train");
    BatchSampler s(train, 4, 2, true);
    for (int rep = 0; rep < 5; ++rep) {
        std::map<int, int> per;
        for (auto k : s.next(32)) per[train[k].domain_label]++;
        ASSERT_EQ(per.size(), 4u);
        for (const auto& [d, n] : per) EXPECT_EQ(n, 8);
    }
    EXPECT_THROW(s.next(30), Error);
}

TEST(Sampler, RejectsOversizedBatchAndRestoresState) {
    const auto& ds = tiny_benchmark();
    const auto& train = ds.split("train");
    BatchSampler s(train, ds.domains.size(), 3, false);
    EXPECT_THROW(s.next(train.size() + 1), Error);
    s.next(8);
    const json state = s.state();
    const auto expect = s.next(8);
    BatchSampler t(train, ds.domains.size(), 99, false);
    t.restore(state);
    EXPECT_EQ(t.next(8), expect);
}

TEST(SourceView, HoldsOutOneDomainAndRenumbersTheRest) {
    const auto& ds = tiny_benchmark();
    const auto view = make_source_view(ds, ds.domains[1]);
    EXPECT_EQ(view.sources.domains, (std::vector<std::string>{ds.domains[0], ds.domains[2]}));
    std::set<std::string> held;
    for (const auto& im : view.held_out) {
        EXPECT_EQ(im.domain_label, 1);
        held.insert(im.path);
    }
    EXPECT_EQ(view.held_out.size(), ds.domain_images(1).size());
    for (const auto& [name, items] : view.sources.splits)
        for (const auto& im : items) {
            EXPECT_FALSE(held.count(im.path));
            EXPECT_LT(im.domain_label, 2);
        }
    EXPECT_THROW(make_source_view(ds, "nowhere"), Error);
}
