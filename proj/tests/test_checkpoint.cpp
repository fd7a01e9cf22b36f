#include <gtest/gtest.h>

#include "support.hpp"

using namespace ddaig;
using namespace testing_support;

namespace {

const MultiDomainDataset& sources() {
    static const MultiDomainDataset s = make_source_view(tiny_benchmark(10, 16, 4, 4), "clean").sources;
    return s;
}

TrainConfig resumable_config() {
    auto c = tiny_config();
    c.max_iters = 24;
    c.warmup_iters = 3;
    c.augment_crop = true;
    c.augment_flip = true;
    c.dotnet.use_stn = true;
    return c;
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    Trainer<float> t(sources(), Method::ddaig, resumable_config());
    for (int k = 0; k < 5; ++k) t.step();
    const auto dir = temp_dir("ckpt_bytes");
    save_checkpoint(t.checkpoint(), dir / "a.ckpt");
    const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(loaded, t.checkpoint());
    save_checkpoint(loaded, dir / "b.ckpt");
    EXPECT_EQ(read_text_file(dir / "a.ckpt"), read_text_file(dir / "b.ckpt"));
}

TEST(Checkpoint, HeaderDescribesContiguousLittleEndianFloats) {
    Checkpoint ck;
    ck.iter = 7;
    ck.tensors.push_back({"w", Tensor<float>({2}, {1.0f, -2.0f})});
    ck.optimizer.push_back({"m", Tensor<float>({1}, {0.5f})});
    const std::string bytes = serialize(ck);
    const auto nl = bytes.find('\n');
    const json header = json::parse(bytes.substr(0, nl));
    EXPECT_EQ(header.at("format"), "ddaig-checkpoint");
    EXPECT_EQ(header.at("version"), Checkpoint::kVersion);
    EXPECT_EQ(header.at("tensors")[0].at("offset"), 0);
    EXPECT_EQ(header.at("optimizer")[0].at("offset"), 8);
    const std::string data = bytes.substr(nl + 1);
    ASSERT_EQ(data.size(), 12u);
    // 1.0f = 0x3f800000, stored low byte first.
    EXPECT_EQ(static_cast<unsigned char>(data[2]), 0x80);
    EXPECT_EQ(static_cast<unsigned char>(data[3]), 0x3f);
    EXPECT_EQ(deserialize(bytes), ck);
}

TEST(Checkpoint, RejectsTruncationTrailingBytesAndOtherVersions) {
    Trainer<float> t(sources(), Method::vanilla, resumable_config());
    const std::string bytes = serialize(t.checkpoint());
    EXPECT_NE(error_of([&] { deserialize(bytes.substr(0, bytes.size() - 3)); }).find("truncated"), std::string::npos);
    EXPECT_NE(error_of([&] { deserialize(bytes.substr(0, 20)); }).find("truncated"), std::string::npos);
    EXPECT_NE(error_of([&] { deserialize(bytes + "xx"); }).find("trailing"), std::string::npos);
    const auto nl = bytes.find('\n');
    json header = json::parse(bytes.substr(0, nl));
    header["version"] = 99;
    EXPECT_NE(error_of([&] { deserialize(header.dump() + bytes.substr(nl)); }).find("version 99"), std::string::npos);
    EXPECT_THROW(load_checkpoint(temp_dir("ckpt_missing") / "none.ckpt"), Error);
}

TEST(Checkpoint, ArchitectureMismatchListsEveryOffendingTensor) {
    auto c = resumable_config();
    Trainer<float> small(sources(), Method::ddaig, c);
    Checkpoint ck = small.checkpoint();
    c.conv_channels = 6;
    Trainer<float> wide(sources(), Method::ddaig, c);
    const std::string msg = error_of([&] { wide.restore(ck); });
    EXPECT_NE(msg.find("shape mismatch for label/conv1.weight"), std::string::npos) << msg;
    EXPECT_NE(msg.find("label/fc.weight"), std::string::npos) << msg;

    ck = small.checkpoint();
    ck.tensors.push_back({"label/extra", Tensor<float>({3})});
    std::erase_if(ck.tensors, [](const Checkpoint::Entry& e) { return e.name == "label/fc.bias"; });
    const std::string msg2 = error_of([&] { small.restore(ck); });
    EXPECT_NE(msg2.find("unexpected tensor label/extra"), std::string::npos) << msg2;
    EXPECT_NE(msg2.find("missing tensor label/fc.bias"), std::string::npos) << msg2;

    Trainer<float> vanilla(sources(), Method::vanilla, resumable_config());
    EXPECT_NE(error_of([&] { vanilla.restore(small.checkpoint()); }).find("method"), std::string::npos);
}

TEST(Checkpoint, ResumeReproducesUnbrokenTrajectoryBitwise) {
    for (Method m : {Method::vanilla, Method::crossgrad, Method::ddaig}) {
        const auto c = resumable_config();
        Trainer<float> unbroken(sources(), m, c);
        std::vector<LossReport> full;
        while (!unbroken.done()) full.push_back(unbroken.step());

        Trainer<float> first(sources(), m, c);
        std::vector<LossReport> resumed;
        for (int k = 0; k < 10; ++k) resumed.push_back(first.step());
        const auto path = temp_dir("ckpt_resume") / "mid.ckpt";
        save_checkpoint(first.checkpoint(), path);

        Trainer<float> second(sources(), m, c);
        second.restore(load_checkpoint(path));
        EXPECT_EQ(second.iteration(), 10u);
        while (!second.done()) resumed.push_back(second.step());

        EXPECT_EQ(resumed, full) << to_string(m);
        EXPECT_EQ(second.checkpoint().tensors, unbroken.checkpoint().tensors) << to_string(m);
    }
}
