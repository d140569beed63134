#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "rwa/dataset_io.hpp"
#include "test_util.hpp"

namespace rwa {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("rwa_io_" + name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::remove_all(p);
    return p;
}

RegionRecord box_region(double x1, double y1, double x2, double y2, float conf, std::uint32_t frame, float tag = 0) {
    RegionRecord r;
    r.feature = {tag};
    r.location = normalize_box(x1, y1, x2, y2, 100, 100);
    r.confidence = conf;
    r.frame_index = frame;
    return r;
}

void expect_location(const Location& got, std::array<float, 7> want) {
    for (std::size_t i = 0; i < 7; ++i) EXPECT_FLOAT_EQ(got[i], want[i]) << "component " << i;
}

TEST(NormalizeBox, Examples) {
    expect_location(normalize_box(10, 20, 60, 120, 100, 200), {0.1f, 0.1f, 0.6f, 0.6f, 0.5f, 0.5f, 0.25f});
    expect_location(normalize_box(0, 0, 640, 360, 640, 360), {0, 0, 1, 1, 1, 1, 1});
    expect_location(normalize_box(5, 5, 5, 5, 10, 10), {0.5f, 0.5f, 0.5f, 0.5f, 0, 0, 0});
}

TEST(NormalizeBox, RejectsBadBoxesWithCoordinates) {
    try {
        (void)normalize_box(60, 20, 10, 120, 100, 200);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("(60,20,10,120)"), std::string::npos);
    }
    EXPECT_THROW((void)normalize_box(0, 0, 101, 10, 100, 100), std::invalid_argument);
    EXPECT_THROW((void)normalize_box(0, 0, 1, 1, 0, 100), std::invalid_argument);
}

TEST(NormalizeBox, OutputSatisfiesRegionInvariants) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) EXPECT_TRUE(validate_region(test::random_region(rng, 4, 0)).empty());
}

TEST(SelectSorted, Examples) {
    FrameRegions one{{box_region(0, 0, 1, 1, 0.9f, 0, 0), box_region(0, 0, 1, 1, 0.5f, 0, 1), box_region(0, 0, 1, 1, 0.7f, 0, 2)}};
    auto top2 = select_regions_sorted(one, 2);
    ASSERT_EQ(top2.size(), 2u);
    EXPECT_EQ(top2[0].feature[0], 0);
    EXPECT_EQ(top2[1].feature[0], 2);

    EXPECT_EQ(select_regions_sorted(one, 5).size(), 3u);

    FrameRegions tie{{box_region(0, 0, 1, 1, 0.5f, 0, 0), box_region(0, 0, 1, 1, 0.5f, 0, 1)}};
    auto first = select_regions_sorted(tie, 1);
    ASSERT_EQ(first.size(), 1u);
    EXPECT_EQ(first[0].feature[0], 0);
}

TEST(SelectSorted, SizeAndOrderingProperties) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> count(0, 9);
    for (int trial = 0; trial < 50; ++trial) {
        FrameRegions frames(4);
        std::size_t expected = 0;
        const std::size_t k = 1 + trial % 6;
        for (std::uint32_t f = 0; f < 4; ++f) {
            const int n = count(rng);
            for (int i = 0; i < n; ++i) frames[f].push_back(test::random_region(rng, 2, f));
            expected += std::min<std::size_t>(k, n);
        }
        if (expected == 0) continue;
        const auto out = select_regions_sorted(frames, k);
        EXPECT_EQ(out.size(), expected);
        for (std::size_t i = 1; i < out.size(); ++i)
            if (out[i].frame_index == out[i - 1].frame_index) EXPECT_LE(out[i].confidence, out[i - 1].confidence);
        EXPECT_LE(select_regions_tracked(frames, k, 0.5).size(), out.size());
    }
}

TEST(SelectSorted, NoRegionsIsAnError) {
    EXPECT_THROW((void)select_regions_sorted(FrameRegions{{}, {}}, 3), std::invalid_argument);
}

TEST(SelectTracked, Examples) {
    FrameRegions same{{box_region(10, 10, 50, 50, 0.6f, 0)}, {box_region(10, 10, 50, 50, 0.9f, 1)}};
    auto kept = select_regions_tracked(same, 30, 0.5);
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_FLOAT_EQ(kept[0].confidence, 0.9f);

    FrameRegions disjoint{{box_region(0, 0, 10, 10, 0.6f, 0)}, {box_region(50, 50, 60, 60, 0.9f, 1)}};
    EXPECT_EQ(select_regions_tracked(disjoint, 30, 0.5).size(), 2u);

    FrameRegions half{{box_region(0, 0, 10, 10, 0.6f, 0)}, {box_region(0, 0, 10, 20, 0.9f, 1)}};
    EXPECT_DOUBLE_EQ(box_iou(half[0][0].location, half[1][0].location), 0.5);
    EXPECT_EQ(select_regions_tracked(half, 30, 0.5).size(), 1u);
}

TEST(SampleFrames, Examples) {
    EXPECT_EQ(sample_frames(16, 8, SampleMode::uniform), (std::vector<std::uint32_t>{1, 3, 5, 7, 9, 11, 13, 15}));
    EXPECT_EQ(sample_frames(9, 1, SampleMode::uniform), (std::vector<std::uint32_t>{4}));
    EXPECT_EQ(sample_frames(100, 5, SampleMode::random, 17), sample_frames(100, 5, SampleMode::random, 17));
}

TEST(SampleFrames, Properties) {
    for (std::uint32_t total = 1; total < 40; ++total)
        for (std::uint32_t m = 1; m <= total; ++m)
            for (auto mode : {SampleMode::uniform, SampleMode::random}) {
                const auto out = sample_frames(total, m, mode, total * 31 + m);
                ASSERT_EQ(out.size(), m);
                for (std::size_t i = 0; i < out.size(); ++i) {
                    EXPECT_LT(out[i], total);
                    if (i) EXPECT_LT(out[i - 1], out[i]);
                }
            }
    EXPECT_THROW((void)sample_frames(3, 4, SampleMode::uniform), std::invalid_argument);
    EXPECT_THROW((void)sample_frames(3, 0, SampleMode::random), std::invalid_argument);
    EXPECT_THROW((void)parse_sample_mode("sparse"), std::invalid_argument);
}

TEST(Tokenize, Examples) {
    Vocabulary v({{"a", 3}, {"man", 4}, {"smiles", 5}});
    EXPECT_EQ(tokenize("A man smiles.", v).token_ids, (std::vector<std::int32_t>{1, 3, 4, 5}));
    EXPECT_EQ(tokenize("xyzzy", v).token_ids, (std::vector<std::int32_t>{1, 2}));
    EXPECT_THROW((void)tokenize("", v), std::invalid_argument);
    EXPECT_THROW((void)tokenize(" ... ", v), std::invalid_argument);
}

TEST(Tokenize, BuiltVocabularyIsSortedAfterReservedIds) {
    auto v = Vocabulary::build({"b a", "c, a"});
    EXPECT_EQ(v.lookup("a"), 3);
    EXPECT_EQ(v.lookup("b"), 4);
    EXPECT_EQ(v.lookup("c"), 5);
    EXPECT_EQ(v.table_size(), 6u);
    EXPECT_THROW(Vocabulary({{"x", 1}}), std::invalid_argument);
}

Dataset small_dataset(std::uint64_t seed, std::uint32_t dim = 4) {
    std::mt19937_64 rng(seed);
    Dataset ds;
    ds.manifest.dim = dim;
    ds.manifest.vocab = Vocabulary::build({"a dog runs", "a cat sleeps"});
    for (int v = 0; v < 3; ++v) {
        std::vector<RegionRecord> regions;
        for (std::uint32_t f = 0; f < 4; ++f)
            for (int i = 0; i < 3; ++i) regions.push_back(test::random_region(rng, dim, f));
        const std::string id = "vid" + std::to_string(v);
        ds.manifest.videos.push_back({id, v % 2 ? "a cat sleeps" : "a dog runs", 4, 320, 240, id + ".bin", static_cast<std::uint32_t>(regions.size())});
        ds.regions.push_back(std::move(regions));
    }
    return ds;
}

TEST(DatasetFiles, RoundTripIsValueIdentical) {
    const auto dir = scratch_dir("roundtrip");
    const auto ds = small_dataset(1);
    write_dataset(dir, ds);
    EXPECT_EQ(read_dataset(dir), ds);

    const auto split = scratch_dir("split");
    write_dataset(split / "meta", ds, split / "objects");
    EXPECT_EQ(read_dataset(split / "meta", split / "objects"), ds);
    fs::remove_all(dir);
    fs::remove_all(split);
}

TEST(DatasetFiles, WritingTwiceIsByteIdentical) {
    const auto a = scratch_dir("bytes_a"), b = scratch_dir("bytes_b");
    const auto ds = small_dataset(2);
    write_dataset(a, ds);
    write_dataset(b, ds);
    for (const auto& entry : fs::directory_iterator(a))
        EXPECT_EQ(detail::read_file(entry.path()), detail::read_file(b / entry.path().filename())) << entry.path();
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(DatasetFiles, BinaryLayout) {
    RegionRecord r = box_region(0, 0, 50, 100, 0.25f, 7, 1.5f);
    const auto bytes = encode_region_file({r}, 1);
    ASSERT_EQ(bytes.size(), 16u + 4u * (1 + 7 + 1 + 1));
    EXPECT_EQ(bytes.substr(0, 4), "DVLP");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[8], 1);
    EXPECT_EQ(bytes[12], 1);
    EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 4]), 7);
}

DatasetError::Kind decode_error(const std::string& bytes, std::uint32_t dim) {
    try {
        (void)decode_region_file(bytes, dim, "test.bin");
    } catch (const DatasetError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error";
    return DatasetError::Kind::io;
}

TEST(DatasetFiles, CorruptInputsAreRejected) {
    const auto ds = small_dataset(3);
    const auto good = encode_region_file(ds.regions[0], 4);

    auto bad = good;
    bad[0] = 'X';
    EXPECT_EQ(decode_error(bad, 4), DatasetError::Kind::bad_magic);
    EXPECT_EQ(decode_error(good, 16), DatasetError::Kind::dim_mismatch);
    EXPECT_EQ(decode_error(good.substr(0, good.size() - 3), 4), DatasetError::Kind::truncated);
    EXPECT_EQ(decode_error(good + "x", 4), DatasetError::Kind::truncated);
    bad = good;
    bad[4] = 2;
    EXPECT_EQ(decode_error(bad, 4), DatasetError::Kind::bad_version);
}

TEST(DatasetFiles, ManifestDimMismatchReportsMessage) {
    const auto dir = scratch_dir("dim");
    auto ds = small_dataset(4);
    write_dataset(dir, ds);
    auto j = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
    j["dim"] = 16;
    detail::write_file(dir / "manifest.json", j.dump());
    try {
        (void)read_dataset(dir);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("dim mismatch"), std::string::npos);
    }
    fs::remove_all(dir);
}

TEST(DatasetFiles, MissingFilesAreIoErrors) {
    EXPECT_THROW((void)read_dataset(scratch_dir("missing")), DatasetError);
}

TEST(PrepareVideo, FramesAndRegionBudget) {
    const auto ds = small_dataset(5);
    SamplingOptions opt;
    opt.num_frames = 2;
    opt.mode = SampleMode::uniform;
    opt.object_num = 2;
    const auto v = prepare_video(ds, 1, opt, 0);
    EXPECT_EQ(v.sampled_frame_indices, (std::vector<std::uint32_t>{1, 3}));
    EXPECT_EQ(v.regions.size(), 4u);
    EXPECT_TRUE(validate_sample(v, opt.object_num).empty());

    opt.num_frames = 99;
    EXPECT_EQ(prepare_video(ds, 1, opt, 0).sampled_frame_indices.size(), 4u);
}

TEST(MakeBatch, PaddingSemantics) {
    std::mt19937_64 rng(6);
    auto video = [&](std::size_t n) {
        VideoSample v;
        v.video_id = "v" + std::to_string(n);
        v.sampled_frame_indices = {0};
        for (std::size_t i = 0; i < n; ++i) v.regions.push_back(test::random_region(rng, 2, 0));
        return v;
    };
    CaptionSample c3{"x y", {kClsId, 4, 5}}, c2{"x", {kClsId, 4}};
    const auto b = make_batch({{video(3), c3}, {video(5), c2}});
    EXPECT_EQ(b.region_pad_mask[0], (std::vector<bool>{true, true, true, false, false}));
    EXPECT_EQ(b.region_pad_mask[1], std::vector<bool>(5, true));
    EXPECT_EQ(b.word_pad_mask[1], (std::vector<bool>{true, true, false}));
    EXPECT_EQ(b.padded_token_ids[1], (std::vector<std::int32_t>{kClsId, 4, kPadId}));

    EXPECT_THROW((void)make_batch({{video(3), c3}}), std::invalid_argument);

    const auto v = video(4);
    const auto dup = make_batch({{v, c3}, {v, c3}});
    EXPECT_EQ(dup.region_pad_mask[0], dup.region_pad_mask[1]);
    EXPECT_EQ(dup.word_pad_mask[0], dup.word_pad_mask[1]);
}

}  // namespace
}  // namespace rwa
