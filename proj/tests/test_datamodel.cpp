#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

#include "rwa/datamodel.hpp"
#include "rwa/dataset_io.hpp"

namespace rwa {
namespace {

bool contains(const std::vector<std::string>& msgs, const std::string& needle) {
    return std::any_of(msgs.begin(), msgs.end(), [&](const std::string& m) { return m.find(needle) != std::string::npos; });
}

RegionRecord good_region() {
    RegionRecord r;
    r.feature = {1.0f, 0.0f, 0.5f};
    r.location = normalize_box(10, 20, 60, 120, 100, 200);
    r.confidence = 0.8f;
    r.frame_index = 2;
    return r;
}

TEST(Validate, ConsistentRegionIsClean) { EXPECT_TRUE(validate_region(good_region()).empty()); }

TEST(Validate, AreaMismatchIsReported) {
    auto r = good_region();
    r.location[6] += 0.5f;
    EXPECT_TRUE(contains(validate_region(r), "area mismatch"));
}

TEST(Validate, EveryViolationIsListed) {
    auto r = good_region();
    r.location[0] = 0.9f;  // x1 > x2, width no longer matches
    r.confidence = 1.5f;
    r.feature[1] = std::numeric_limits<float>::quiet_NaN();
    const auto msgs = validate_region(r, 4);
    EXPECT_TRUE(contains(msgs, "x1 > x2"));
    EXPECT_TRUE(contains(msgs, "width mismatch"));
    EXPECT_TRUE(contains(msgs, "confidence"));
    EXPECT_TRUE(contains(msgs, "feature[1] not finite"));
    EXPECT_TRUE(contains(msgs, "feature length 3 != 4"));
}

TEST(Validate, CaptionWithOnlyClsIsEmpty) {
    CaptionSample c{"", {kClsId}};
    EXPECT_TRUE(contains(validate_sample(c), "empty caption"));
}

TEST(Validate, CaptionStructure) {
    EXPECT_TRUE(validate_sample(CaptionSample{"a b", {kClsId, 5, 6}}).empty());
    EXPECT_TRUE(contains(validate_sample(CaptionSample{"", {5, 6}}), "not CLS"));
    EXPECT_TRUE(contains(validate_sample(CaptionSample{"", {kClsId, 5, kPadId, 6}}), "PAD at interior position 2"));
}

TEST(Validate, VideoSample) {
    VideoSample v;
    v.video_id = "v";
    v.num_frames_total = 4;
    v.sampled_frame_indices = {2};
    v.regions = {good_region(), good_region()};
    EXPECT_TRUE(validate_sample(v).empty());
    EXPECT_TRUE(contains(validate_sample(v, 1), "more regions than object_num"));

    v.regions[1].frame_index = 3;
    v.sampled_frame_indices.push_back(9);
    const auto msgs = validate_sample(v);
    EXPECT_TRUE(contains(msgs, "region[1]: frame_index 3 not among sampled frames"));
    EXPECT_TRUE(contains(msgs, "sampled frame 9 >= num_frames_total"));

    EXPECT_TRUE(contains(validate_sample(VideoSample{}), "no regions"));
}

TEST(Validate, MalformedContentNeverThrows) {
    VideoSample v;
    v.num_frames_total = 0;
    RegionRecord r;
    r.location.fill(std::numeric_limits<float>::infinity());
    r.confidence = std::numeric_limits<float>::quiet_NaN();
    v.regions = {r};
    std::vector<std::string> msgs;
    EXPECT_NO_THROW(msgs = validate_sample(v));
    EXPECT_GE(msgs.size(), 5u);
}

TEST(Validate, ModelConfig) {
    EXPECT_TRUE(validate_config(ModelConfig{}).empty());
    EXPECT_TRUE(validate_config(ModelConfig::full_scale()).empty());
    ModelConfig c;
    c.heads = 5;
    c.sigma = 0;
    const auto msgs = validate_config(c);
    EXPECT_TRUE(contains(msgs, "heads must divide d"));
    EXPECT_TRUE(contains(msgs, "sigma must be positive"));
}

}  // namespace
}  // namespace rwa
