#pragma once

// Dataset layout, region/frame selection, tokenization and batching.
//
// On disk a dataset is a directory holding manifest.json plus one binary file
// per video:
//
//   "DVLP" | u32 version=1 | u32 R | u32 d
//   f32 features [R×d] | f32 locations [R×7] | f32 confidences [R] | u32 frame_index [R]
//
// All integers and floats little-endian, no padding between sections.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rwa/datamodel.hpp"

namespace rwa {

// ---------------------------------------------------------------------------
// Geometry

/// Pixel box to the 7-d normalized location vector.
[[nodiscard]] inline Location normalize_box(double x1, double y1, double x2, double y2, double frame_w, double frame_h) {
    auto describe = [&] {
        std::ostringstream os;
        os << "(" << x1 << "," << y1 << "," << x2 << "," << y2 << ") in frame " << frame_w << "x" << frame_h;
        return os.str();
    };
    if (!(frame_w > 0.0) || !(frame_h > 0.0)) throw std::invalid_argument("normalize_box: non-positive frame size " + describe());
    if (!(0.0 <= x1 && x1 <= x2 && x2 <= frame_w && 0.0 <= y1 && y1 <= y2 && y2 <= frame_h))
        throw std::invalid_argument("normalize_box: inverted or out-of-frame box " + describe());
    const double w = (x2 - x1) / frame_w;
    const double h = (y2 - y1) / frame_h;
    return {float(x1 / frame_w), float(y1 / frame_h), float(x2 / frame_w), float(y2 / frame_h), float(w), float(h), float(w * h)};
}

/// Intersection over union of two normalized boxes.
[[nodiscard]] inline double box_iou(const Location& a, const Location& b) {
    const double ix = std::max(0.0, std::min<double>(a[2], b[2]) - std::max<double>(a[0], b[0]));
    const double iy = std::max(0.0, std::min<double>(a[3], b[3]) - std::max<double>(a[1], b[1]));
    const double inter = ix * iy;
    const double area_a = (double(a[2]) - a[0]) * (double(a[3]) - a[1]);
    const double area_b = (double(b[2]) - b[0]) * (double(b[3]) - b[1]);
    const double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Region selection

using FrameRegions = std::vector<std::vector<RegionRecord>>;

/// Splits a flat region list into per-frame lists ordered by frame index,
/// preserving detector order inside each frame.
[[nodiscard]] inline FrameRegions group_by_frame(const std::vector<RegionRecord>& regions) {
    std::map<std::uint32_t, std::vector<RegionRecord>> by_frame;
    for (const auto& r : regions) by_frame[r.frame_index].push_back(r);
    FrameRegions out;
    out.reserve(by_frame.size());
    for (auto& [frame, list] : by_frame) out.push_back(std::move(list));
    return out;
}

/// Per-frame top-k by confidence. Output is ordered by frame, then by
/// confidence descending; equal confidences keep detector order.
[[nodiscard]] inline std::vector<RegionRecord> select_regions_sorted(const FrameRegions& frames, std::size_t k) {
    if (k == 0) throw std::invalid_argument("select_regions: k must be >= 1");
    std::size_t total = 0;
    for (const auto& f : frames) total += f.size();
    if (total == 0) throw std::invalid_argument("select_regions: no regions");

    std::vector<const std::vector<RegionRecord>*> ordered;
    for (const auto& f : frames)
        if (!f.empty()) ordered.push_back(&f);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](auto* a, auto* b) { return a->front().frame_index < b->front().frame_index; });

    std::vector<RegionRecord> out;
    for (const auto* frame : ordered) {
        std::vector<std::size_t> idx(frame->size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return (*frame)[a].confidence > (*frame)[b].confidence; });
        const std::size_t keep = std::min(k, idx.size());
        for (std::size_t i = 0; i < keep; ++i) out.push_back((*frame)[idx[i]]);
    }
    return out;
}

/// Links detections across consecutive frames into tracklets by greedy IoU
/// matching, keeps the most confident member of each tracklet, then applies
/// the per-frame top-k cap.
[[nodiscard]] inline std::vector<RegionRecord> select_regions_tracked(const FrameRegions& frames, std::size_t k, double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw std::invalid_argument("select_regions_tracked: iou_threshold must lie in (0,1)");
    if (frames.empty()) throw std::invalid_argument("select_regions_tracked: no frames");

    struct Member {
        std::size_t frame;
        std::size_t index;
    };
    struct Tracklet {
        Member last;
        Member best;
    };
    std::vector<Tracklet> tracklets;
    std::vector<std::size_t> active;  // tracklets whose last member sits in the previous frame
    auto at = [&](Member m) -> const RegionRecord& { return frames[m.frame][m.index]; };

    std::size_t total = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& cur = frames[f];
        total += cur.size();
        struct Candidate {
            double iou;
            std::size_t tracklet;
            std::size_t region;
        };
        std::vector<Candidate> cands;
        for (std::size_t t : active)
            for (std::size_t r = 0; r < cur.size(); ++r) {
                const double iou = box_iou(at(tracklets[t].last).location, cur[r].location);
                if (iou >= iou_threshold) cands.push_back({iou, t, r});
            }
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.iou > b.iou; });

        std::vector<bool> region_taken(cur.size(), false);
        std::vector<bool> tracklet_taken(tracklets.size(), false);
        std::vector<std::size_t> next_active;
        for (const auto& c : cands) {
            if (region_taken[c.region] || tracklet_taken[c.tracklet]) continue;
            region_taken[c.region] = tracklet_taken[c.tracklet] = true;
            Tracklet& tr = tracklets[c.tracklet];
            tr.last = {f, c.region};
            if (cur[c.region].confidence > at(tr.best).confidence) tr.best = {f, c.region};
            next_active.push_back(c.tracklet);
        }
        for (std::size_t r = 0; r < cur.size(); ++r) {
            if (region_taken[r]) continue;
            tracklets.push_back({{f, r}, {f, r}});
            next_active.push_back(tracklets.size() - 1);
        }
        active = std::move(next_active);
    }
    if (total == 0) throw std::invalid_argument("select_regions_tracked: no regions");

    // Survivors keep their frame and detector order before the top-k cap.
    std::vector<Member> kept;
    for (const auto& t : tracklets) kept.push_back(t.best);
    std::sort(kept.begin(), kept.end(), [](Member a, Member b) { return a.frame != b.frame ? a.frame < b.frame : a.index < b.index; });
    FrameRegions survivors(frames.size());
    for (Member m : kept) survivors[m.frame].push_back(at(m));
    return select_regions_sorted(survivors, k);
}

// ---------------------------------------------------------------------------
// Frame sampling

enum class SampleMode { random, uniform };

[[nodiscard]] inline SampleMode parse_sample_mode(std::string_view s) {
    if (s == "random") return SampleMode::random;
    if (s == "uniform") return SampleMode::uniform;
    throw std::invalid_argument("unknown sample mode '" + std::string(s) + "' (expected random|uniform)");
}

[[nodiscard]] inline const char* to_string(SampleMode m) { return m == SampleMode::random ? "random" : "uniform"; }

/// Uniform: bin centers floor((2i+1)·M/(2m)). Random: m sorted distinct
/// indices drawn without replacement, a pure function of the seed.
[[nodiscard]] inline std::vector<std::uint32_t> sample_frames(std::uint32_t total_frames, std::uint32_t m, SampleMode mode, std::uint64_t seed = 0) {
    if (m == 0 || m > total_frames)
        throw std::invalid_argument("sample_frames: need 1 <= m <= M_total, got m=" + std::to_string(m) + " M_total=" + std::to_string(total_frames));
    std::vector<std::uint32_t> out(m);
    if (mode == SampleMode::uniform) {
        for (std::uint32_t i = 0; i < m; ++i)
            out[i] = static_cast<std::uint32_t>((2ull * i + 1ull) * total_frames / (2ull * m));
        return out;
    }
    std::vector<std::uint32_t> pool(total_frames);
    std::iota(pool.begin(), pool.end(), 0u);
    std::mt19937_64 rng(seed);
    for (std::uint32_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::uint32_t> pick(i, total_frames - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    std::copy_n(pool.begin(), m, out.begin());
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Tokenization

/// Word -> id table; ids 0..2 are reserved for PAD, CLS and UNK.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::map<std::string, std::int32_t> words) : words_(std::move(words)) {
        for (const auto& [w, id] : words_)
            if (id < kFirstContentId) throw std::invalid_argument("vocabulary: id " + std::to_string(id) + " for '" + w + "' collides with reserved ids");
    }

    /// Assigns ids to the distinct words of a corpus in sorted order.
    static Vocabulary build(const std::vector<std::string>& texts);

    [[nodiscard]] std::int32_t lookup(const std::string& word) const {
        auto it = words_.find(word);
        return it == words_.end() ? kUnkId : it->second;
    }
    void add(const std::string& word, std::int32_t id) {
        if (id < kFirstContentId) throw std::invalid_argument("vocabulary: reserved id");
        words_[word] = id;
    }
    [[nodiscard]] const std::map<std::string, std::int32_t>& words() const noexcept { return words_; }
    /// Smallest embedding-table size that covers every id.
    [[nodiscard]] std::size_t table_size() const {
        std::int32_t mx = kFirstContentId - 1;
        for (const auto& [w, id] : words_) mx = std::max(mx, id);
        return static_cast<std::size_t>(mx) + 1;
    }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

private:
    std::map<std::string, std::int32_t> words_;
};

/// Lowercases and splits on whitespace and punctuation.
[[nodiscard]] inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c) || std::ispunct(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
    std::map<std::string, std::int32_t> words;
    for (const auto& t : texts)
        for (auto& w : split_words(t)) words.emplace(std::move(w), 0);
    std::int32_t next = kFirstContentId;
    for (auto& [w, id] : words) id = next++;
    return Vocabulary(std::move(words));
}

[[nodiscard]] inline CaptionSample tokenize(const std::string& text, const Vocabulary& vocab) {
    const auto words = split_words(text);
    if (words.empty()) throw std::invalid_argument("tokenize: empty caption");
    CaptionSample out{text, {kClsId}};
    for (const auto& w : words) out.token_ids.push_back(vocab.lookup(w));
    return out;
}

// ---------------------------------------------------------------------------
// Dataset files

class DatasetError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, bad_version, truncated, dim_mismatch, count_mismatch, manifest };
    DatasetError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct VideoEntry {
    std::string video_id;
    std::string caption;
    std::uint32_t num_frames_total = 1;
    std::uint32_t frame_width = 1;
    std::uint32_t frame_height = 1;
    std::string feature_file;
    std::uint32_t region_count = 0;

    friend bool operator==(const VideoEntry&, const VideoEntry&) = default;
};

struct DatasetManifest {
    std::uint32_t version = 1;
    std::uint32_t dim = 0;
    Vocabulary vocab;
    std::vector<VideoEntry> videos;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Manifest plus every detected region of every video (all frames).
struct Dataset {
    DatasetManifest manifest;
    std::vector<std::vector<RegionRecord>> regions;

    [[nodiscard]] std::size_t size() const noexcept { return manifest.videos.size(); }
    [[nodiscard]] std::size_t find(const std::string& video_id) const {
        for (std::size_t i = 0; i < manifest.videos.size(); ++i)
            if (manifest.videos[i].video_id == video_id) return i;
        throw std::out_of_range("unknown video id '" + video_id + "'");
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr std::array<char, 4> kDatasetMagic{'D', 'V', 'L', 'P'};
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_f32(std::string& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw DatasetError(DatasetError::Kind::truncated, "truncated file: " + origin_);
    }
    [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    [[nodiscard]] std::size_t pos() const noexcept { return pos_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DatasetError(DatasetError::Kind::io, "cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError(DatasetError::Kind::io, "cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DatasetError(DatasetError::Kind::io, "write failed for " + p.string());
}

}  // namespace detail

[[nodiscard]] inline std::string encode_region_file(const std::vector<RegionRecord>& regions, std::uint32_t dim) {
    std::string buf;
    buf.reserve(16 + regions.size() * (dim + 9) * 4);
    buf.append(kDatasetMagic.data(), kDatasetMagic.size());
    detail::put_u32(buf, kDatasetVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(regions.size()));
    detail::put_u32(buf, dim);
    for (const auto& r : regions) {
        if (r.feature.size() != dim)
            throw DatasetError(DatasetError::Kind::dim_mismatch, "dim mismatch: feature of length " + std::to_string(r.feature.size()) + " in a dim " + std::to_string(dim) + " dataset");
        for (float f : r.feature) detail::put_f32(buf, f);
    }
    for (const auto& r : regions)
        for (float f : r.location) detail::put_f32(buf, f);
    for (const auto& r : regions) detail::put_f32(buf, r.confidence);
    for (const auto& r : regions) detail::put_u32(buf, r.frame_index);
    return buf;
}

[[nodiscard]] inline std::vector<RegionRecord> decode_region_file(const std::string& bytes, std::uint32_t expected_dim, const std::string& origin) {
    if (bytes.size() < 4) throw DatasetError(DatasetError::Kind::truncated, "truncated file: " + origin);
    if (!std::equal(kDatasetMagic.begin(), kDatasetMagic.end(), bytes.begin())) throw DatasetError(DatasetError::Kind::bad_magic, "bad magic in " + origin);
    detail::ByteReader rd(bytes, origin);
    rd.skip(4);
    const std::uint32_t version = rd.u32();
    if (version != kDatasetVersion)
        throw DatasetError(DatasetError::Kind::bad_version, "unsupported version " + std::to_string(version) + " in " + origin);
    const std::uint32_t count = rd.u32();
    const std::uint32_t dim = rd.u32();
    if (dim != expected_dim)
        throw DatasetError(DatasetError::Kind::dim_mismatch, "dim mismatch: manifest says " + std::to_string(expected_dim) + ", " + origin + " says " + std::to_string(dim));
    const std::size_t body = std::size_t(count) * (std::size_t(dim) + 7 + 1 + 1) * 4;
    rd.need(body);
    if (rd.remaining() != body) throw DatasetError(DatasetError::Kind::truncated, "trailing bytes in " + origin);
    std::vector<RegionRecord> out(count);
    for (auto& r : out) {
        r.feature.resize(dim);
        for (auto& f : r.feature) f = rd.f32();
    }
    for (auto& r : out)
        for (auto& f : r.location) f = rd.f32();
    for (auto& r : out) r.confidence = rd.f32();
    for (auto& r : out) r.frame_index = rd.u32();
    return out;
}

[[nodiscard]] inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
    nlohmann::ordered_json vocab = nlohmann::ordered_json::object();
    vocab["[PAD]"] = kPadId;
    vocab["[CLS]"] = kClsId;
    vocab["[UNK]"] = kUnkId;
    for (const auto& [w, id] : m.vocab.words()) vocab[w] = id;
    nlohmann::ordered_json videos = nlohmann::ordered_json::array();
    for (const auto& v : m.videos)
        videos.push_back({{"video_id", v.video_id},
                          {"caption", v.caption},
                          {"num_frames_total", v.num_frames_total},
                          {"frame_width", v.frame_width},
                          {"frame_height", v.frame_height},
                          {"feature_file", v.feature_file},
                          {"region_count", v.region_count}});
    return {{"version", m.version}, {"dim", m.dim}, {"vocab", vocab}, {"videos", videos}};
}

[[nodiscard]] inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    try {
        DatasetManifest m;
        m.version = j.at("version").get<std::uint32_t>();
        if (m.version != kDatasetVersion) throw DatasetError(DatasetError::Kind::bad_version, "unsupported manifest version " + std::to_string(m.version));
        m.dim = j.at("dim").get<std::uint32_t>();
        std::map<std::string, std::int32_t> words;
        for (const auto& [w, id] : j.at("vocab").items()) {
            const auto v = id.get<std::int32_t>();
            if (v >= kFirstContentId) words[w] = v;
        }
        m.vocab = Vocabulary(std::move(words));
        for (const auto& v : j.at("videos"))
            m.videos.push_back({v.at("video_id").get<std::string>(), v.at("caption").get<std::string>(),
                                v.at("num_frames_total").get<std::uint32_t>(), v.at("frame_width").get<std::uint32_t>(),
                                v.at("frame_height").get<std::uint32_t>(), v.at("feature_file").get<std::string>(),
                                v.at("region_count").get<std::uint32_t>()});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(DatasetError::Kind::manifest, std::string("manifest: ") + e.what());
    }
}

/// Writes manifest.json into `dir` and the per-video binaries into `object_dir`
/// (defaults to `dir`). Region counts in the manifest are refreshed from the data.
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds, std::filesystem::path object_dir = {}) {
    if (object_dir.empty()) object_dir = dir;
    if (ds.regions.size() != ds.manifest.videos.size())
        throw DatasetError(DatasetError::Kind::count_mismatch, "write_dataset: region lists do not match manifest entries");
    std::filesystem::create_directories(dir);
    std::filesystem::create_directories(object_dir);
    DatasetManifest m = ds.manifest;
    for (std::size_t i = 0; i < m.videos.size(); ++i) {
        m.videos[i].region_count = static_cast<std::uint32_t>(ds.regions[i].size());
        detail::write_file(object_dir / m.videos[i].feature_file, encode_region_file(ds.regions[i], m.dim));
    }
    detail::write_file(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

[[nodiscard]] inline Dataset read_dataset(const std::filesystem::path& dir, std::filesystem::path object_dir = {}) {
    if (object_dir.empty()) object_dir = dir;
    const std::string text = detail::read_file(dir / "manifest.json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(DatasetError::Kind::manifest, std::string("manifest.json: ") + e.what());
    }
    Dataset ds;
    ds.manifest = manifest_from_json(j);
    for (const auto& v : ds.manifest.videos) {
        const auto path = object_dir / v.feature_file;
        auto regions = decode_region_file(detail::read_file(path), ds.manifest.dim, path.string());
        if (regions.size() != v.region_count)
            throw DatasetError(DatasetError::Kind::count_mismatch,
                               "region count mismatch for " + v.video_id + ": manifest " + std::to_string(v.region_count) + ", file " + std::to_string(regions.size()));
        ds.regions.push_back(std::move(regions));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Sample assembly

enum class RegionSelection { sorted, tracked };

[[nodiscard]] inline RegionSelection parse_region_selection(std::string_view s) {
    if (s == "sorted") return RegionSelection::sorted;
    if (s == "tracked") return RegionSelection::tracked;
    throw std::invalid_argument("unknown region selection '" + std::string(s) + "' (expected sorted|tracked)");
}

struct SamplingOptions {
    std::uint32_t num_frames = 1;
    SampleMode mode = SampleMode::random;
    std::size_t object_num = 30;
    RegionSelection selection = RegionSelection::sorted;
    double iou_threshold = 0.5;
};

/// Frame sampling followed by region selection for one video.
[[nodiscard]] inline VideoSample prepare_video(const Dataset& ds, std::size_t index, const SamplingOptions& opt, std::uint64_t seed) {
    const auto& entry = ds.manifest.videos.at(index);
    VideoSample v;
    v.video_id = entry.video_id;
    v.num_frames_total = entry.num_frames_total;
    v.sampled_frame_indices = sample_frames(entry.num_frames_total, std::min(opt.num_frames, entry.num_frames_total), opt.mode, seed);
    FrameRegions frames;
    for (std::uint32_t f : v.sampled_frame_indices) {
        std::vector<RegionRecord> in_frame;
        for (const auto& r : ds.regions[index])
            if (r.frame_index == f) in_frame.push_back(r);
        frames.push_back(std::move(in_frame));
    }
    v.regions = opt.selection == RegionSelection::sorted ? select_regions_sorted(frames, opt.object_num)
                                                         : select_regions_tracked(frames, opt.object_num, opt.iou_threshold);
    return v;
}

[[nodiscard]] inline CaptionSample prepare_caption(const Dataset& ds, std::size_t index) {
    return tokenize(ds.manifest.videos.at(index).caption, ds.manifest.vocab);
}

/// Right-pads a list of pairs and records which positions are real.
[[nodiscard]] inline Batch make_batch(std::vector<std::pair<VideoSample, CaptionSample>> pairs) {
    if (pairs.size() < 2) throw std::invalid_argument("contrastive batch too small: B=" + std::to_string(pairs.size()));
    std::size_t n_max = 0, t_max = 0;
    for (const auto& [v, c] : pairs) {
        if (v.regions.empty()) throw std::invalid_argument("make_batch: video " + v.video_id + " has no regions");
        if (c.token_ids.size() < 2) throw std::invalid_argument("make_batch: empty caption");
        n_max = std::max(n_max, v.regions.size());
        t_max = std::max(t_max, c.token_ids.size());
    }
    Batch b;
    for (auto& [v, c] : pairs) {
        std::vector<bool> rmask(n_max, false);
        std::fill_n(rmask.begin(), v.regions.size(), true);
        std::vector<bool> wmask(t_max, false);
        std::fill_n(wmask.begin(), c.token_ids.size(), true);
        std::vector<std::int32_t> ids = c.token_ids;
        ids.resize(t_max, kPadId);
        b.region_pad_mask.push_back(std::move(rmask));
        b.word_pad_mask.push_back(std::move(wmask));
        b.padded_token_ids.push_back(std::move(ids));
        b.videos.push_back(std::move(v));
        b.captions.push_back(std::move(c));
    }
    return b;
}

}  // namespace rwa
