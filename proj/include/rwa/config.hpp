#pragma once

// Run configuration for the command-line tools. A single JSON object; the
// dataset keys follow the released-config vocabulary (data_dir, object_dir,
// object_num, num_frames, load_checkpoint) and everything else is optional.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwa/dataset_io.hpp"
#include "rwa/training.hpp"

namespace rwa {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Regime { pretrain, finetune, evaluate };

struct RunConfig {
    std::filesystem::path data_dir;
    std::filesystem::path object_dir;
    std::filesystem::path output_dir = "out";
    std::optional<std::filesystem::path> load_checkpoint;
    SamplingOptions sampling;
    ModelConfig model;
    bool vocab_size_given = false;
    Schedule schedule;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    bool test_mode = false;
    std::vector<std::string> warnings;
};

inline const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys{
        "data_dir",   "object_dir", "object_num",   "num_frames",     "load_checkpoint", "output_dir",   "sample_mode",  "region_selection",
        "iou_threshold", "schedule", "lr",          "epochs",         "decay_epochs",    "decay_factor", "batch_size",   "seed",
        "test_mode",  "d",          "video_layers", "text_layers",    "heads",           "vocab_size",   "max_frames",   "max_words",
        "sigma",      "dropout",    "use_refinement", "use_local_losses"};
    return keys;
}

namespace detail {

template <class V>
V config_value(const nlohmann::json& j, const char* key, V fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

}  // namespace detail

/// Applies regime defaults, then every known key present in `j`.
[[nodiscard]] inline RunConfig parse_run_config(const nlohmann::json& j, Regime regime) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    for (const auto& [key, value] : j.items()) {
        const auto& known = known_config_keys();
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            std::string msg = "unknown config key '" + key + "'; known keys:";
            for (const auto& k : known) msg += " " + k;
            c.warnings.push_back(msg);
        }
    }
    if (!j.contains("data_dir")) throw ConfigError("missing required config key 'data_dir'");
    c.data_dir = detail::config_value<std::string>(j, "data_dir", "");
    c.object_dir = detail::config_value<std::string>(j, "object_dir", c.data_dir.string());
    c.output_dir = detail::config_value<std::string>(j, "output_dir", "out");
    if (j.contains("load_checkpoint") && !j.at("load_checkpoint").is_null())
        c.load_checkpoint = detail::config_value<std::string>(j, "load_checkpoint", "");

    switch (regime) {
        case Regime::pretrain:
            c.sampling.num_frames = 1;
            c.sampling.mode = SampleMode::random;
            c.schedule = Schedule::pretrain();
            break;
        case Regime::finetune:
            c.sampling.num_frames = 8;
            c.sampling.mode = SampleMode::uniform;
            c.schedule = Schedule::finetune();
            break;
        case Regime::evaluate:
            c.sampling.num_frames = 8;
            c.sampling.mode = SampleMode::uniform;
            break;
    }
    try {
        c.sampling.num_frames = detail::config_value<std::uint32_t>(j, "num_frames", c.sampling.num_frames);
        if (c.sampling.num_frames == 0) throw ConfigError("config key 'num_frames' must be >= 1");
        c.sampling.mode = parse_sample_mode(detail::config_value<std::string>(j, "sample_mode", to_string(c.sampling.mode)));
        if (regime == Regime::evaluate && c.sampling.mode != SampleMode::uniform) {
            c.warnings.emplace_back("evaluation always samples frames uniformly; ignoring 'sample_mode'");
            c.sampling.mode = SampleMode::uniform;
        }
        c.sampling.object_num = detail::config_value<std::size_t>(j, "object_num", c.sampling.object_num);
        if (c.sampling.object_num == 0) throw ConfigError("config key 'object_num' must be >= 1");
        c.sampling.selection = parse_region_selection(detail::config_value<std::string>(j, "region_selection", "sorted"));
        c.sampling.iou_threshold = detail::config_value<double>(j, "iou_threshold", c.sampling.iou_threshold);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    const std::string preset = detail::config_value<std::string>(j, "schedule", regime == Regime::finetune ? "finetune" : "pretrain");
    if (preset == "pretrain") c.schedule = Schedule::pretrain();
    else if (preset == "finetune") c.schedule = Schedule::finetune();
    else if (preset == "constant") c.schedule = Schedule::constant(1e-3, 10);
    else throw ConfigError("config key 'schedule' must be pretrain|finetune|constant");
    c.schedule.base_lr = detail::config_value<double>(j, "lr", c.schedule.base_lr);
    c.schedule.total_epochs = detail::config_value<std::size_t>(j, "epochs", c.schedule.total_epochs);
    c.schedule.decay_epochs = detail::config_value<std::vector<std::size_t>>(j, "decay_epochs", c.schedule.decay_epochs);
    c.schedule.decay_factor = detail::config_value<double>(j, "decay_factor", c.schedule.decay_factor);
    // Presets whose decay points fall past a shortened run keep only the reachable ones.
    if (!j.contains("decay_epochs"))
        std::erase_if(c.schedule.decay_epochs, [&](std::size_t e) { return e >= c.schedule.total_epochs; });
    try {
        validate_schedule(c.schedule);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    c.batch_size = detail::config_value<std::size_t>(j, "batch_size", c.batch_size);
    if (c.batch_size < 2) throw ConfigError("config key 'batch_size' must be >= 2");
    c.seed = detail::config_value<std::uint64_t>(j, "seed", c.seed);
    c.test_mode = detail::config_value<bool>(j, "test_mode", c.test_mode);

    try {
        c.model = model_config_from_json(j, c.model);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model keys: ") + e.what());
    }
    c.vocab_size_given = j.contains("vocab_size");
    c.model.object_num = c.sampling.object_num;
    c.model.max_frames = std::max<std::size_t>(c.model.max_frames, c.sampling.num_frames);
    if (auto errs = validate_config(c.model); !errs.empty()) throw ConfigError("model config: " + errs.front());
    return c;
}

[[nodiscard]] inline RunConfig load_run_config(const std::filesystem::path& path, Regime regime) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_run_config(j, regime);
}

[[nodiscard]] inline nlohmann::ordered_json run_config_snapshot(const RunConfig& c) {
    nlohmann::ordered_json j{{"data_dir", c.data_dir.string()},
                             {"object_dir", c.object_dir.string()},
                             {"object_num", c.sampling.object_num},
                             {"num_frames", c.sampling.num_frames},
                             {"load_checkpoint", c.load_checkpoint ? nlohmann::ordered_json(c.load_checkpoint->string()) : nlohmann::ordered_json()},
                             {"output_dir", c.output_dir.string()},
                             {"sample_mode", to_string(c.sampling.mode)},
                             {"region_selection", c.sampling.selection == RegionSelection::sorted ? "sorted" : "tracked"},
                             {"iou_threshold", c.sampling.iou_threshold},
                             {"lr", c.schedule.base_lr},
                             {"epochs", c.schedule.total_epochs},
                             {"decay_epochs", c.schedule.decay_epochs},
                             {"decay_factor", c.schedule.decay_factor},
                             {"batch_size", c.batch_size},
                             {"seed", c.seed},
                             {"test_mode", c.test_mode}};
    const auto model = model_config_to_json(c.model);
    for (const auto& [k, v] : model.items())
        if (k != "object_num") j[k] = v;
    return j;
}

}  // namespace rwa
