// rwa: pre-training, fine-tuning, evaluation and utilities for the
// region-word alignment model.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rwa/rwa.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw rwa::ConfigError("cannot open config " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw rwa::ConfigError("config " + path.string() + ": " + e.what());
    }
}

// --set key=value; the value is parsed as JSON when possible, else kept as a string.
void apply_overrides(json& j, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw rwa::ConfigError("--set expects key=value, got '" + s + "'");
        const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
        try {
            j[key] = json::parse(text);
        } catch (const json::exception&) {
            j[key] = text;
        }
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string utc_timestamp() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

rwa::Dataset load_split(const rwa::RunConfig& c) {
    try {
        return rwa::read_dataset(c.data_dir, c.object_dir);
    } catch (const rwa::DatasetError& e) {
        throw DataError(e.what());
    }
}

rwa::Checkpoint load_ck(const fs::path& dir, const std::optional<rwa::ModelConfig>& expected = std::nullopt) {
    try {
        return rwa::load_checkpoint(dir, expected);
    } catch (const rwa::CheckpointError& e) {
        throw DataError("checkpoint " + dir.string() + ": " + e.what());
    }
}

// Width and vocabulary follow the data unless the config names them.
// A loaded checkpoint fixes the architecture; config keys still override it.
rwa::ModelConfig resolve_model(const rwa::RunConfig& c, const json& raw, const rwa::Dataset& ds, const rwa::Checkpoint* ck) {
    rwa::ModelConfig m = c.model;
    if (ck) {
        m = rwa::model_config_from_json(raw, ck->config);
        m.object_num = c.sampling.object_num;
        m.max_frames = std::max<std::size_t>(m.max_frames, ck->config.max_frames);
    } else {
        if (!raw.contains("d")) m.d = ds.manifest.dim;
        if (!c.vocab_size_given) m.vocab_size = ds.manifest.vocab.table_size();
    }
    if (auto errs = rwa::validate_config(m); !errs.empty()) throw rwa::ConfigError("model config: " + errs.front());
    return m;
}

int run_training(const fs::path& config_path, const std::vector<std::string>& sets, rwa::Regime regime) {
    json raw = read_json_file(config_path);
    apply_overrides(raw, sets);
    const rwa::RunConfig c = rwa::parse_run_config(raw, regime);
    for (const auto& w : c.warnings) std::cerr << "warning: " << w << "\n";

    const rwa::Dataset ds = load_split(c);
    std::optional<rwa::Checkpoint> ck;
    if (c.load_checkpoint) ck = load_ck(*c.load_checkpoint);
    rwa::FitOptions opt;
    opt.model = resolve_model(c, raw, ds, ck ? &*ck : nullptr);
    if (ck) ck = load_ck(*c.load_checkpoint, opt.model);
    opt.sampling = c.sampling;
    opt.schedule = c.schedule;
    opt.batch_size = c.batch_size;
    opt.seed = c.seed;

    fs::create_directories(c.output_dir / "checkpoints");
    rwa::RunConfig resolved = c;
    resolved.model = opt.model;
    write_text(c.output_dir / "config.snapshot.json", rwa::run_config_snapshot(resolved).dump(2) + "\n");

    std::ofstream csv(c.output_dir / "losses.csv", std::ios::binary);
    if (!csv) throw DataError("cannot write " + (c.output_dir / "losses.csv").string());
    csv << "epoch,lr,global_v2l,global_l2v,local_v2l,local_l2v,total\n";
    auto on_epoch = [&](const rwa::EpochLog& l) {
        char line[256];
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", l.epoch, l.lr, l.losses.global_v2l, l.losses.global_l2v, l.losses.local_v2l,
                      l.losses.local_l2v, l.losses.total);
        csv << line << std::flush;
        std::cerr << "epoch " << l.epoch << " lr " << l.lr << " loss " << l.losses.total << "\n";
    };

    rwa::FitResult res;
    try {
        res = rwa::fit(ds, opt, ck ? std::optional(std::move(ck->params)) : std::nullopt, on_epoch);
    } catch (const std::invalid_argument& e) {
        throw rwa::ConfigError(e.what());
    }
    const fs::path final_dir = c.output_dir / "checkpoints" / "final";
    rwa::save_checkpoint(final_dir, opt.model, res.params, &res.optim);

    const auto& last = res.log.back();
    ordered_json metrics{{"regime", regime == rwa::Regime::pretrain ? "pretrain" : "finetune"},
                         {"epochs", res.log.size()},
                         {"optimizer_steps", res.optim.step},
                         {"final_losses",
                          {{"global_v2l", last.losses.global_v2l},
                           {"global_l2v", last.losses.global_l2v},
                           {"local_v2l", last.losses.local_v2l},
                           {"local_l2v", last.losses.local_l2v},
                           {"total", last.losses.total}}},
                         {"checkpoint", final_dir.string()},
                         {"checkpoint_id", rwa::parameter_fingerprint(res.params)}};
    if (!c.test_mode) metrics["finished_at"] = utc_timestamp();
    write_text(c.output_dir / "metrics.json", metrics.dump(2) + "\n");
    std::cout << metrics.dump(2) << "\n";
    return 0;
}

int run_evaluate(const fs::path& config_path, const std::vector<std::string>& sets, const std::string& checkpoint, const std::string& direction) {
    json raw = read_json_file(config_path);
    apply_overrides(raw, sets);
    const rwa::RunConfig c = rwa::parse_run_config(raw, rwa::Regime::evaluate);
    for (const auto& w : c.warnings) std::cerr << "warning: " << w << "\n";

    std::vector<rwa::Direction> dirs;
    if (direction == "both") dirs = {rwa::Direction::t2v, rwa::Direction::v2t};
    else {
        try {
            dirs = {rwa::parse_direction(direction)};
        } catch (const std::invalid_argument& e) {
            throw rwa::ConfigError(e.what());
        }
    }
    fs::path ck_dir;
    if (!checkpoint.empty()) ck_dir = checkpoint;
    else if (c.load_checkpoint) ck_dir = *c.load_checkpoint;
    else throw rwa::ConfigError("evaluate needs --checkpoint or config key 'load_checkpoint'");

    const rwa::Dataset ds = load_split(c);
    auto ck = load_ck(ck_dir);
    rwa::ModelConfig model = resolve_model(c, raw, ds, &ck);
    model.max_frames = std::max<std::size_t>(model.max_frames, ck.config.max_frames);
    if (model.vocab_size < ds.manifest.vocab.table_size())
        throw rwa::ConfigError("checkpoint vocab_size " + std::to_string(model.vocab_size) + " does not cover the dataset vocabulary");
    if (model.d != ds.manifest.dim) throw rwa::ConfigError("checkpoint width " + std::to_string(model.d) + " does not match feature dim " + std::to_string(ds.manifest.dim));
    if (c.sampling.num_frames > model.max_frames)
        throw rwa::ConfigError("config key 'num_frames' exceeds the checkpoint's max_frames (" + std::to_string(model.max_frames) + ")");
    ck = load_ck(ck_dir, model);

    const std::string id = rwa::parameter_fingerprint(ck.params);
    ordered_json results = ordered_json::array();
    for (auto dir : dirs) results.push_back(rwa::metrics_to_json(rwa::evaluate_retrieval(ck.params, model, ds, dir, c.sampling, id)));
    ordered_json out = dirs.size() == 1 ? results[0] : ordered_json{{"results", results}};
    if (!c.test_mode) out["evaluated_at"] = utc_timestamp();

    fs::create_directories(c.output_dir);
    rwa::RunConfig resolved = c;
    resolved.model = model;
    write_text(c.output_dir / "config.snapshot.json", rwa::run_config_snapshot(resolved).dump(2) + "\n");
    write_text(c.output_dir / "metrics.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_export(const fs::path& checkpoint, const fs::path& data_dir, const std::string& object_dir, const std::string& video_id, const std::string& caption,
               std::uint32_t frames, const fs::path& out) {
    rwa::Dataset ds;
    try {
        ds = rwa::read_dataset(data_dir, object_dir.empty() ? fs::path{} : fs::path(object_dir));
    } catch (const rwa::DatasetError& e) {
        throw DataError(e.what());
    }
    std::size_t index = ds.size();
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.manifest.videos[i].video_id == video_id) index = i;
    if (index == ds.size()) throw DataError("unknown video id '" + video_id + "'");

    auto ck = load_ck(checkpoint);
    const rwa::ModelConfig& model = ck.config;
    if (!caption.empty()) {
        ds.manifest.videos[index].caption = caption;
        for (const auto& w : rwa::split_words(caption))
            if (ds.manifest.vocab.lookup(w) == rwa::kUnkId) std::cerr << "warning: word '" << w << "' is out of vocabulary\n";
    }
    rwa::SamplingOptions sampling = rwa::evaluation_sampling(std::min<std::uint32_t>(frames, static_cast<std::uint32_t>(model.max_frames)), model.object_num);
    rwa::VideoSample video;
    rwa::CaptionSample cap;
    try {
        video = rwa::prepare_video(ds, index, sampling, index);
        cap = rwa::prepare_caption(ds, index);
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
    const auto ev = rwa::encode_video_sample(ck.params, model, video);
    const auto et = rwa::encode_text_sample(ck.params, model, cap);
    rwa::export_attention(out, video, cap, ev, et, rwa::split_words(cap.text), model.use_refinement);
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Region-word alignment video-language model"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, direction = "t2v";
    std::vector<std::string> sets;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration (JSON)")->required();
        sub->add_option("--set", sets, "override a config key: key=value (repeatable)");
    };
    auto* pretrain = app.add_subcommand("pretrain", "train from scratch (one random frame per video by default)");
    add_config(pretrain);
    auto* finetune = app.add_subcommand("finetune", "train from load_checkpoint (eight uniform frames by default)");
    add_config(finetune);
    auto* evaluate = app.add_subcommand("evaluate", "retrieval metrics on a split");
    add_config(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint directory (else config load_checkpoint)");
    evaluate->add_option("--direction", direction, "t2v, v2t or both")->check(CLI::IsMember({"t2v", "v2t", "both"}));

    rwa::PlantedParams planted;
    std::string synth_out;
    auto* synth = app.add_subcommand("make-synthetic", "write a planted-alignment dataset (train/ and test/ with truth.json)");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--train-videos", planted.train_videos);
    synth->add_option("--test-videos", planted.test_videos);
    synth->add_option("--regions", planted.regions, "regions per video");
    synth->add_option("--words", planted.words, "content words per caption");
    synth->add_option("--dim", planted.dim, "feature width");
    synth->add_option("--noise", planted.noise_sigma, "region feature noise sigma");
    synth->add_option("--concepts", planted.concepts);
    synth->add_option("--distractors", planted.distractors);
    synth->add_option("--frames", planted.frames);
    synth->add_option("--seed", planted.seed);

    std::string export_ck, export_data, export_objects, video_id, caption, export_out = "attention.json";
    std::uint32_t export_frames = 8;
    auto* exporter = app.add_subcommand("export-attention", "dump region-word attention for one video/caption pair");
    exporter->add_option("--checkpoint", export_ck)->required();
    exporter->add_option("--data-dir", export_data)->required();
    exporter->add_option("--object-dir", export_objects);
    exporter->add_option("--video-id", video_id)->required();
    exporter->add_option("--caption", caption, "caption text (default: the video's own caption)");
    exporter->add_option("--num-frames", export_frames);
    exporter->add_option("--out", export_out);

    std::size_t frames = 8, regions = 30, patches = 196, d = 768, layers = 12;
    auto* cost = app.add_subcommand("estimate-cost", "token budget and attention FLOPs, regions versus patches");
    cost->add_option("--frames", frames);
    cost->add_option("--regions", regions, "regions per frame");
    cost->add_option("--patches", patches, "patches per frame");
    cost->add_option("--d", d);
    cost->add_option("--layers", layers);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*pretrain) return run_training(config_path, sets, rwa::Regime::pretrain);
        if (*finetune) return run_training(config_path, sets, rwa::Regime::finetune);
        if (*evaluate) return run_evaluate(config_path, sets, checkpoint, direction);
        if (*synth) {
            rwa::write_planted(synth_out, rwa::generate_planted_dataset(planted));
            std::cout << "wrote " << synth_out << "/train and " << synth_out << "/test\n";
            return 0;
        }
        if (*exporter) return run_export(export_ck, export_data, export_objects, video_id, caption, export_frames, export_out);
        if (*cost) {
            std::cout << rwa::cost_to_json(rwa::estimate_cost(frames, regions, patches, d, layers)).dump(2) << "\n";
            return 0;
        }
    } catch (const rwa::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::domain_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
