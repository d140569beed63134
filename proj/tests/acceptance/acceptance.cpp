// Acceptance suite. Prints one PASS/FAIL line per criterion; exits nonzero if
// any fails. `acceptance <name>` runs a single criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rwa/rwa.hpp"
#include "test_util.hpp"

using namespace rwa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// Planted recipe

PlantedParams planted_params(std::uint64_t seed) {
    PlantedParams p;  // 64 train / 32 test, N=8, L=10, d=32, noise 0.1
    p.seed = seed;
    return p;
}

FitOptions planted_recipe(const PlantedData& data, std::uint64_t seed) {
    FitOptions o;
    o.model.d = 32;
    o.model.video_layers = 1;
    o.model.text_layers = 1;
    o.model.heads = 1;
    o.model.sigma = 0.15;
    o.model.vocab_size = data.train.manifest.vocab.table_size();
    o.sampling = evaluation_sampling(8, 30);
    o.schedule = Schedule::constant(3e-4, 200);
    o.batch_size = 16;
    o.seed = seed;
    return o;
}

struct PlantedRun {
    double t2v_r1 = 0, v2t_r1 = 0, accuracy = 0, seconds = 0;
};

PlantedRun run_planted(std::uint64_t seed, bool use_local, bool use_refinement) {
    const auto data = generate_planted_dataset(planted_params(seed));
    auto opt = planted_recipe(data, seed);
    opt.model.use_local_losses = use_local;
    opt.model.use_refinement = use_refinement;
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = fit(data.train, opt);
    PlantedRun r;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto eval = evaluation_sampling(8, 30);
    r.t2v_r1 = evaluate_retrieval(res.params, opt.model, data.test, Direction::t2v, eval).r1;
    r.v2t_r1 = evaluate_retrieval(res.params, opt.model, data.test, Direction::v2t, eval).r1;
    r.accuracy = planted_alignment_accuracy(res.params, opt.model, data.test, data.test_truth, eval);
    return r;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome gradient_check() {
    std::mt19937_64 rng(2024);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto inst = test::random_instance(rng, 4, 5, 6, 8, true);
        const std::size_t b = inst.videos.size();
        auto loss = [&](const std::vector<Tensor<double>>& videos, const std::vector<Tensor<double>>& texts, std::vector<Tensor<double>>* grads) {
            Tape<double> tape;
            std::vector<EncodedRows> vr, tr;
            std::vector<Var> leaves;
            for (const auto& v : videos) {
                leaves.push_back(tape.parameter(v));
                vr.push_back({leaves.back(), v.rows - 1});
            }
            for (const auto& t : texts) {
                leaves.push_back(tape.parameter(t));
                tr.push_back({leaves.back(), t.rows - 1});
            }
            Var total = loss_graph(tape, similarity_graph(tape, vr, tr, {true, true}), 0.1).total;
            if (grads) {
                tape.backward(total);
                for (Var l : leaves) grads->push_back(tape.grad(l));
            }
            return tape.scalar(total);
        };
        std::vector<Tensor<double>> analytic;
        loss(inst.videos, inst.texts, &analytic);
        for (std::size_t k = 0; k < 2 * b; ++k) {
            auto numeric = test::numeric_gradient(k < b ? inst.videos[k] : inst.texts[k - b], [&](const Tensor<double>& x) {
                auto v = inst.videos;
                auto t = inst.texts;
                (k < b ? v[k] : t[k - b]) = x;
                return loss(v, t, nullptr);
            }, 1e-5);
            worst = std::max(worst, test::max_relative_error(analytic[k], numeric, 1e-6));
        }
    }
    return {worst < 1e-5, fmt("max relative error %.3g over 20 instances (B=4 N=5 L=6 d=8)", worst)};
}

Outcome oracle_equivalence() {
    std::mt19937_64 rng(2025);
    std::uniform_int_distribution<std::size_t> pick_b(1, 6), pick_d(1, 16);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const bool refine = trial % 2 == 0;
        const auto inst = test::random_instance(rng, pick_b(rng), 7, 9, pick_d(rng));
        const auto fast = compute_bundle(test::as_encoded_videos(inst.videos), test::as_encoded_texts(inst.texts), refine);
        const auto slow = brute_force_bundle(inst.videos, inst.texts, refine);
        worst = std::max({worst, test::max_abs_diff(fast.global, slow.global), test::max_abs_diff(fast.local_v2l, slow.local_v2l),
                          test::max_abs_diff(fast.local_l2v, slow.local_l2v)});
    }
    return {worst < 1e-6, fmt("max |fast - brute force| %.3g over 50 instances", worst)};
}

Outcome refinement_properties() {
    std::mt19937_64 rng(2026);
    std::uniform_int_distribution<std::size_t> pick_l(1, 16);
    std::normal_distribution<double> g(0.0, 2.0);
    std::size_t violations = 0;
    for (int row = 0; row < 1000; ++row) {
        const std::size_t l = pick_l(rng);
        std::vector<double> sims(l);
        for (auto& s : sims) s = g(rng);
        const auto a = attention_weights<double>(sims);
        const auto r = refine_weights<double>(a);
        if (l == 1) {
            violations += r != a ? 1 : 0;
            continue;
        }
        for (std::size_t i = 0; i < l; ++i) {
            const bool ok = r[i] == 0.0 || (r[i] > 1.0 / double(l) && r[i] == a[i]);
            violations += ok ? 0 : 1;
        }
    }
    for (std::size_t l = 2; l <= 16; ++l) {
        const auto a = attention_weights<double>(std::vector<double>(l, 0.3));
        for (double x : refine_weights<double>(a)) violations += x == 0.0 ? 0 : 1;
    }
    return {violations == 0, fmt("%zu violations over 1000 random rows, uniform rows L=2..16, and single-entry rows", violations)};
}

Outcome invariance() {
    std::mt19937_64 rng(2027);
    std::uniform_real_distribution<double> scale(0.05, 20.0);
    double worst_perm = 0, worst_scale = 0;
    auto diff = [](const SimilarityBundle<double>& a, const SimilarityBundle<double>& b) {
        return std::max({test::max_abs_diff(a.global, b.global), test::max_abs_diff(a.local_v2l, b.local_v2l), test::max_abs_diff(a.local_l2v, b.local_l2v)});
    };
    auto permute_content = [&rng](Tensor<double>& m) {
        std::vector<std::size_t> order(m.rows - 1);
        std::iota(order.begin(), order.end(), std::size_t{1});
        std::shuffle(order.begin(), order.end(), rng);
        Tensor<double> out = m;
        for (std::size_t i = 0; i < order.size(); ++i) std::copy(m.row(order[i]).begin(), m.row(order[i]).end(), out.row(i + 1).begin());
        m = std::move(out);
    };
    for (int trial = 0; trial < 100; ++trial) {
        const bool refine = trial % 2 == 0;
        auto inst = test::random_instance(rng, 4, 7, 9, 8);
        const auto base = brute_force_bundle(inst.videos, inst.texts, refine);
        auto moved = inst;
        for (auto& v : moved.videos) permute_content(v);
        for (auto& t : moved.texts) permute_content(t);
        worst_perm = std::max(worst_perm, diff(base, compute_bundle(test::as_encoded_videos(moved.videos), test::as_encoded_texts(moved.texts), refine)));
    }
    for (int trial = 0; trial < 100; ++trial) {
        const bool refine = trial % 2 == 0;
        auto inst = test::random_instance(rng, 4, 7, 9, 8);
        const auto base = brute_force_bundle(inst.videos, inst.texts, refine);
        auto moved = inst;
        std::uniform_int_distribution<std::size_t> pick_item(0, 3), pick_side(0, 1);
        auto& m = pick_side(rng) == 0 ? moved.videos[pick_item(rng)] : moved.texts[pick_item(rng)];
        std::uniform_int_distribution<std::size_t> pick_row(0, m.rows - 1);
        const double s = scale(rng);
        for (auto& x : m.row(pick_row(rng))) x *= s;
        worst_scale = std::max(worst_scale, diff(base, compute_bundle(test::as_encoded_videos(moved.videos), test::as_encoded_texts(moved.texts), refine)));
    }
    return {worst_perm <= 1e-6 && worst_scale <= 1e-6, fmt("max change %.3g under permutation, %.3g under rescaling (100 trials each)", worst_perm, worst_scale)};
}

Outcome init_loss() {
    const double target = std::log(8.0);
    double sums[4] = {0, 0, 0, 0};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<Tensor<double>> videos, texts;
        for (int i = 0; i < 8; ++i) {
            videos.push_back(random_unit_rows<double>(9, 32, rng));
            texts.push_back(random_unit_rows<double>(11, 32, rng));
        }
        const auto l = total_loss(brute_force_bundle(videos, texts, true), 1.0);
        sums[0] += l.global_v2l / 20;
        sums[1] += l.global_l2v / 20;
        sums[2] += l.local_v2l / 20;
        sums[3] += l.local_l2v / 20;
    }
    double worst = 0;
    for (double s : sums) worst = std::max(worst, std::abs(s - target));
    return {worst <= 0.15, fmt("terms %.4f %.4f %.4f %.4f vs ln 8 = %.4f (max deviation %.4f)", sums[0], sums[1], sums[2], sums[3], target, worst)};
}

Outcome planted_recovery() {
    const auto r = run_planted(0, true, true);
    const bool pass = r.t2v_r1 >= 90.0 && r.accuracy >= 80.0 && r.seconds < 300.0;
    return {pass, fmt("t2v R@1 %.2f (v2t %.2f), planted alignment accuracy %.2f%%, 200 epochs in %.1f s", r.t2v_r1, r.v2t_r1, r.accuracy, r.seconds)};
}

Outcome ablation() {
    double full = 0, base = 0, refine_acc = 0, plain_acc = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto f = run_planted(seed, true, true);
        full += f.t2v_r1 / 5;
        refine_acc += f.accuracy / 5;
        base += run_planted(seed, false, true).t2v_r1 / 5;
        plain_acc += run_planted(seed, true, false).accuracy / 5;
    }
    const bool pass = full > base && refine_acc >= plain_acc;
    return {pass, fmt("mean t2v R@1 full %.2f vs global-only %.2f; mean accuracy refinement %.2f vs none %.2f (5 seeds)", full, base, refine_acc, plain_acc)};
}

Outcome schedule_exactness() {
    const auto pre = Schedule::pretrain();
    const auto fine = Schedule::finetune();
    const bool pre_ok = lr_at_epoch(pre, 0) == 1e-5 && lr_at_epoch(pre, 29) == 1e-5 && lr_at_epoch(pre, 30) == 1e-6 && lr_at_epoch(pre, 39) == 1e-6 &&
                        lr_at_epoch(pre, 40) == 1e-7 && lr_at_epoch(pre, 49) == 1e-7;
    const double fine_expected[10] = {1e-5, 1e-5, 1e-6, 1e-6, 1e-7, 1e-7, 1e-7, 1e-7, 1e-8, 1e-8};
    bool fine_ok = true;
    for (std::size_t e = 0; e < 10; ++e) fine_ok = fine_ok && lr_at_epoch(fine, e) == fine_expected[e];
    return {pre_ok && fine_ok, fmt("pre-train 1e-5/1e-6/1e-7 at 0/30/40: %s; fine-tune decays at 2/4/8: %s", pre_ok ? "exact" : "mismatch", fine_ok ? "exact" : "mismatch")};
}

Outcome token_budget() {
    const auto r = estimate_cost(8, 30);
    const bool pass = r.region.tokens == 241 && r.patch.tokens == 1569 && std::abs(r.quadratic_ratio() - 42.4) <= 0.1;
    return {pass, fmt("%zu region vs %zu patch tokens, quadratic ratio %.3f", r.region.tokens, r.patch.tokens, r.quadratic_ratio())};
}

Outcome serialization() {
    const fs::path root = fs::temp_directory_path() / "rwa_acceptance_serialization";
    fs::remove_all(root);
    std::vector<std::string> problems;

    const auto data = generate_planted_dataset(planted_params(0));
    write_planted(root / "a", data);
    write_planted(root / "b", data);
    const auto back = read_dataset(root / "a" / "test");
    if (!(back == data.test) || !(read_dataset(root / "a" / "train") == data.train)) problems.emplace_back("dataset values differ after round trip");
    write_dataset(root / "c", back);
    for (const auto& entry : fs::recursive_directory_iterator(root / "a" / "test")) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), root / "a" / "test");
        if (detail::read_file(entry.path()) != detail::read_file(root / "b" / "test" / rel)) problems.push_back("dataset bytes differ: " + rel.string());
        if (rel != "truth.json" && detail::read_file(entry.path()) != detail::read_file(root / "c" / rel)) problems.push_back("rewrite bytes differ: " + rel.string());
    }

    auto opt = planted_recipe(data, 0);
    opt.schedule = Schedule::constant(3e-4, 20);
    const auto res = fit(data.train, opt);
    const auto eval = evaluation_sampling(8, 30);
    const auto before_t2v = evaluate_retrieval(res.params, opt.model, data.test, Direction::t2v, eval, parameter_fingerprint(res.params));
    const auto before_v2t = evaluate_retrieval(res.params, opt.model, data.test, Direction::v2t, eval, parameter_fingerprint(res.params));
    save_checkpoint(root / "ck1", opt.model, res.params, &res.optim);
    const auto ck = load_checkpoint(root / "ck1", opt.model);
    save_checkpoint(root / "ck2", ck.config, ck.params, &*ck.optim);
    if (!(ck.params == res.params) || !(ck.optim && *ck.optim == res.optim) || !(ck.config == opt.model)) problems.emplace_back("checkpoint values differ after round trip");
    for (const char* f : {"config.json", "params.json", "params.bin", "optim.json", "optim.bin"})
        if (detail::read_file(root / "ck1" / f) != detail::read_file(root / "ck2" / f)) problems.push_back(std::string("checkpoint bytes differ: ") + f);
    const auto after_t2v = evaluate_retrieval(ck.params, ck.config, data.test, Direction::t2v, eval, parameter_fingerprint(ck.params));
    const auto after_v2t = evaluate_retrieval(ck.params, ck.config, data.test, Direction::v2t, eval, parameter_fingerprint(ck.params));
    if (!(after_t2v == before_t2v) || !(after_v2t == before_v2t)) problems.emplace_back("metrics differ after save/load");
    fs::remove_all(root);

    std::string detail = problems.empty() ? fmt("dataset and checkpoint round trips identical; t2v R@1 %.2f / MedR %.1f before and after reload", after_t2v.r1,
                                                 after_t2v.median_rank)
                                          : problems.front();
    return {problems.empty(), detail};
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {"gradient_check", gradient_check},       {"oracle_equivalence", oracle_equivalence}, {"refinement_properties", refinement_properties},
        {"invariance", invariance},               {"init_loss", init_loss},                   {"planted_recovery", planted_recovery},
        {"ablation_direction", ablation},         {"schedule_exactness", schedule_exactness}, {"token_budget", token_budget},
        {"serialization", serialization},
    };
    const std::string only = argc > 1 ? argv[1] : "";
    bool all_pass = true, matched = false;
    for (const auto& c : criteria) {
        if (!only.empty() && only != c.name) continue;
        matched = true;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << fmt(" [%.1f s]", secs) << std::endl;
        all_pass = all_pass && o.pass;
    }
    if (!matched) {
        std::cerr << "unknown criterion '" << only << "'\n";
        return 2;
    }
    return all_pass ? 0 : 1;
}
