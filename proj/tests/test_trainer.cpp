#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <map>

#include "misr/misr.hpp"

using namespace misr;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(BiasMode mode = BiasMode::full_sequence) {
    ModelConfig cfg;
    cfg.c_in = 1;
    cfg.c_embed = 8;
    cfg.c = 8;
    cfg.cmt_heads = 2;
    cfg.misa_heads = 2;
    cfg.n_misab = 1;
    cfg.patch_n = 1;
    cfg.k = 3;
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.mlp_ratio = 2;
    cfg.bias_mode = mode;
    return cfg;
}

std::vector<Scene<float>> tiny_scenes(int count, std::uint64_t seed, int frames = 3) {
    std::vector<Scene<float>> scenes;
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        SynthParams p;
        p.frames = frames;
        p.seed = seed * 100 + i;
        p.noise_sigma = 0.02;
        p.coverage = 0.05;
        char name[16];
        std::snprintf(name, sizeof(name), "imgset%04d", i);
        scenes.push_back(
            synthesize_scene(make_texture<float>(24, 24, rng.derive("hr", i)), p, name));
    }
    return scenes;
}

std::map<std::string, std::vector<float>> snapshot(const SrModel<float>& model) {
    std::map<std::string, std::vector<float>> out;
    for (const auto& [name, p] : model.store.params()) out[name] = p.values();
    return out;
}

fs::path temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("misr_train_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("shuffle_frames K=1 is always the identity") {
    FrameStack<float> stack;
    stack.frames = Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
    stack.clearance = {0.5f};
    stack.pad_flags = {0};
    Rng rng(1);
    for (int i = 0; i < 5; ++i) {
        auto out = shuffle_frames(stack, rng);
        for (int j = 0; j < 4; ++j) CHECK(out.frames[j] == stack.frames[j]);
    }
}

TEST_CASE("shuffle_frames replays identically under a fixed seed") {
    FrameStack<float> stack;
    stack.frames = Tensor<float>::from_fn(Shape{4, 1, 2, 2}, [](std::size_t i) { return (float)i; });
    stack.clearance = {1, 2, 3, 4};
    stack.pad_flags = {0, 0, 1, 1};
    Rng a(42), b(42);
    auto outa = shuffle_frames(stack, a);
    auto outb = shuffle_frames(stack, b);
    for (std::size_t i = 0; i < outa.frames.size(); ++i) CHECK(outa.frames[i] == outb.frames[i]);
    CHECK(outa.clearance == outb.clearance);
    CHECK(outa.pad_flags == outb.pad_flags);
}

TEST_CASE("shuffle_frames draws permutations uniformly (chi-square style)") {
    FrameStack<float> stack;
    stack.frames = Tensor<float>(Shape{3, 1, 1, 1}, std::vector<float>{0, 1, 2});
    stack.clearance = {0, 1, 2};
    stack.pad_flags = {0, 0, 0};
    std::map<std::vector<int>, int> counts;
    Rng rng(7);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto out = shuffle_frames(stack, rng);
        counts[{(int)out.frames[0], (int)out.frames[1], (int)out.frames[2]}]++;
    }
    REQUIRE(counts.size() == 6);
    for (const auto& [perm, n] : counts) {
        const double freq = static_cast<double>(n) / draws;
        CHECK(std::abs(freq - 1.0 / 6.0) < 0.02);
    }
}

TEST_CASE("loss_l2 basics") {
    Tensor<float> a(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
    CHECK(loss_l2(a, a)[0] == 0.0f);
    Tensor<float> b(Shape{2, 2}, std::vector<float>{1.5f, 2.5f, 3.5f, 4.5f});
    CHECK(loss_l2(b, a)[0] == Catch::Approx(0.25f));
}

TEST_CASE("masked loss_l2 equals the loss on the clean half") {
    Tensor<float> hr(Shape{1, 2, 4}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
    Tensor<float> sr(Shape{1, 2, 4}, std::vector<float>{1.1f, 2.1f, 3.1f, 4.1f, 50, 60, 70, 80});
    std::vector<std::uint8_t> sm{1, 1, 1, 1, 0, 0, 0, 0};
    const float expect = (0.1f * 0.1f * 4) / 4;
    CHECK(loss_l2(sr, hr, &sm)[0] == Catch::Approx(expect).margin(1e-6));
    // empty mask falls back to the unmasked mean (with a logged warning)
    std::vector<std::uint8_t> none(8, 0);
    CHECK(loss_l2(sr, hr, &none)[0] == loss_l2(sr, hr)[0]);
}

TEST_CASE("adam step with zero gradients leaves parameters unchanged") {
    ParamStore<float> store;
    Rng init(1);
    Tensor<float> p = store.create("p", Shape{4}, Init::normal02, init);
    const std::vector<float> before = p.values();
    store.zero_grads();
    Adam<float> opt(1e-3);
    opt.step(store);
    CHECK(p.values() == before);
}

TEST_CASE("train_epoch is deterministic and honors shuffle_t sample counts") {
    auto scenes = tiny_scenes(3, 5);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 2;
    cfg.k = 3;
    cfg.shuffle_t = 3;
    cfg.lr = 1e-3;
    cfg.seed = 11;
    cfg.crop = 0;

    auto model_a = SrModel<float>::init(tiny_model(), 7);
    Adam<float> opt_a(cfg.lr);
    EpochStats a = train_epoch(model_a, opt_a, scenes, cfg, 0);
    CHECK(a.samples == 9);  // 3 scenes x 3 shuffled copies

    auto model_b = SrModel<float>::init(tiny_model(), 7);
    Adam<float> opt_b(cfg.lr);
    EpochStats b = train_epoch(model_b, opt_b, scenes, cfg, 0);
    CHECK(a.mean_loss == b.mean_loss);
    CHECK(a.grad_norm == b.grad_norm);
    CHECK(snapshot(model_a) == snapshot(model_b));

    cfg.shuffle_t = 0;
    auto model_c = SrModel<float>::init(tiny_model(), 7);
    Adam<float> opt_c(cfg.lr);
    CHECK(train_epoch(model_c, opt_c, scenes, cfg, 0).samples == 3);
}

TEST_CASE("two optimizer passes on one tiny scene strictly decrease the loss") {
    auto scenes = tiny_scenes(1, 9);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 1;
    cfg.k = 3;
    cfg.shuffle_t = 0;
    cfg.lr = 2e-3;
    cfg.seed = 3;
    auto model = SrModel<float>::init(tiny_model(), 13);
    Adam<float> opt(cfg.lr);
    EpochStats first = train_epoch(model, opt, scenes, cfg, 0);
    EpochStats second = train_epoch(model, opt, scenes, cfg, 0);  // same data, same order
    CHECK(second.mean_loss < first.mean_loss);
}

TEST_CASE("fit with zero epochs returns the initial weights unchanged") {
    auto scenes = tiny_scenes(2, 15);
    auto model = SrModel<float>::init(tiny_model(), 21);
    const auto before = snapshot(model);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.k = 3;
    Adam<float> opt(cfg.lr);
    FitResult r = fit(model, opt, scenes, scenes, cfg, std::nullopt, 0, true);
    CHECK(r.history.empty());
    CHECK(snapshot(model) == before);
}

TEST_CASE("fit is deterministic: same seed gives identical history") {
    auto scenes = tiny_scenes(3, 23);
    std::vector<Scene<float>> val = {scenes.back()};
    scenes.pop_back();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 2;
    cfg.k = 3;
    cfg.shuffle_t = 2;
    cfg.lr = 1e-3;
    cfg.seed = 31;

    auto run = [&] {
        auto model = SrModel<float>::init(tiny_model(), 33);
        Adam<float> opt(cfg.lr);
        return fit(model, opt, scenes, val, cfg, std::nullopt, 0, true);
    };
    FitResult a = run();
    FitResult b = run();
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_cpsnr == b.history[i].val_cpsnr);
        CHECK(a.history[i].val_cssim == b.history[i].val_cssim);
    }
}

TEST_CASE("checkpoint save -> load -> train reproduces the uninterrupted run bit-exactly") {
    auto scenes = tiny_scenes(3, 27);
    std::vector<Scene<float>> val = {scenes.back()};
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch = 2;
    cfg.k = 3;
    cfg.shuffle_t = 1;
    cfg.lr = 1e-3;
    cfg.seed = 37;
    auto dir = temp_dir("resume");

    // uninterrupted reference
    auto model_full = SrModel<float>::init(tiny_model(), 41);
    Adam<float> opt_full(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    fit(model_full, opt_full, scenes, val, cfg, std::nullopt, 0, true);

    // two epochs, checkpoint, restore, two more
    auto model_half = SrModel<float>::init(tiny_model(), 41);
    Adam<float> opt_half(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    TrainConfig cfg_half = cfg;
    cfg_half.epochs = 2;
    fit(model_half, opt_half, scenes, val, cfg_half, dir, 0, true);

    CheckpointData data = read_checkpoint(dir / "last.ckpt");
    CHECK(data.meta.epoch == 2);
    Adam<float> opt_resumed;
    auto model_resumed = restore_model<float>(data, &opt_resumed);
    fit(model_resumed, opt_resumed, scenes, val, cfg, std::nullopt, data.meta.epoch, true);

    const auto full = snapshot(model_full);
    const auto resumed = snapshot(model_resumed);
    REQUIRE(full.size() == resumed.size());
    for (const auto& [name, values] : full) {
        INFO(name);
        const auto& other = resumed.at(name);
        REQUIRE(values.size() == other.size());
        CHECK(std::memcmp(values.data(), other.data(), values.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("restored checkpoints reproduce model outputs exactly") {
    auto scenes = tiny_scenes(1, 51);
    auto model = SrModel<float>::init(tiny_model(), 55);
    auto dir = temp_dir("restore");
    CheckpointMeta meta;
    meta.model = model.cfg;
    meta.seed = 55;
    save_checkpoint(dir / "m.ckpt", model, static_cast<Adam<float>*>(nullptr), meta);
    auto model2 = restore_model<float>(read_checkpoint(dir / "m.ckpt"));
    Tensor<float> a = infer_scene(model, scenes[0], 3);
    Tensor<float> b = infer_scene(model2, scenes[0], 3);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("frame-agnostic validation cPSNR is order independent") {
    auto scenes = tiny_scenes(2, 61, 4);
    auto model = SrModel<float>::init(tiny_model(BiasMode::frame_agnostic), 63);
    MetricReport base = evaluate_model(model, scenes, 3);

    // reorder every scene's frames and re-evaluate
    std::vector<Scene<float>> reordered = scenes;
    Rng rng(5);
    for (auto& scene : reordered) {
        const auto perm = rng.permutation(scene.frame_count());
        Scene<float> copy = scene;
        for (std::size_t i = 0; i < perm.size(); ++i) {
            copy.lr[i] = scene.lr[perm[i]];
            copy.qm[i] = scene.qm[perm[i]];
            copy.clearance[i] = scene.clearance[perm[i]];
        }
        scene = copy;
    }
    MetricReport shuffled = evaluate_model(model, reordered, 3);
    CHECK(std::abs(base.mean_cpsnr - shuffled.mean_cpsnr) < 1e-4);
}
