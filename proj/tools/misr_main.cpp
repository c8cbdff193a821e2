// Command-line entry point: dataset synthesis, training, evaluation,
// inference, and the self-verification suite.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "misr/misr.hpp"

namespace fs = std::filesystem;
using namespace misr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string data_root;
    std::string out_dir = "out";
    std::string band = "nir";
    int threads = 0;  // 0 = hardware default
    double val_frac = 0.2;

    bool apply_kv(const std::string& key, const std::string& value) {
        if (model.apply_kv(key, value)) return true;
        if (train.apply_kv(key, value)) return true;
        if (key == "run.data") data_root = value;
        else if (key == "run.out") out_dir = value;
        else if (key == "run.band") band = value;
        else if (key == "run.threads") threads = std::stoi(value);
        else if (key == "run.val_frac") val_frac = std::stod(value);
        else return false;
        return true;
    }

    std::vector<std::pair<std::string, std::string>> to_kv() const {
        auto kv = model.to_kv();
        auto tkv = train.to_kv();
        kv.insert(kv.end(), tkv.begin(), tkv.end());
        kv.push_back({"run.data", data_root});
        kv.push_back({"run.out", out_dir});
        kv.push_back({"run.band", band});
        kv.push_back({"run.threads", std::to_string(threads)});
        kv.push_back({"run.val_frac", std::to_string(val_frac)});
        return kv;
    }
};

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
            line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(start, eq - start);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        std::string value = line.substr(eq + 1);
        const auto vs = value.find_first_not_of(" \t");
        value = vs == std::string::npos ? "" : value.substr(vs);
        if (!cfg.apply_kv(key, value)) throw ConfigError("unknown config key: " + key);
    }
}

void write_snapshot(const RunConfig& cfg, const fs::path& path) {
    std::ofstream out(path);
    for (const auto& [k, v] : cfg.to_kv()) out << k << "=" << v << "\n";
}

std::vector<Scene<float>> load_scenes_checked(const std::string& root, const std::string& band) {
    if (root.empty()) throw ConfigError("--data is required");
    return load_dataset<float>(root, band_from(band));
}

// Deterministic split: the trailing fraction (by sorted scene id) validates.
void split_scenes(std::vector<Scene<float>>& scenes, double val_frac,
                  std::vector<Scene<float>>& val) {
    const std::size_t n_val =
        val_frac <= 0.0
            ? 0
            : std::max<std::size_t>(1, static_cast<std::size_t>(scenes.size() * val_frac));
    if (n_val >= scenes.size()) throw ConfigError("validation fraction leaves no training scenes");
    val.assign(scenes.end() - static_cast<long>(n_val), scenes.end());
    scenes.erase(scenes.end() - static_cast<long>(n_val), scenes.end());
}

int cmd_train(RunConfig cfg, const std::string& resume_path) {
    auto scenes = load_scenes_checked(cfg.data_root, cfg.band);
    std::vector<Scene<float>> val;
    split_scenes(scenes, cfg.val_frac, val);
    if (scenes.empty()) throw DataError("no training scenes found");

    // bias tables must cover the largest map the model will see
    std::size_t max_h = 0, max_w = 0;
    for (const auto& s : scenes) {
        max_h = std::max(max_h, s.lr_h());
        max_w = std::max(max_w, s.lr_w());
    }
    for (const auto& s : val) {
        max_h = std::max(max_h, s.lr_h());
        max_w = std::max(max_w, s.lr_w());
    }
    if (cfg.model.input_h < static_cast<int>(max_h)) cfg.model.input_h = static_cast<int>(max_h);
    if (cfg.model.input_w < static_cast<int>(max_w)) cfg.model.input_w = static_cast<int>(max_w);
    cfg.model.k = cfg.train.k;
    cfg.model.validate();
    cfg.train.validate();

    fs::create_directories(cfg.out_dir);
    write_snapshot(cfg, fs::path(cfg.out_dir) / "config.resolved");

    SrModel<float> model = SrModel<float>::init(cfg.model, cfg.train.seed);
    Adam<float> opt(cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps);
    int start_epoch = 0;
    if (!resume_path.empty()) {
        CheckpointData data = read_checkpoint(resume_path);
        model = restore_model<float>(data, &opt);
        start_epoch = data.meta.epoch;
        std::fprintf(stderr, "resumed from %s at epoch %d\n", resume_path.c_str(), start_epoch);
    }
    std::fprintf(stderr, "training on %zu scenes (%zu validation), %zu parameters\n", scenes.size(),
                 val.size(), model.store.total_scalars());
    FitResult result = fit(model, opt, scenes, val, cfg.train, fs::path(cfg.out_dir), start_epoch);
    std::fprintf(stderr, "best validation cPSNR %.3f dB at epoch %d\n", result.best_val_cpsnr,
                 result.best_epoch);
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& baseline) {
    auto scenes = load_scenes_checked(cfg.data_root, cfg.band);
    MetricReport report;
    if (!baseline.empty()) {
        if (baseline != "bicubic") throw ConfigError("unknown baseline: " + baseline);
        report =
            evaluate_dataset<float>(scenes, [](const Scene<float>& s) { return bicubic_clearest(s); });
    } else {
        if (checkpoint.empty()) throw ConfigError("--checkpoint or --baseline required");
        CheckpointData data = read_checkpoint(checkpoint);
        SrModel<float> model = restore_model<float>(data);
        report = evaluate_model(model, scenes, data.meta.train.k);
    }
    const std::string text = format_report(report);
    std::fputs(text.c_str(), stdout);
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        std::ofstream out(fs::path(cfg.out_dir) / "report.txt");
        out << text;
    }
    if (report.evaluated == 0) {
        std::fprintf(stderr, "error: no scene had an HR target\n");
        return kExitData;
    }
    return kExitOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& scene_dir,
              const std::string& out_png, const std::string& band) {
    CheckpointData data = read_checkpoint(checkpoint);
    SrModel<float> model = restore_model<float>(data);
    Scene<float> scene = load_scene<float>(scene_dir, band_from(band));
    Tensor<float> sr = infer_scene(model, scene, data.meta.train.k);
    GrayImage16 img;
    img.height = static_cast<int>(sr.dim(1));
    img.width = static_cast<int>(sr.dim(2));
    img.pixels.resize(sr.size());
    for (std::size_t i = 0; i < sr.size(); ++i) {
        double v = static_cast<double>(sr[i]);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
    if (fs::path(out_png).has_parent_path())
        fs::create_directories(fs::path(out_png).parent_path());
    write_png_gray16(out_png, img);
    std::fprintf(stderr, "wrote %s (%dx%d)\n", out_png.c_str(), img.width, img.height);
    return kExitOk;
}

int cmd_synth(const RunConfig& cfg, int scenes, int hr_size, const std::string& hr_dir,
              SynthParams params, std::uint64_t seed) {
    if (cfg.out_dir.empty()) throw ConfigError("--out is required");
    const Band band = band_from(cfg.band);
    std::vector<Tensor<float>> rasters;
    if (!hr_dir.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(hr_dir))
            if (e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no PNG rasters in " + hr_dir);
        for (const auto& f : files) {
            GrayImage16 img = read_png_gray16(f.string());
            rasters.push_back(scenedetail::image_to_tensor<float>(img));
        }
    } else {
        Rng texture_rng = Rng(seed).derive("texture");
        for (int i = 0; i < scenes; ++i)
            rasters.push_back(make_texture<float>(hr_size, hr_size, texture_rng.derive("scene", i)));
    }
    for (std::size_t i = 0; i < rasters.size(); ++i) {
        SynthParams p = params;
        p.seed = Rng(seed).derive("degrade", i).next_u64();
        char name[32];
        std::snprintf(name, sizeof(name), "imgset%04zu", i);
        Scene<float> scene = synthesize_scene(rasters[i], p, name, band);
        save_scene(scene, fs::path(cfg.out_dir) / to_string(band) / name);
    }
    std::fprintf(stderr, "wrote %zu scenes under %s/%s\n", rasters.size(), cfg.out_dir.c_str(),
                 to_string(band).c_str());
    return kExitOk;
}

int cmd_check(bool fast, bool inject_fault) {
    verify::Options opts;
    if (fast) opts.shapes_per_op = 5;
    opts.break_gradient_hook = inject_fault;
    auto results = verify::run_all(opts);
    verify::print_results(results);
    if (!verify::all_pass(results)) {
        std::fprintf(stdout, "FAILED checks:");
        for (const auto& r : results)
            if (!r.pass) std::fprintf(stdout, " %s", r.name.c_str());
        std::fprintf(stdout, "\n");
        return kExitVerify;
    }
    std::fprintf(stdout, "all checks passed\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-image super-resolution for satellite frame stacks"};
    app.require_subcommand(1);

    std::string config_path, out_dir, band;
    std::uint64_t seed = 0;
    int threads = -1;
    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--seed", seed, "master seed for all random streams");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--band", band, "spectral band (nir|red)")->check(CLI::IsMember({"nir", "red"}));
    app.add_option("--threads", threads, "worker threads (default: hardware)");

    auto* train = app.add_subcommand("train", "train a model on a dataset root");
    std::string data_root, resume_path;
    int epochs = -1, k = -1, crop = -1, batch = -1, shuffle_t = -1, n_misab = -1;
    int c_width = -1, c_embed = -1, input_size = -1, patch_n = -1, n_ffc = -1, heads = -1;
    double lr = -1, val_frac = -1, alpha = -1;
    std::string bias_mode, fusion_block;
    bool masked_loss = false, mask_channel = false;
    train->add_option("--data", data_root, "dataset root directory");
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--k", k, "frame slots per scene");
    train->add_option("--crop", crop, "LR crop size (0 = full frame)");
    train->add_option("--batch", batch, "batch size");
    train->add_option("--lr", lr, "learning rate");
    train->add_option("--shuffle-t", shuffle_t, "shuffled copies per scene per epoch (0-10)");
    train->add_option("--val-frac", val_frac, "validation fraction of the scene list");
    train->add_option("--c", c_width, "encoder output width");
    train->add_option("--c-embed", c_embed, "stem/CMT width");
    train->add_option("--misab", n_misab, "fusion block count");
    train->add_option("--heads", heads, "attention heads (both stages)");
    train->add_option("--patch-n", patch_n, "pixels per message-token patch");
    train->add_option("--n-ffc", n_ffc, "FFC block count");
    train->add_option("--alpha", alpha, "FFC global-branch channel fraction");
    train->add_option("--input-size", input_size, "largest map the bias tables cover");
    train->add_option("--bias-mode", bias_mode, "frame-agnostic|full-sequence");
    train->add_option("--fusion-block", fusion_block, "misab|self-attention|mean-pool");
    train->add_flag("--masked-loss", masked_loss, "average the loss over clear pixels only");
    train->add_flag("--mask-channel", mask_channel, "feed quality masks as a second channel");
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or baseline on a dataset");
    std::string checkpoint, baseline;
    eval->add_option("--data", data_root, "dataset root directory");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file");
    eval->add_option("--baseline", baseline, "baseline instead of a checkpoint (bicubic)");

    auto* infer = app.add_subcommand("infer", "super-resolve one scene directory");
    std::string scene_dir, out_png;
    infer->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    infer->add_option("--scene", scene_dir, "scene directory")->required();
    infer->add_option("--out-png", out_png, "output 16-bit PNG path")->required();

    auto* synth = app.add_subcommand("synth", "materialize a synthetic dataset");
    int synth_scenes = 10, synth_size = 96, synth_frames = 9;
    double shift_px = 0.75, blur_sigma = 0.6, noise_sigma = 0.02, coverage = 0.1;
    std::string hr_dir;
    synth->add_option("--scenes", synth_scenes, "number of scenes (procedural rasters)");
    synth->add_option("--size", synth_size, "HR raster size (divisible by 3)");
    synth->add_option("--frames", synth_frames, "LR frames per scene");
    synth->add_option("--hr-dir", hr_dir, "use 16-bit PNG rasters from this directory instead");
    synth->add_option("--shift", shift_px, "max sub-pixel shift (HR px)");
    synth->add_option("--blur", blur_sigma, "Gaussian blur sigma");
    synth->add_option("--noise", noise_sigma, "additive noise sigma");
    synth->add_option("--coverage", coverage, "cloud-mask coverage fraction");

    auto* check = app.add_subcommand("check", "run the gradient-check and oracle suite");
    bool fast = false, inject_fault = false;
    check->add_flag("--fast", fast, "fewer random instances per check");
    check->add_flag("--inject-grad-fault", inject_fault,
                    "negative control: corrupt one gradient and expect failure");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) load_config_file(cfg, config_path);
        auto overridden = [&](const std::string& key, const std::string& value, bool given) {
            if (!given) return;
            if (!config_path.empty())
                std::fprintf(stderr, "config: %s=%s (command line overrides file)\n", key.c_str(),
                             value.c_str());
            cfg.apply_kv(key, value);
        };
        overridden("run.out", out_dir, app.count("--out") > 0);
        overridden("run.band", band, app.count("--band") > 0);
        overridden("run.threads", std::to_string(threads), app.count("--threads") > 0);
        overridden("train.seed", std::to_string(seed), app.count("--seed") > 0);
        if (threads > 0) set_threads(threads);
        else if (cfg.threads > 0) set_threads(cfg.threads);

        if (*train) {
            overridden("run.data", data_root, train->count("--data") > 0);
            overridden("run.val_frac", std::to_string(val_frac), train->count("--val-frac") > 0);
            overridden("train.epochs", std::to_string(epochs), train->count("--epochs") > 0);
            overridden("train.k", std::to_string(k), train->count("--k") > 0);
            overridden("train.crop", std::to_string(crop), train->count("--crop") > 0);
            overridden("train.batch", std::to_string(batch), train->count("--batch") > 0);
            overridden("train.lr", std::to_string(lr), train->count("--lr") > 0);
            overridden("train.shuffle_t", std::to_string(shuffle_t), train->count("--shuffle-t") > 0);
            overridden("train.masked_loss", masked_loss ? "1" : "0",
                       train->count("--masked-loss") > 0);
            overridden("model.c", std::to_string(c_width), train->count("--c") > 0);
            overridden("model.c_embed", std::to_string(c_embed), train->count("--c-embed") > 0);
            overridden("model.n_misab", std::to_string(n_misab), train->count("--misab") > 0);
            overridden("model.patch_n", std::to_string(patch_n), train->count("--patch-n") > 0);
            overridden("model.n_ffc", std::to_string(n_ffc), train->count("--n-ffc") > 0);
            overridden("model.ffc_alpha", std::to_string(alpha), train->count("--alpha") > 0);
            overridden("model.bias_mode", bias_mode, train->count("--bias-mode") > 0);
            overridden("model.fusion_block", fusion_block, train->count("--fusion-block") > 0);
            overridden("model.mask_channel", mask_channel ? "1" : "0",
                       train->count("--mask-channel") > 0);
            if (cfg.model.mask_channel) cfg.model.c_in = 2;
            if (train->count("--heads") > 0) {
                cfg.model.cmt_heads = heads;
                cfg.model.misa_heads = heads;
            }
            if (train->count("--input-size") > 0) {
                cfg.model.input_h = input_size;
                cfg.model.input_w = input_size;
            }
            return cmd_train(cfg, resume_path);
        }
        if (*eval) {
            overridden("run.data", data_root, eval->count("--data") > 0);
            return cmd_eval(cfg, checkpoint, baseline);
        }
        if (*infer) return cmd_infer(checkpoint, scene_dir, out_png, cfg.band);
        if (*synth) {
            SynthParams p;
            p.frames = synth_frames;
            p.shift_px = shift_px;
            p.blur_sigma = blur_sigma;
            p.noise_sigma = noise_sigma;
            p.coverage = coverage;
            return cmd_synth(cfg, synth_scenes, synth_size, hr_dir, p, cfg.train.seed);
        }
        if (*check) return cmd_check(fast, inject_fault);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
