// Command-line surface: dataset synthesis, pseudo-label precompute, training,
// evaluation, gradient checking, and activation-map export.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "kinet/actmap.hpp"
#include "kinet/config_file.hpp"
#include "kinet/errors.hpp"
#include "kinet/gradcheck.hpp"
#include "kinet/pipeline.hpp"
#include "kinet/teacher.hpp"
#include "kinet/trainer.hpp"

namespace fs = std::filesystem;
using namespace kinet;

namespace {

// exit codes; 0 is success
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

struct ConfigArgs {
    std::string config_path;
    std::map<std::string, std::string> overrides;  // insertion order irrelevant: keys are unique
};

// every config key becomes a dotted flag; flags win over the config file
void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "config file ([section] + key = value lines)");
    for (const auto& f : config_schema()) {
        const std::string key = f.key;
        cmd->add_option_function<std::string>(
            "--" + key, [&args, key](const std::string& v) { args.overrides[key] = v; }, f.help);
    }
}

RunConfig resolve_config(const ConfigArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) merge_config_file(cfg, args.config_path);
    for (const auto& [k, v] : args.overrides) apply_config_kv(cfg, k, v);
    cfg.validate();
    return cfg;
}

std::unique_ptr<TeacherProvider> make_teacher(const std::string& spec, uint64_t seed, int k_scene) {
    if (spec == "synthetic") return synthetic_teacher(seed, k_scene);
    if (spec.rfind("file:", 0) == 0) return file_teacher(spec.substr(5), k_scene);
    throw ConfigError("teacher must be 'synthetic' or 'file:PATH', got '" + spec + "'");
}

int run(int argc, char** argv) {
    CLI::App app{"three-branch video action recognition with auxiliary scene/human distillation"};
    app.require_subcommand(1);

    // synthdata
    auto* synth = app.add_subcommand("synthdata", "generate a procedural video dataset");
    std::string synth_out;
    SynthConfig synth_cfg;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--classes", synth_cfg.n_classes, "number of action classes");
    synth->add_option("--videos-per-class", synth_cfg.videos_per_class, "videos per class");
    synth->add_option("--frames", synth_cfg.frames_per_video, "frames per video");
    synth->add_option("--height", synth_cfg.frame_h, "frame height");
    synth->add_option("--width", synth_cfg.frame_w, "frame width");
    synth->add_option("--seed", synth_cfg.seed, "generator seed");

    // pseudolabel
    auto* pseudo = app.add_subcommand("pseudolabel", "precompute the pseudo-label cache");
    std::string pseudo_data, pseudo_teacher = "synthetic", pseudo_out;
    uint64_t pseudo_seed = 17;
    ConfigArgs pseudo_cfg_args;
    pseudo->add_option("--data", pseudo_data, "dataset manifest")->required();
    pseudo->add_option("--teacher", pseudo_teacher, "synthetic or file:PATH");
    pseudo->add_option("--out", pseudo_out, "cache directory")->required();
    pseudo->add_option("--seed", pseudo_seed, "teacher seed (synthetic)");
    add_config_flags(pseudo, pseudo_cfg_args);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string train_data, train_labels, train_out;
    uint64_t train_seed = 1;
    ConfigArgs train_cfg_args;
    train_cmd->add_option("--data", train_data, "dataset manifest")->required();
    train_cmd->add_option("--labels", train_labels, "pseudo-label cache directory");
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--seed", train_seed, "training seed");
    add_config_flags(train_cmd, train_cfg_args);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_data, eval_protocol, eval_out;
    ConfigArgs eval_cfg_args;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset manifest")->required();
    eval_cmd->add_option("--protocol", eval_protocol, "full250 or fast (default from config)");
    eval_cmd->add_option("--out", eval_out, "directory for the written summary (default: checkpoint dir)");
    add_config_flags(eval_cmd, eval_cfg_args);

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "check reverse-mode gradients against finite differences");
    std::string grad_target = "all";
    uint64_t grad_seed = 3407;
    grad_cmd->add_option("--target", grad_target, "cbi | akg | losses | model | all");
    grad_cmd->add_option("--seed", grad_seed, "probe seed");

    // actmap
    auto* act_cmd = app.add_subcommand("actmap", "export per-branch activation heatmaps");
    std::string act_ckpt, act_data, act_video, act_out;
    ConfigArgs act_cfg_args;
    act_cmd->add_option("--checkpoint", act_ckpt, "checkpoint file")->required();
    act_cmd->add_option("--data", act_data, "dataset manifest")->required();
    act_cmd->add_option("--video", act_video, "video id")->required();
    act_cmd->add_option("--out", act_out, "output directory")->required();
    add_config_flags(act_cmd, act_cfg_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfig;
    }

    if (synth->parsed()) {
        const fs::path manifest = synth_dataset(synth_out, synth_cfg);
        std::printf("wrote %d videos (%d classes x %d) to %s\n", synth_cfg.n_classes * synth_cfg.videos_per_class,
                    synth_cfg.n_classes, synth_cfg.videos_per_class, manifest.string().c_str());
        return 0;
    }

    if (pseudo->parsed()) {
        RunConfig cfg = resolve_config(pseudo_cfg_args);
        Dataset ds = load_dataset(pseudo_data);
        auto teacher = make_teacher(pseudo_teacher, pseudo_seed, static_cast<int>(cfg.model.k_scene));
        const size_t written = write_label_cache(pseudo_out, ds, static_cast<int>(cfg.model.n_seg), *teacher);
        const size_t total = ds.videos.size() * static_cast<size_t>(cfg.model.n_seg);
        std::printf("label cache at %s: %zu records (%zu newly written)\n", pseudo_out.c_str(), total, written);
        return 0;
    }

    if (train_cmd->parsed()) {
        RunConfig cfg = resolve_config(train_cfg_args);
        Dataset ds = load_dataset(train_data);
        std::unique_ptr<LabelCache> labels;
        if (!train_labels.empty()) {
            labels = std::make_unique<LabelCache>(LabelCache::open(train_labels));
        } else if (cfg.optim.lambda_human > 0 || cfg.optim.lambda_scene > 0) {
            throw DataError("auxiliary losses enabled but --labels not given; "
                            "run the pseudolabel command and pass its directory");
        }
        TrainResult res = train(cfg, ds, labels.get(), train_seed, train_out);
        for (const auto& m : res.history) {
            std::printf("epoch %3lld  lr %.5g  loss %.5f  action %.5f  human %.5f  scene %.5f  top1 %.4f\n",
                        static_cast<long long>(m.epoch), m.lr, m.loss_total, m.loss_action, m.loss_human,
                        m.loss_scene, m.train_top1);
        }
        std::printf("final: top1 %.4f  top5 %.4f  checkpoint %s\n", res.final_top1, res.final_top5,
                    res.checkpoint_path.string().c_str());
        return 0;
    }

    if (eval_cmd->parsed()) {
        RunConfig cfg = resolve_config(eval_cfg_args);
        auto ckpt = load_checkpoint(eval_ckpt);
        auto model = model_from_checkpoint(ckpt);
        // the checkpoint's architecture wins over file/flag model settings
        cfg.model = model->config();
        Dataset ds = load_dataset(eval_data);
        const std::string protocol = eval_protocol.empty() ? cfg.eval.protocol : eval_protocol;
        EvalResult res = evaluate(*model, ds, cfg, protocol);
        std::printf("protocol = %s\ntop1 = %.6f\ntop5 = %.6f\nviews_per_video = %lld\n",
                    protocol.c_str(), res.top1, res.top5, static_cast<long long>(res.views_per_video));
        const fs::path out_dir = eval_out.empty() ? fs::path(eval_ckpt).parent_path() : fs::path(eval_out);
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        const fs::path summary = out_dir / ("eval_" + protocol + ".txt");
        std::ofstream f(summary, std::ios::trunc);
        if (!f) throw IoError("eval: cannot write " + summary.string());
        char buf[200];
        std::snprintf(buf, sizeof(buf), "protocol = %s\ntop1 = %.6f\ntop5 = %.6f\nviews_per_video = %lld\n",
                      protocol.c_str(), res.top1, res.top5, static_cast<long long>(res.views_per_video));
        f << buf;
        return 0;
    }

    if (grad_cmd->parsed()) {
        auto checks = grad_checks_for_target(grad_target, grad_seed);
        bool all_passed = true;
        for (const auto& check : checks) {
            GradCheckReport rep = run_grad_check(check);
            if (rep.passed) {
                std::printf("PASS  %-22s max_rel_err %.3e  (%lld coords)\n", rep.name.c_str(),
                            rep.max_rel_err, static_cast<long long>(rep.coords_checked));
            } else {
                std::printf("FAIL  %-22s max_rel_err %.3e at %s[%lld] analytic %.6e fd %.6e\n",
                            rep.name.c_str(), rep.max_rel_err, rep.worst_leaf.c_str(),
                            static_cast<long long>(rep.worst_index), rep.worst_analytic, rep.worst_fd);
                all_passed = false;
            }
        }
        if (!all_passed) {
            std::cerr << "error: numeric: gradient check failed\n";
            return kExitNumeric;
        }
        return 0;
    }

    if (act_cmd->parsed()) {
        RunConfig cfg = resolve_config(act_cfg_args);
        Dataset ds = load_dataset(act_data);
        auto paths = export_activation_maps(act_ckpt, ds, act_video, cfg, act_out);
        std::printf("wrote %zu heatmaps to %s\n", paths.size(), act_out.c_str());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ShapeError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ValidationError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
