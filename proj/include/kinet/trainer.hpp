#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "kinet/config_file.hpp"
#include "kinet/netcore.hpp"
#include "kinet/pipeline.hpp"
#include "kinet/teacher.hpp"

namespace kinet {

struct LossWeights {
    double action = 1.0;
    double human = 0.01;
    double scene = 0.01;
};

// total = λ_action·l_action + λ_human·l_human + λ_scene·l_scene, exactly
// linear in each component. Non-finite inputs abort the step.
double total_loss(double l_action, double l_human, double l_scene, const LossWeights& w);

// Momentum SGD with coupled weight decay:
//   v <- μ·v + (g + λ_wd·w);  w <- w - lr·v
// Also carries the step schedule so a checkpoint restores the optimizer whole.
struct OptimState {
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    double lr_decay = 0.1;
    std::vector<int64_t> milestones;      // epochs at which the lr decays
    std::vector<Tensor<float>> velocity;  // parallel to the parameter registry

    void init_for(const std::vector<std::pair<std::string, Var<float>>>& params);
};

void sgd_step(const std::vector<std::pair<std::string, Var<float>>>& params, OptimState& state,
              double lr);

// base lr times decay once per milestone at or below `epoch`.
double lr_at(int64_t epoch, double base_lr, const std::vector<int64_t>& milestones, double decay);

std::vector<int64_t> milestones_from_fracs(int64_t epochs, const std::vector<double>& fracs);

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

struct LoadedCheckpoint {
    uint32_t version = 0;
    ModelConfig config;
    int64_t epoch = 0;
    uint64_t seed = 0;
    std::map<std::string, Tensor<float>> params;
    std::map<std::string, Tensor<float>> buffers;
    std::map<std::string, Tensor<float>> velocity;
    // optimizer hyperparameters as saved; velocities above complete the state
    double base_lr = 0.0;
    double momentum = 0.0;
    double weight_decay = 0.0;
    double lr_decay = 0.0;
    std::vector<int64_t> milestones;

    OptimState optim_state_for(Model<float>& model) const;
};

void save_checkpoint(const std::filesystem::path& path, Model<float>& model,
                     const OptimState* optim, int64_t epoch, uint64_t seed);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the model from the stored config and restores every named tensor.
std::unique_ptr<Model<float>> model_from_checkpoint(const LoadedCheckpoint& ckpt);

// ---------------------------------------------------------------------------
// training / evaluation
// ---------------------------------------------------------------------------

struct EpochMetrics {
    int64_t epoch = 0;
    double lr = 0;
    double loss_total = 0;
    double loss_action = 0;
    double loss_human = 0;
    double loss_scene = 0;
    double train_top1 = 0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& history);

struct TrainResult {
    std::vector<EpochMetrics> history;
    std::filesystem::path checkpoint_path;
    std::filesystem::path metrics_path;
    std::filesystem::path summary_path;
    double final_top1 = 0;
    double final_top5 = 0;
};

// End-to-end joint training. The label cache must be complete when any
// auxiliary loss weight is positive. Deterministic in (config, seed).
TrainResult train(const RunConfig& cfg, const Dataset& dataset, const LabelCache* labels,
                  uint64_t seed, const std::filesystem::path& out_dir);

struct EvalResult {
    double top1 = 0;
    double top5 = 0;
    int64_t n_videos = 0;
    int64_t views_per_video = 0;
};

// Per-video inference detail for verification: raw per-view logits
// [n_seg, views_per_segment, k] under the full protocol.
struct EvalDetail {
    std::vector<Tensor<float>> view_logits;
    std::vector<std::vector<double>> final_scores;
};

EvalResult evaluate(Model<float>& model, const Dataset& dataset, const RunConfig& cfg,
                    const std::string& protocol, EvalDetail* detail = nullptr);

// [N,3,H,W] frames -> [N,k_action] logits, each frame treated as its own
// single-segment clip (BN in eval mode).
Tensor<float> frame_logits(Model<float>& model, const Tensor<float>& frames);

}  // namespace kinet
