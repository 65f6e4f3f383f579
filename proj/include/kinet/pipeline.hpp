#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kinet/image.hpp"
#include "kinet/rng.hpp"
#include "kinet/tensor.hpp"

namespace kinet {

struct VideoRecord {
    std::string video_id;
    std::vector<std::filesystem::path> frame_paths;  // absolute, ordered
    int action_label = 0;
};

struct Dataset {
    std::filesystem::path root;  // directory containing the manifest
    std::vector<VideoRecord> videos;
    int n_classes = 0;  // 1 + max label seen
};

// Manifest: one line per video, tab separated:
//   video_id <TAB> relative_dir <TAB> frame_count <TAB> action_label
// Frames are <relative_dir>/frame_%05d.png, relative to the manifest.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Geometry of frame preprocessing. Frames are resized to (base_h, base_w)
// first; crops are taken from that canvas and resized to (input_h, input_w).
struct AugmentConfig {
    int base_h = 64;
    int base_w = 80;
    int input_h = 56;
    int input_w = 56;
    std::vector<double> scales = {1.0, 0.875, 0.75, 0.66};
    float mean[3] = {0.485f, 0.456f, 0.406f};
    float stddev[3] = {0.229f, 0.224f, 0.225f};
};

// Half-open segment boundaries: segment i covers [base(i), base(i+1)) with
// base(i) = floor(i*T/n). Sizes differ by at most one, remainder at the end.
inline int64_t segment_base(int64_t frames, int64_t n_seg, int64_t i) {
    return i * frames / n_seg;
}

// One uniformly drawn index per segment. Draw order is segment 0..n_seg-1.
std::vector<int64_t> sample_train_segments(const VideoRecord& video, int64_t n_seg, Rng& rng);

// Deterministic per-segment center frames; indices clamp for short videos.
std::vector<int64_t> eval_segment_centers(int64_t frames, int64_t n_seg);

// Multiscale crop + random corner-or-center position + random horizontal flip
// + resize + normalization. Draw order: scale pair, position, flip coin.
Tensor<float> train_augment(const Image& frame, const AugmentConfig& cfg, Rng& rng,
                            ViewGeometry* geometry = nullptr);

// Center crop of the base canvas, no flip.
Tensor<float> eval_center_view(const Image& frame, const AugmentConfig& cfg,
                               ViewGeometry* geometry = nullptr);

struct ViewBatch {
    Tensor<float> frames;               // [V, 3, input_h, input_w]
    std::vector<ViewGeometry> views;    // V entries
    int64_t n_segments = 0;
    int64_t views_per_segment = 0;      // 10 under the full protocol
};

// The full-protocol view set: n_eval_seg deterministic segment-center frames,
// each cropped at the 4 corners plus the center and mirrored, giving
// n_eval_seg*10 views ordered segment-major with flip pairs adjacent
// (view 2k+1 is the mirror of view 2k).
ViewBatch inference_views(const VideoRecord& video, const AugmentConfig& cfg, int64_t n_eval_seg = 25);

// Sliding-window consensus over per-view logits [n_seg, n_views, k]:
// views are averaged per segment, every contiguous window of `window`
// segments is averaged (stride 1), and the window means are averaged.
std::vector<double> consensus(const Tensor<float>& view_logits, int64_t window = 3);

// Procedural dataset: the action class is the joint of a blob-trajectory
// factor and a background-texture factor, so both auxiliary cues carry
// real signal. Returns the manifest path.
struct SynthConfig {
    int n_classes = 4;
    int videos_per_class = 8;
    int frames_per_video = 16;
    int frame_h = 64;
    int frame_w = 80;
    uint64_t seed = 7;
};
std::filesystem::path synth_dataset(const std::filesystem::path& out_dir, const SynthConfig& cfg);

// Latent factors are recoverable from the generated video ids
// ("c<class>_s<scene>_t<traj>_v<idx>"); returns -1 when the id does not
// carry a scene factor.
int parse_scene_factor(const std::string& video_id);

int synth_scene_count(int n_classes);

}  // namespace kinet
