#include "kinet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kinet/errors.hpp"
#include "kinet/png_io.hpp"

namespace kinet {

namespace fs = std::filesystem;

Dataset load_dataset(const fs::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open dataset manifest: " + manifest_path.string());
    Dataset ds;
    ds.root = manifest_path.parent_path();
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string video_id, rel_dir;
        int64_t frame_count = 0;
        int label = -1;
        if (!(is >> video_id >> rel_dir >> frame_count >> label)) {
            throw DataError("bad manifest line " + std::to_string(line_no) + " in " +
                            manifest_path.string());
        }
        if (frame_count < 1) throw DataError("video " + video_id + ": frame count must be >= 1");
        if (label < 0) throw DataError("video " + video_id + ": negative action label");
        VideoRecord rec;
        rec.video_id = video_id;
        rec.action_label = label;
        rec.frame_paths.reserve(static_cast<size_t>(frame_count));
        for (int64_t i = 0; i < frame_count; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%05d.png", static_cast<int>(i));
            rec.frame_paths.push_back(ds.root / rel_dir / name);
        }
        ds.n_classes = std::max(ds.n_classes, label + 1);
        ds.videos.push_back(std::move(rec));
    }
    if (ds.videos.empty()) throw DataError("empty dataset manifest: " + manifest_path.string());
    return ds;
}

std::vector<int64_t> sample_train_segments(const VideoRecord& video, int64_t n_seg, Rng& rng) {
    const int64_t t = static_cast<int64_t>(video.frame_paths.size());
    if (t < n_seg) {
        throw DataError("video " + video.video_id + ": " + std::to_string(t) + " frames < n_seg " +
                        std::to_string(n_seg));
    }
    std::vector<int64_t> idx(static_cast<size_t>(n_seg));
    for (int64_t i = 0; i < n_seg; ++i) {
        const int64_t lo = segment_base(t, n_seg, i);
        const int64_t hi = segment_base(t, n_seg, i + 1);
        idx[static_cast<size_t>(i)] = lo + rng.uniform_int(hi - lo);
    }
    return idx;
}

std::vector<int64_t> eval_segment_centers(int64_t frames, int64_t n_seg) {
    std::vector<int64_t> idx(static_cast<size_t>(n_seg));
    for (int64_t i = 0; i < n_seg; ++i) {
        const int64_t lo = segment_base(frames, n_seg, i);
        const int64_t hi = segment_base(frames, n_seg, i + 1);
        idx[static_cast<size_t>(i)] =
            hi > lo ? lo + (hi - lo - 1) / 2 : std::min(lo, frames - 1);
    }
    return idx;
}

namespace {

Image to_base(const Image& frame, const AugmentConfig& cfg) {
    return resize_bilinear(frame, cfg.base_h, cfg.base_w);
}

// (y, x) offsets for the 4 corners and the center of an (bh, bw) canvas.
std::pair<int, int> position_offset(int pos, int bh, int bw, int ch, int cw) {
    switch (pos) {
        case 0: return {0, 0};
        case 1: return {0, bw - cw};
        case 2: return {bh - ch, 0};
        case 3: return {bh - ch, bw - cw};
        default: return {(bh - ch) / 2, (bw - cw) / 2};
    }
}

}  // namespace

Tensor<float> train_augment(const Image& frame, const AugmentConfig& cfg, Rng& rng,
                            ViewGeometry* geometry) {
    if (frame.empty()) throw DataError("train_augment: empty frame");
    Image base = to_base(frame, cfg);

    // crop sides are scales of the short canvas side; adjacent-scale pairs
    // keep the aspect distortion bounded
    const int side = std::min(cfg.base_h, cfg.base_w);
    std::vector<std::pair<int, int>> pairs;
    const int ns = static_cast<int>(cfg.scales.size());
    for (int i = 0; i < ns; ++i) {
        for (int j = 0; j < ns; ++j) {
            if (std::abs(i - j) <= 1) pairs.emplace_back(i, j);
        }
    }
    const auto [si, sj] = pairs[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(pairs.size())))];
    const int ch = std::min(cfg.base_h, static_cast<int>(std::lround(side * cfg.scales[static_cast<size_t>(si)])));
    const int cw = std::min(cfg.base_w, static_cast<int>(std::lround(side * cfg.scales[static_cast<size_t>(sj)])));

    const int pos = static_cast<int>(rng.uniform_int(5));
    const auto [oy, ox] = position_offset(pos, cfg.base_h, cfg.base_w, ch, cw);
    const bool flip = rng.coin();

    ViewGeometry g{oy, ox, ch, cw, flip};
    if (geometry) *geometry = g;
    return to_input_tensor(base, g, cfg.input_h, cfg.input_w, cfg.mean, cfg.stddev);
}

Tensor<float> eval_center_view(const Image& frame, const AugmentConfig& cfg, ViewGeometry* geometry) {
    Image base = to_base(frame, cfg);
    const int ch = std::min(cfg.base_h, cfg.input_h), cw = std::min(cfg.base_w, cfg.input_w);
    ViewGeometry g{(cfg.base_h - ch) / 2, (cfg.base_w - cw) / 2, ch, cw, false};
    if (geometry) *geometry = g;
    return to_input_tensor(base, g, cfg.input_h, cfg.input_w, cfg.mean, cfg.stddev);
}

ViewBatch inference_views(const VideoRecord& video, const AugmentConfig& cfg, int64_t n_eval_seg) {
    if (video.frame_paths.empty()) throw DataError("video " + video.video_id + ": no frames");
    const int ch = std::min(cfg.base_h, cfg.input_h), cw = std::min(cfg.base_w, cfg.input_w);
    const auto centers = eval_segment_centers(static_cast<int64_t>(video.frame_paths.size()), n_eval_seg);

    ViewBatch batch;
    batch.n_segments = n_eval_seg;
    batch.views_per_segment = 10;
    batch.frames = Tensor<float>({n_eval_seg * 10, 3, cfg.input_h, cfg.input_w});
    batch.views.reserve(static_cast<size_t>(n_eval_seg * 10));

    const int64_t view_numel = 3LL * cfg.input_h * cfg.input_w;
    int64_t v = 0;
    for (int64_t s = 0; s < n_eval_seg; ++s) {
        Image base = to_base(read_png(video.frame_paths[static_cast<size_t>(centers[static_cast<size_t>(s)])]), cfg);
        for (int pos = 0; pos < 5; ++pos) {
            const auto [oy, ox] = position_offset(pos, cfg.base_h, cfg.base_w, ch, cw);
            for (int flip = 0; flip < 2; ++flip) {
                ViewGeometry g{oy, ox, ch, cw, flip != 0};
                Tensor<float> t = to_input_tensor(base, g, cfg.input_h, cfg.input_w, cfg.mean, cfg.stddev);
                std::copy(t.data(), t.data() + view_numel, batch.frames.data() + v * view_numel);
                batch.views.push_back(g);
                ++v;
            }
        }
    }
    return batch;
}

std::vector<double> consensus(const Tensor<float>& view_logits, int64_t window) {
    require_rank(view_logits, 3, "consensus logits");
    const int64_t s = view_logits.dim(0), v = view_logits.dim(1), k = view_logits.dim(2);
    if (window < 1 || window > s) {
        throw ConfigError("consensus: window " + std::to_string(window) + " out of range [1," +
                          std::to_string(s) + "]");
    }
    std::vector<double> seg(static_cast<size_t>(s * k), 0.0);
    for (int64_t i = 0; i < s; ++i) {
        for (int64_t j = 0; j < v; ++j) {
            for (int64_t c = 0; c < k; ++c) {
                seg[static_cast<size_t>(i * k + c)] +=
                    static_cast<double>(view_logits[(i * v + j) * k + c]);
            }
        }
        for (int64_t c = 0; c < k; ++c) seg[static_cast<size_t>(i * k + c)] /= static_cast<double>(v);
    }
    const int64_t n_win = s - window + 1;
    std::vector<double> out(static_cast<size_t>(k), 0.0);
    for (int64_t w = 0; w < n_win; ++w) {
        for (int64_t c = 0; c < k; ++c) {
            double acc = 0.0;
            for (int64_t i = 0; i < window; ++i) acc += seg[static_cast<size_t>((w + i) * k + c)];
            out[static_cast<size_t>(c)] += acc / static_cast<double>(window);
        }
    }
    for (int64_t c = 0; c < k; ++c) out[static_cast<size_t>(c)] /= static_cast<double>(n_win);
    return out;
}

// ---------------------------------------------------------------------------
// synthetic dataset
// ---------------------------------------------------------------------------

int synth_scene_count(int n_classes) {
    int s = 1;
    while ((s + 1) * (s + 1) <= n_classes) ++s;
    return s;
}

int parse_scene_factor(const std::string& video_id) {
    const size_t p = video_id.find("_s");
    if (p == std::string::npos) return -1;
    size_t q = p + 2;
    int v = 0;
    bool any = false;
    while (q < video_id.size() && video_id[q] >= '0' && video_id[q] <= '9') {
        v = v * 10 + (video_id[q] - '0');
        ++q;
        any = true;
    }
    if (!any || q >= video_id.size() || video_id[q] != '_') return -1;
    return v;
}

namespace {

struct Rgb {
    double r, g, b;
};

constexpr Rgb kSceneTints[6] = {
    {0.85, 0.45, 0.45}, {0.45, 0.85, 0.45}, {0.45, 0.45, 0.85},
    {0.85, 0.85, 0.40}, {0.40, 0.85, 0.85}, {0.85, 0.40, 0.85},
};

double scene_pattern(int scene, double yn, double xn, double phase) {
    const double f = 3.0 + scene;
    constexpr double tau = 6.283185307179586;
    switch (scene % 4) {
        case 0: return std::sin(tau * f * yn + phase);                              // horizontal stripes
        case 1: return std::sin(tau * f * xn + phase);                              // vertical stripes
        case 2: return std::sin(tau * f * yn + phase) * std::sin(tau * f * xn + phase);  // checker
        default: {
            const double dy = yn - 0.5, dx = xn - 0.5;
            return std::sin(tau * f * std::sqrt(dy * dy + dx * dx) * 2.0 + phase);  // rings
        }
    }
}

// Flip-invariant trajectories: mirroring a video horizontally must not change
// its class, since training applies random horizontal flips. Each pattern is
// also identifiable from a single frame (vertical band or radius), so sparse
// segment sampling and tight crops still see the class.
void blob_state(int traj, double t, double phase, double* cy, double* cx, double* radius) {
    constexpr double tau = 6.283185307179586;
    *radius = 0.17;
    switch (traj % 4) {
        case 0:  // sweep along the upper band
            *cy = 0.30;
            *cx = 0.5 + 0.28 * std::sin(tau * t + phase);
            break;
        case 1:  // sweep along the lower band
            *cy = 0.70;
            *cx = 0.5 + 0.28 * std::sin(tau * t + phase);
            break;
        case 2:  // orbit at a fixed radius around the center
            *cy = 0.5 + 0.22 * std::sin(tau * t + phase);
            *cx = 0.5 + 0.22 * std::cos(tau * t + phase);
            break;
        default:  // centered pulse
            *cy = 0.5;
            *cx = 0.5;
            *radius = 0.10 + 0.06 * std::sin(tau * t + phase);
            break;
    }
}

Image render_frame(int scene, int traj, int frame, int n_frames, int h, int w, double tex_phase,
                   double traj_phase) {
    Image img(h, w, 3);
    const Rgb tint = kSceneTints[scene % 6];
    double cy, cx, radius;
    blob_state(traj, static_cast<double>(frame) / std::max(1, n_frames), traj_phase, &cy, &cx, &radius);
    const double blob_y = cy * h, blob_x = cx * w;
    const double sigma = radius * std::min(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double p = scene_pattern(scene, (y + 0.5) / h, (x + 0.5) / w, tex_phase);
            double r = tint.r * (0.50 + 0.32 * p);
            double g = tint.g * (0.50 + 0.32 * p);
            double b = tint.b * (0.50 + 0.32 * p);
            const double dy = y + 0.5 - blob_y, dx = x + 0.5 - blob_x;
            const double a = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            r = r * (1.0 - a) + 0.98 * a;
            g = g * (1.0 - a) + 0.92 * a;
            b = b * (1.0 - a) + 0.30 * a;
            img.at(y, x, 0) = static_cast<uint8_t>(std::clamp(std::lround(r * 255.0), 0L, 255L));
            img.at(y, x, 1) = static_cast<uint8_t>(std::clamp(std::lround(g * 255.0), 0L, 255L));
            img.at(y, x, 2) = static_cast<uint8_t>(std::clamp(std::lround(b * 255.0), 0L, 255L));
        }
    }
    return img;
}

}  // namespace

std::filesystem::path synth_dataset(const fs::path& out_dir, const SynthConfig& cfg) {
    if (cfg.n_classes < 1 || cfg.videos_per_class < 1 || cfg.frames_per_video < 1) {
        throw ConfigError("synth_dataset: counts must be positive");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("synth_dataset: cannot create " + out_dir.string() + ": " + ec.message());

    const int n_scenes = synth_scene_count(cfg.n_classes);
    std::ostringstream manifest;
    for (int c = 0; c < cfg.n_classes; ++c) {
        const int scene = c % n_scenes;
        const int traj = c / n_scenes;
        for (int v = 0; v < cfg.videos_per_class; ++v) {
            char id[64];
            std::snprintf(id, sizeof(id), "c%d_s%d_t%d_v%03d", c, scene, traj, v);
            const std::string rel = std::string("videos/") + id;
            const fs::path dir = out_dir / rel;
            fs::create_directories(dir, ec);
            if (ec) throw IoError("synth_dataset: cannot create " + dir.string());

            Rng rng(seed_for(cfg.seed, "synth_video", static_cast<uint64_t>(c), static_cast<uint64_t>(v)));
            const double tex_phase = rng.uniform(0.0, 6.283185307179586);
            const double traj_phase = rng.uniform(0.0, 6.283185307179586);
            for (int f = 0; f < cfg.frames_per_video; ++f) {
                char name[32];
                std::snprintf(name, sizeof(name), "frame_%05d.png", f);
                write_png(dir / name, render_frame(scene, traj, f, cfg.frames_per_video, cfg.frame_h,
                                                   cfg.frame_w, tex_phase, traj_phase));
            }
            manifest << id << "\t" << rel << "\t" << cfg.frames_per_video << "\t" << c << "\n";
        }
    }

    const fs::path manifest_path = out_dir / "manifest.tsv";
    const fs::path tmp = out_dir / "manifest.tsv.tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw IoError("synth_dataset: cannot write " + tmp.string());
        f << manifest.str();
    }
    fs::rename(tmp, manifest_path, ec);
    if (ec) throw IoError("synth_dataset: cannot finalize manifest: " + ec.message());
    return manifest_path;
}

}  // namespace kinet
