#include "kinet/actmap.hpp"

#include <cmath>
#include <cstring>

#include "kinet/errors.hpp"
#include "kinet/png_io.hpp"
#include "kinet/trainer.hpp"

namespace kinet {

namespace fs = std::filesystem;

namespace {

// channel mean -> min-max normalized gray; a flat map becomes mid-gray
Image heatmap_from(const Tensor<float>& fm, int64_t sample) {
    const int64_t c = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
    std::vector<double> mean(static_cast<size_t>(h * w), 0.0);
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t i = 0; i < h * w; ++i) {
            mean[static_cast<size_t>(i)] += static_cast<double>(fm[(sample * c + ch) * h * w + i]);
        }
    }
    double lo = mean[0], hi = mean[0];
    for (double v : mean) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Image img(static_cast<int>(h), static_cast<int>(w), 1);
    if (hi - lo < 1e-12) {
        std::fill(img.pix.begin(), img.pix.end(), static_cast<uint8_t>(128));
        return img;
    }
    for (size_t i = 0; i < mean.size(); ++i) {
        img.pix[i] = static_cast<uint8_t>(std::lround((mean[i] - lo) / (hi - lo) * 255.0));
    }
    return img;
}

}  // namespace

std::vector<fs::path> export_activation_maps(const fs::path& checkpoint_path, const Dataset& dataset,
                                             const std::string& video_id, const RunConfig& cfg,
                                             const fs::path& out_dir) {
    const VideoRecord* video = nullptr;
    for (const auto& v : dataset.videos) {
        if (v.video_id == video_id) {
            video = &v;
            break;
        }
    }
    if (!video) throw DataError("actmap: no video '" + video_id + "' in dataset");

    auto ckpt = load_checkpoint(checkpoint_path);
    auto model = model_from_checkpoint(ckpt);
    model->set_train(false);

    const int64_t n_seg = model->config().n_seg;
    AugmentConfig aug;
    aug.base_h = static_cast<int>(cfg.data.base_h);
    aug.base_w = static_cast<int>(cfg.data.base_w);
    aug.input_h = static_cast<int>(model->config().input_h);
    aug.input_w = static_cast<int>(model->config().input_w);

    const auto centers = eval_segment_centers(static_cast<int64_t>(video->frame_paths.size()), n_seg);
    Image first_frame = read_png(video->frame_paths[0]);
    const int frame_h = first_frame.h, frame_w = first_frame.w;

    Tensor<float> frames({n_seg, 3, aug.input_h, aug.input_w});
    const int64_t numel = 3LL * aug.input_h * aug.input_w;
    for (int64_t s = 0; s < n_seg; ++s) {
        Tensor<float> t = eval_center_view(
            read_png(video->frame_paths[static_cast<size_t>(centers[static_cast<size_t>(s)])]), aug);
        std::memcpy(frames.data() + s * numel, t.data(), static_cast<size_t>(numel) * sizeof(float));
    }

    Tape<float> tape;
    tape.recording = false;
    // aux heads requested so all three branch maps exist even for configs
    // with fusion and graph reasoning disabled
    auto out = model->forward(tape, make_leaf(std::move(frames)), /*n_seg=*/1, /*with_aux_heads=*/true);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("actmap: cannot create " + out_dir.string());

    struct BranchMap {
        const char* name;
        const Var<float>& fm;
    };
    const BranchMap branches[3] = {{"action", out.final_maps.action},
                                   {"scene", out.final_maps.scene},
                                   {"human", out.final_maps.human}};
    std::vector<fs::path> written;
    for (const auto& br : branches) {
        for (int64_t s = 0; s < n_seg; ++s) {
            Image map = heatmap_from(br.fm->value, s);
            Image up = resize_bilinear(map, frame_h, frame_w);
            const fs::path p = out_dir / ("actmap_" + std::string(br.name) + "_seg" + std::to_string(s) + ".png");
            write_png(p, up);
            written.push_back(p);
        }
    }
    return written;
}

}  // namespace kinet
