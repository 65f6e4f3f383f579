#pragma once

#include <string>
#include <vector>

#include "kinet/image.hpp"
#include "kinet/ops.hpp"

namespace kinet {

// One teacher verdict for one (video, segment): a scene class id plus a
// binary human mask at frame resolution (pixel values 0 or 255).
struct PseudoLabelRecord {
    std::string video_id;
    int segment_index = 0;
    int scene_class = 0;
    Image human_mask;  // 1 channel, {0,255}

    bool operator==(const PseudoLabelRecord& o) const {
        return video_id == o.video_id && segment_index == o.segment_index &&
               scene_class == o.scene_class && human_mask.h == o.human_mask.h &&
               human_mask.w == o.human_mask.w && human_mask.pix == o.human_mask.pix;
    }
};

// Pseudo-label source. Implementations must be deterministic in
// (provider seed, video_id, segment_index); the frame argument supplies the
// extent the mask has to match.
class TeacherProvider {
public:
    virtual ~TeacherProvider() = default;
    virtual PseudoLabelRecord label(const std::string& video_id, int segment_index,
                                    const Image& frame) const = 0;
};

// scene classifier: [n_seg, d] pooled features -> [n_seg, k_scene] logits
template <typename T>
Var<T> scene_head(Tape<T>& tape, const Var<T>& scene_pooled, const Var<T>& w, const Var<T>& b) {
    return linear(tape, scene_pooled, w, b);
}

// human parser: 1x1 conv to 2-class per-pixel logits at feature resolution
template <typename T>
Var<T> human_head(Tape<T>& tape, const Var<T>& human_fm, const Var<T>& w, const Var<T>& b) {
    return conv2d(tape, human_fm, w, b, 1, 0);
}

// mean over segments of softmax cross-entropy
template <typename T>
Var<T> scene_loss(Tape<T>& tape, const Var<T>& logits, const std::vector<int>& labels) {
    return softmax_cross_entropy(tape, logits, labels);
}

// Binary masks are nearest-neighbor downsampled to the logit resolution, then
// scored with per-pixel cross-entropy averaged over segments and pixels.
// masks: [B, frame_h, frame_w] with values in {0,1}.
template <typename T>
Var<T> human_loss(Tape<T>& tape, const Var<T>& pixel_logits, const Tensor<uint8_t>& masks) {
    require_rank(pixel_logits->value, 4, "human_loss logits");
    require_rank(masks, 3, "human_loss masks");
    if (masks.dim(0) != pixel_logits->value.dim(0)) {
        throw ShapeError("human_loss: " + std::to_string(masks.dim(0)) + " masks for batch " +
                         std::to_string(pixel_logits->value.dim(0)));
    }
    const int64_t b = masks.dim(0), mh = masks.dim(1), mw = masks.dim(2);
    const int64_t h = pixel_logits->value.dim(2), w = pixel_logits->value.dim(3);
    Tensor<uint8_t> target({b, h, w});
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t y = 0; y < h; ++y) {
            const int64_t sy = std::min(mh - 1, (2 * y + 1) * mh / (2 * h));
            for (int64_t x = 0; x < w; ++x) {
                const int64_t sx = std::min(mw - 1, (2 * x + 1) * mw / (2 * w));
                target[(n * h + y) * w + x] = masks[(n * mh + sy) * mw + sx];
            }
        }
    }
    return pixel_cross_entropy(tape, pixel_logits, target);
}

}  // namespace kinet
