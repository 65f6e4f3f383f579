#pragma once

#include <cstdint>
#include <vector>

#include "kinet/tensor.hpp"

namespace kinet {

// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image {
    int h = 0;
    int w = 0;
    int channels = 0;
    std::vector<uint8_t> pix;  // h*w*channels, row-major, interleaved

    Image() = default;
    Image(int h_, int w_, int channels_)
        : h(h_), w(w_), channels(channels_), pix(static_cast<size_t>(h_) * w_ * channels_, 0) {}

    uint8_t& at(int y, int x, int c) {
        return pix[(static_cast<size_t>(y) * w + x) * channels + c];
    }
    uint8_t at(int y, int x, int c) const {
        return pix[(static_cast<size_t>(y) * w + x) * channels + c];
    }
    bool empty() const { return pix.empty(); }
};

// Crop/flip descriptor carried alongside every training/inference view so the
// same geometry can be replayed on label masks.
struct ViewGeometry {
    int crop_y = 0;
    int crop_x = 0;
    int crop_h = 0;
    int crop_w = 0;
    bool hflip = false;
};

Image resize_bilinear(const Image& src, int out_h, int out_w);
Image resize_nearest(const Image& src, int out_h, int out_w);
Image crop(const Image& src, int y, int x, int h, int w);
Image hflip(const Image& src);

// crop -> resize -> optional horizontal flip, nearest interpolation; used to
// carry binary masks through the same geometry as their frames.
Image apply_geometry_nearest(const Image& src, const ViewGeometry& g, int out_h, int out_w);

// crop -> bilinear resize -> optional flip -> (x/255 - mean)/std per channel.
// Returns a [3, out_h, out_w] tensor.
Tensor<float> to_input_tensor(const Image& frame, const ViewGeometry& g, int out_h, int out_w,
                              const float mean[3], const float stddev[3]);

}  // namespace kinet
