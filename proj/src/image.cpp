#include "kinet/image.hpp"

#include <algorithm>
#include <cmath>

#include "kinet/errors.hpp"

namespace kinet {

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    if (src.empty()) throw DataError("resize_bilinear: empty image");
    if (src.h == out_h && src.w == out_w) return src;
    Image dst(out_h, out_w, src.channels);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.h - 1);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.w - 1);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            for (int c = 0; c < src.channels; ++c) {
                const double top = (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
                const double bot = (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
                const double v = (1.0 - wy) * top + wy * bot;
                dst.at(y, x, c) = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return dst;
}

Image resize_nearest(const Image& src, int out_h, int out_w) {
    if (src.empty()) throw DataError("resize_nearest: empty image");
    if (src.h == out_h && src.w == out_w) return src;
    Image dst(out_h, out_w, src.channels);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(src.h - 1, (2 * y + 1) * src.h / (2 * out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(src.w - 1, (2 * x + 1) * src.w / (2 * out_w));
            for (int c = 0; c < src.channels; ++c) dst.at(y, x, c) = src.at(sy, sx, c);
        }
    }
    return dst;
}

Image crop(const Image& src, int y, int x, int h, int w) {
    if (y < 0 || x < 0 || y + h > src.h || x + w > src.w || h <= 0 || w <= 0) {
        throw DataError("crop: window (" + std::to_string(y) + "," + std::to_string(x) + "," +
                        std::to_string(h) + "," + std::to_string(w) + ") outside " +
                        std::to_string(src.h) + "x" + std::to_string(src.w));
    }
    Image dst(h, w, src.channels);
    for (int yy = 0; yy < h; ++yy) {
        for (int xx = 0; xx < w; ++xx) {
            for (int c = 0; c < src.channels; ++c) dst.at(yy, xx, c) = src.at(y + yy, x + xx, c);
        }
    }
    return dst;
}

Image hflip(const Image& src) {
    Image dst(src.h, src.w, src.channels);
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            for (int c = 0; c < src.channels; ++c) dst.at(y, x, c) = src.at(y, src.w - 1 - x, c);
        }
    }
    return dst;
}

Image apply_geometry_nearest(const Image& src, const ViewGeometry& g, int out_h, int out_w) {
    Image v = resize_nearest(crop(src, g.crop_y, g.crop_x, g.crop_h, g.crop_w), out_h, out_w);
    return g.hflip ? hflip(v) : v;
}

Tensor<float> to_input_tensor(const Image& frame, const ViewGeometry& g, int out_h, int out_w,
                              const float mean[3], const float stddev[3]) {
    if (frame.channels != 3) throw DataError("to_input_tensor: expected RGB frame");
    Image cropped = crop(frame, g.crop_y, g.crop_x, g.crop_h, g.crop_w);

    // bilinear resample straight into float; flip is applied last so mirrored
    // views are exact reflections of their partners
    Tensor<float> out({3, out_h, out_w});
    const double sy = static_cast<double>(cropped.h) / out_h;
    const double sx = static_cast<double>(cropped.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, cropped.h - 1);
        const int y1 = std::min(y0 + 1, cropped.h - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, cropped.w - 1);
            const int x1 = std::min(x0 + 1, cropped.w - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            const int ox = g.hflip ? out_w - 1 - x : x;
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - wx) * cropped.at(y0, x0, c) + wx * cropped.at(y0, x1, c);
                const double bot = (1.0 - wx) * cropped.at(y1, x0, c) + wx * cropped.at(y1, x1, c);
                const double v = ((1.0 - wy) * top + wy * bot) / 255.0;
                out[(c * out_h + y) * out_w + ox] =
                    (static_cast<float>(v) - mean[c]) / stddev[c];
            }
        }
    }
    return out;
}

}  // namespace kinet
