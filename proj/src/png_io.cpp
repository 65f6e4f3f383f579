#include "kinet/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "kinet/errors.hpp"

namespace kinet {
namespace {

constexpr uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const uint8_t* data, size_t len) {
    put_u32(out, static_cast<uint32_t>(len));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + start, static_cast<uInt>(4 + len));
    put_u32(out, crc);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.empty() || (img.channels != 1 && img.channels != 3)) {
        throw IoError("write_png: need a non-empty 1- or 3-channel image for " + path.string());
    }
    const size_t row = static_cast<size_t>(img.w) * img.channels;
    std::vector<uint8_t> raw((row + 1) * img.h);
    for (int y = 0; y < img.h; ++y) {
        raw[(row + 1) * y] = 0;  // filter: none
        std::memcpy(raw.data() + (row + 1) * y + 1, img.pix.data() + row * y, row);
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw IoError("write_png: deflate failed for " + path.string());
    }

    std::vector<uint8_t> out(kSignature, kSignature + 8);
    uint8_t ihdr[13];
    ihdr[0] = static_cast<uint8_t>(img.w >> 24);
    ihdr[1] = static_cast<uint8_t>(img.w >> 16);
    ihdr[2] = static_cast<uint8_t>(img.w >> 8);
    ihdr[3] = static_cast<uint8_t>(img.w);
    ihdr[4] = static_cast<uint8_t>(img.h >> 24);
    ihdr[5] = static_cast<uint8_t>(img.h >> 16);
    ihdr[6] = static_cast<uint8_t>(img.h >> 8);
    ihdr[7] = static_cast<uint8_t>(img.h);
    ihdr[8] = 8;                                     // bit depth
    ihdr[9] = img.channels == 1 ? 0 : 2;             // gray / rgb
    ihdr[10] = ihdr[11] = ihdr[12] = 0;              // compression, filter, interlace
    append_chunk(out, "IHDR", ihdr, sizeof(ihdr));
    append_chunk(out, "IDAT", comp.data(), comp_len);
    append_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("write_png: cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write_png: short write to " + path.string());
}

Image read_png(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_png: cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
        throw DataError("read_png: not a PNG file: " + path.string());
    }

    int w = 0, h = 0, color_type = -1;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 12 <= bytes.size()) {
        const uint32_t len = get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw DataError("read_png: truncated chunk in " + path.string());
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("read_png: bad IHDR in " + path.string());
            w = static_cast<int>(get_u32(data));
            h = static_cast<int>(get_u32(data + 4));
            const int depth = data[8];
            color_type = data[9];
            if (depth != 8) throw DataError("read_png: only 8-bit depth supported: " + path.string());
            if (data[12] != 0) throw DataError("read_png: interlaced PNG unsupported: " + path.string());
            if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6) {
                throw DataError("read_png: unsupported color type " + std::to_string(color_type) +
                                ": " + path.string());
            }
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0 || idat.empty()) throw DataError("read_png: missing image data in " + path.string());

    const int src_ch = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
    const size_t row = static_cast<size_t>(w) * src_ch;
    std::vector<uint8_t> raw((row + 1) * h);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        throw DataError("read_png: inflate failed for " + path.string());
    }

    // unfilter in place into a packed buffer
    std::vector<uint8_t> packed(row * h);
    const int bpp = src_ch;
    for (int y = 0; y < h; ++y) {
        const uint8_t filter = raw[(row + 1) * y];
        const uint8_t* src = raw.data() + (row + 1) * y + 1;
        uint8_t* dst = packed.data() + row * y;
        const uint8_t* up = y > 0 ? packed.data() + row * (y - 1) : nullptr;
        for (size_t i = 0; i < row; ++i) {
            const int left = i >= static_cast<size_t>(bpp) ? dst[i - bpp] : 0;
            const int above = up ? up[i] : 0;
            const int corner = (up && i >= static_cast<size_t>(bpp)) ? up[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += above; break;
                case 3: v += (left + above) / 2; break;
                case 4: v += paeth(left, above, corner); break;
                default: throw DataError("read_png: bad filter type in " + path.string());
            }
            dst[i] = static_cast<uint8_t>(v & 0xff);
        }
    }

    const int out_ch = src_ch <= 2 ? 1 : 3;
    Image img(h, w, out_ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const uint8_t* p = packed.data() + row * y + static_cast<size_t>(x) * src_ch;
            for (int c = 0; c < out_ch; ++c) img.at(y, x, c) = p[c];
        }
    }
    return img;
}

}  // namespace kinet
