#include "kinet/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "kinet/errors.hpp"
#include "kinet/png_io.hpp"
#include "kinet/rng.hpp"

namespace kinet {

namespace fs = std::filesystem;

namespace {

class SyntheticTeacher : public TeacherProvider {
public:
    SyntheticTeacher(uint64_t seed, int k_scene) : seed_(seed), k_scene_(k_scene) {
        if (k_scene < 1) throw ConfigError("synthetic_teacher: k_scene must be positive");
    }

    PseudoLabelRecord label(const std::string& video_id, int segment_index,
                            const Image& frame) const override {
        PseudoLabelRecord rec;
        rec.video_id = video_id;
        rec.segment_index = segment_index;

        const int latent = parse_scene_factor(video_id);
        if (latent >= 0 && latent < k_scene_) {
            rec.scene_class = latent;
        } else {
            rec.scene_class = static_cast<int>(seed_for(seed_, "scene_class", fnv1a(video_id)) %
                                               static_cast<uint64_t>(k_scene_));
        }

        rec.human_mask = make_mask(video_id, segment_index, frame.h, frame.w);
        return rec;
    }

private:
    // Sum of three seeded sinusoid gratings, thresholded at a seeded quantile
    // so the foreground fraction lands in [0.25, 0.55] by construction.
    Image make_mask(const std::string& video_id, int segment, int h, int w) const {
        Rng rng(seed_for(seed_, "mask", fnv1a(video_id), static_cast<uint64_t>(segment)));
        constexpr double tau = 6.283185307179586;
        double fy[3], fx[3], ph[3];
        for (int i = 0; i < 3; ++i) {
            fy[i] = rng.uniform(0.5, 3.0);
            fx[i] = rng.uniform(0.5, 3.0);
            ph[i] = rng.uniform(0.0, tau);
        }
        const double frac = rng.uniform(0.25, 0.55);

        std::vector<double> field(static_cast<size_t>(h) * w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double v = 0.0;
                for (int i = 0; i < 3; ++i) {
                    v += std::sin(tau * (fy[i] * (y + 0.5) / h + fx[i] * (x + 0.5) / w) + ph[i]);
                }
                field[static_cast<size_t>(y) * w + x] = v;
            }
        }
        std::vector<double> sorted = field;
        std::sort(sorted.begin(), sorted.end());
        const size_t cut = static_cast<size_t>(std::llround((1.0 - frac) * (sorted.size() - 1)));
        const double threshold = sorted[cut];

        Image mask(h, w, 1);
        for (size_t i = 0; i < field.size(); ++i) mask.pix[i] = field[i] > threshold ? 255 : 0;
        return mask;
    }

    uint64_t seed_;
    int k_scene_;
};

class FileTeacher : public TeacherProvider {
public:
    FileTeacher(const fs::path& manifest_path, int k_scene) {
        std::ifstream f(manifest_path);
        if (!f) throw IoError("file_teacher: cannot open manifest " + manifest_path.string());
        const fs::path root = manifest_path.parent_path();
        std::string line;
        int line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream is(line);
            std::string video_id, rel_mask;
            int segment = -1, scene = -1;
            if (!(is >> video_id >> segment >> scene >> rel_mask)) {
                throw DataError("file_teacher: bad record at line " + std::to_string(line_no) +
                                " of " + manifest_path.string());
            }
            if (scene < 0 || scene >= k_scene) {
                throw ValidationError("file_teacher: scene class " + std::to_string(scene) +
                                      " out of range [0," + std::to_string(k_scene) + ") for " +
                                      video_id);
            }
            const fs::path mask_path = root / rel_mask;
            if (!fs::exists(mask_path)) {
                throw IoError("file_teacher: missing mask file " + mask_path.string());
            }
            records_[{video_id, segment}] = {scene, mask_path};
        }
        if (records_.empty()) throw DataError("file_teacher: empty manifest " + manifest_path.string());
    }

    PseudoLabelRecord label(const std::string& video_id, int segment_index,
                            const Image& frame) const override {
        auto it = records_.find({video_id, segment_index});
        if (it == records_.end()) {
            throw DataError("file_teacher: no record for " + video_id + " segment " +
                            std::to_string(segment_index));
        }
        PseudoLabelRecord rec;
        rec.video_id = video_id;
        rec.segment_index = segment_index;
        rec.scene_class = it->second.first;
        rec.human_mask = read_png(it->second.second);
        if (rec.human_mask.channels != 1) {
            throw ValidationError("file_teacher: mask " + it->second.second.string() +
                                  " is not single-channel");
        }
        if (rec.human_mask.h != frame.h || rec.human_mask.w != frame.w) {
            throw ValidationError("file_teacher: mask extents " + std::to_string(rec.human_mask.h) +
                                  "x" + std::to_string(rec.human_mask.w) + " != frame " +
                                  std::to_string(frame.h) + "x" + std::to_string(frame.w));
        }
        return rec;
    }

private:
    std::map<std::pair<std::string, int>, std::pair<int, fs::path>> records_;
};

std::string mask_name(const std::string& video_id, int segment) {
    return video_id + "_seg" + std::to_string(segment) + ".png";
}

}  // namespace

std::unique_ptr<TeacherProvider> synthetic_teacher(uint64_t seed, int k_scene) {
    return std::make_unique<SyntheticTeacher>(seed, k_scene);
}

std::unique_ptr<TeacherProvider> file_teacher(const fs::path& manifest_path, int k_scene) {
    return std::make_unique<FileTeacher>(manifest_path, k_scene);
}

LabelCache LabelCache::open(const fs::path& dir) {
    LabelCache cache;
    cache.dir_ = dir;
    const fs::path manifest = dir / "labels.tsv";
    std::ifstream f(manifest);
    if (!f) throw IoError("label cache: cannot open " + manifest.string());
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string video_id, rel_mask;
        int segment = -1, scene = -1;
        if (!(is >> video_id >> segment >> scene >> rel_mask)) {
            throw DataError("label cache: bad record at line " + std::to_string(line_no));
        }
        cache.entries_[{video_id, segment}] = Entry{scene, dir / rel_mask};
    }
    return cache;
}

bool LabelCache::has(const std::string& video_id, int segment) const {
    return entries_.count({video_id, segment}) != 0;
}

int LabelCache::scene_class(const std::string& video_id, int segment) const {
    auto it = entries_.find({video_id, segment});
    if (it == entries_.end()) {
        throw DataError("label cache: no record for " + video_id + " segment " +
                        std::to_string(segment));
    }
    return it->second.scene_class;
}

Image LabelCache::mask(const std::string& video_id, int segment) const {
    auto it = entries_.find({video_id, segment});
    if (it == entries_.end()) {
        throw DataError("label cache: no record for " + video_id + " segment " +
                        std::to_string(segment));
    }
    return read_png(it->second.mask_path);
}

std::string LabelCache::check_complete(const Dataset& dataset, int n_seg) const {
    for (const auto& video : dataset.videos) {
        for (int s = 0; s < n_seg; ++s) {
            auto it = entries_.find({video.video_id, s});
            if (it == entries_.end()) {
                return "missing pseudo-label for " + video.video_id + " segment " + std::to_string(s);
            }
            if (!fs::exists(it->second.mask_path)) {
                return "missing mask file " + it->second.mask_path.string();
            }
        }
    }
    return {};
}

size_t write_label_cache(const fs::path& dir, const Dataset& dataset, int n_seg,
                         const TeacherProvider& teacher) {
    std::error_code ec;
    fs::create_directories(dir / "masks", ec);
    if (ec) throw IoError("label cache: cannot create " + (dir / "masks").string());

    // load whatever a previous (possibly interrupted) run left behind
    std::map<std::pair<std::string, int>, int> have;
    if (fs::exists(dir / "labels.tsv")) {
        LabelCache prev = LabelCache::open(dir);
        for (const auto& video : dataset.videos) {
            for (int s = 0; s < n_seg; ++s) {
                if (prev.has(video.video_id, s) && fs::exists(dir / "masks" / mask_name(video.video_id, s))) {
                    have[{video.video_id, s}] = prev.scene_class(video.video_id, s);
                }
            }
        }
    }

    size_t written = 0;
    std::ostringstream manifest;
    for (const auto& video : dataset.videos) {
        // the teacher needs the frame extents; segment labels use the
        // segment's center frame
        const auto centers = eval_segment_centers(static_cast<int64_t>(video.frame_paths.size()), n_seg);
        for (int s = 0; s < n_seg; ++s) {
            const std::string rel = "masks/" + mask_name(video.video_id, s);
            auto it = have.find({video.video_id, s});
            if (it != have.end()) {
                manifest << video.video_id << "\t" << s << "\t" << it->second << "\t" << rel << "\n";
                continue;
            }
            const Image frame = read_png(video.frame_paths[static_cast<size_t>(centers[static_cast<size_t>(s)])]);
            PseudoLabelRecord rec = teacher.label(video.video_id, s, frame);
            if (rec.human_mask.h != frame.h || rec.human_mask.w != frame.w) {
                throw ValidationError("teacher mask extents do not match frame for " + video.video_id);
            }
            const fs::path final_path = dir / rel;
            const fs::path tmp = final_path.string() + ".tmp";
            write_png(tmp, rec.human_mask);
            fs::rename(tmp, final_path, ec);
            if (ec) throw IoError("label cache: cannot finalize " + final_path.string());
            manifest << video.video_id << "\t" << s << "\t" << rec.scene_class << "\t" << rel << "\n";
            ++written;
        }
    }

    if (written > 0 || !fs::exists(dir / "labels.tsv")) {
        const fs::path tmp = dir / "labels.tsv.tmp";
        {
            std::ofstream f(tmp, std::ios::trunc);
            if (!f) throw IoError("label cache: cannot write " + tmp.string());
            f << manifest.str();
        }
        fs::rename(tmp, dir / "labels.tsv", ec);
        if (ec) throw IoError("label cache: cannot finalize manifest");
    }
    return written;
}

}  // namespace kinet
