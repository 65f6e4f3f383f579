#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "kinet/distill.hpp"
#include "kinet/pipeline.hpp"

namespace kinet {

// Stand-in for the external scene/human teacher models. Scene classes come
// from the latent scene factor when the video id carries one (synthetic
// datasets), otherwise from a seeded hash of the id. Masks are thresholded
// low-frequency patterns with a foreground fraction in [0.2, 0.6].
std::unique_ptr<TeacherProvider> synthetic_teacher(uint64_t seed, int k_scene);

// Serves records from an existing label cache manifest (see below).
// Missing mask files raise IoError naming the path; scene classes >= k_scene
// raise ValidationError.
std::unique_ptr<TeacherProvider> file_teacher(const std::filesystem::path& manifest_path, int k_scene);

// On-disk pseudo-label cache. Layout under the cache directory:
//   labels.tsv               video_id <TAB> segment <TAB> scene_class <TAB> mask path
//   masks/<video_id>_seg<k>.png   8-bit gray, values {0,255}
class LabelCache {
public:
    struct Entry {
        int scene_class = 0;
        std::filesystem::path mask_path;  // absolute
    };

    static LabelCache open(const std::filesystem::path& dir);

    bool has(const std::string& video_id, int segment) const;
    int scene_class(const std::string& video_id, int segment) const;
    Image mask(const std::string& video_id, int segment) const;
    size_t size() const { return entries_.size(); }

    // Verifies one record per (video, segment in [0, n_seg)) with readable
    // mask files; returns a description of the first problem, empty if
    // complete.
    std::string check_complete(const Dataset& dataset, int n_seg) const;

private:
    std::filesystem::path dir_;
    std::map<std::pair<std::string, int>, Entry> entries_;
};

// Writes the cache for a dataset by querying the teacher once per
// (video, segment). Existing records are kept (the run is resumable); each
// mask is written to a temp file and renamed so interruptions never leave a
// corrupt record. Returns the number of newly written records.
size_t write_label_cache(const std::filesystem::path& dir, const Dataset& dataset, int n_seg,
                         const TeacherProvider& teacher);

}  // namespace kinet
