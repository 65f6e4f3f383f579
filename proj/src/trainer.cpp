#include "kinet/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kinet/errors.hpp"
#include "kinet/png_io.hpp"

namespace kinet {

namespace fs = std::filesystem;

double total_loss(double l_action, double l_human, double l_scene, const LossWeights& w) {
    if (!std::isfinite(l_action) || !std::isfinite(l_human) || !std::isfinite(l_scene)) {
        throw NumericError("total_loss: non-finite component loss");
    }
    return w.action * l_action + w.human * l_human + w.scene * l_scene;
}

void OptimState::init_for(const std::vector<std::pair<std::string, Var<float>>>& params) {
    velocity.clear();
    velocity.reserve(params.size());
    for (const auto& [name, p] : params) velocity.emplace_back(p->value.shape());
}

void sgd_step(const std::vector<std::pair<std::string, Var<float>>>& params, OptimState& state,
              double lr) {
    if (state.velocity.size() != params.size()) {
        throw ShapeError("sgd_step: velocity count " + std::to_string(state.velocity.size()) +
                         " != parameter count " + std::to_string(params.size()));
    }
    const float mu = static_cast<float>(state.momentum);
    const float wd = static_cast<float>(state.weight_decay);
    const float step = static_cast<float>(lr);
    for (size_t t = 0; t < params.size(); ++t) {
        auto& p = params[t].second;
        p->ensure_grad();
        Tensor<float>& v = state.velocity[t];
        if (!v.same_shape(p->value)) {
            throw ShapeError("sgd_step: velocity shape mismatch for " + params[t].first);
        }
        const int64_t n = v.numel();
        for (int64_t i = 0; i < n; ++i) {
            v[i] = mu * v[i] + (p->grad[i] + wd * p->value[i]);
            p->value[i] -= step * v[i];
        }
    }
}

std::vector<int64_t> milestones_from_fracs(int64_t epochs, const std::vector<double>& fracs) {
    std::vector<int64_t> out;
    for (double f : fracs) out.push_back(static_cast<int64_t>(std::llround(f * static_cast<double>(epochs))));
    std::sort(out.begin(), out.end());
    return out;
}

double lr_at(int64_t epoch, double base_lr, const std::vector<int64_t>& milestones, double decay) {
    double lr = base_lr;
    for (int64_t m : milestones) {
        if (epoch >= m) lr *= decay;
    }
    return lr;
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[] = "KINETCKPT";
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void put_named_tensor(std::string& out, const std::string& name, const Tensor<float>& t) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int64_t i = 0; i < t.rank(); ++i) put_u64(out, static_cast<uint64_t>(t.dim(i)));
    for (int64_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
}

std::pair<std::string, Tensor<float>> read_named_tensor(Reader& r) {
    const uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const uint32_t rank = r.u32();
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(r.u64()));
    Tensor<float> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.f32();
    return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const fs::path& path, Model<float>& model, const OptimState* optim,
                     int64_t epoch, uint64_t seed) {
    std::string out;
    out += kMagic;
    put_u32(out, kVersion);
    const std::string cfg_text = serialize_model_config(model.config());
    put_u64(out, cfg_text.size());
    out += cfg_text;
    put_u64(out, static_cast<uint64_t>(epoch));
    put_u64(out, seed);

    const auto& params = model.parameters();
    put_u64(out, params.size());
    for (const auto& [name, p] : params) put_named_tensor(out, name, p->value);

    auto& buffers = model.buffers();
    put_u64(out, buffers.size());
    for (const auto& [name, t] : buffers) put_named_tensor(out, name, *t);

    if (optim) {
        put_u64(out, params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            put_named_tensor(out, params[i].first, optim->velocity[i]);
        }
        put_f64(out, optim->base_lr);
        put_f64(out, optim->momentum);
        put_f64(out, optim->weight_decay);
        put_f64(out, optim->lr_decay);
        put_u64(out, optim->milestones.size());
        for (int64_t m : optim->milestones) put_u64(out, static_cast<uint64_t>(m));
    } else {
        put_u64(out, 0);
    }

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("checkpoint: cannot open " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("checkpoint: short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("checkpoint: cannot finalize " + path.string());
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(buf);
    if (r.str(sizeof(kMagic) - 1) != kMagic) {
        throw DataError("checkpoint: bad magic in " + path.string());
    }
    LoadedCheckpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != kVersion) {
        throw DataError("checkpoint: unsupported version " + std::to_string(ckpt.version));
    }
    const uint64_t cfg_len = r.u64();
    ckpt.config = parse_model_config(r.str(cfg_len));
    ckpt.epoch = static_cast<int64_t>(r.u64());
    ckpt.seed = r.u64();

    for (auto* section : {&ckpt.params, &ckpt.buffers, &ckpt.velocity}) {
        const uint64_t count = r.u64();
        for (uint64_t i = 0; i < count; ++i) {
            auto [name, t] = read_named_tensor(r);
            section->emplace(std::move(name), std::move(t));
        }
    }
    if (!ckpt.velocity.empty()) {
        ckpt.base_lr = r.f64();
        ckpt.momentum = r.f64();
        ckpt.weight_decay = r.f64();
        ckpt.lr_decay = r.f64();
        const uint64_t n = r.u64();
        for (uint64_t i = 0; i < n; ++i) ckpt.milestones.push_back(static_cast<int64_t>(r.u64()));
    }
    return ckpt;
}

OptimState LoadedCheckpoint::optim_state_for(Model<float>& model) const {
    OptimState state;
    state.base_lr = base_lr;
    state.momentum = momentum;
    state.weight_decay = weight_decay;
    state.lr_decay = lr_decay;
    state.milestones = milestones;
    state.velocity.reserve(model.parameters().size());
    for (const auto& [name, p] : model.parameters()) {
        auto it = velocity.find(name);
        if (it == velocity.end()) throw DataError("checkpoint: missing velocity for " + name);
        state.velocity.push_back(it->second);
    }
    return state;
}

std::unique_ptr<Model<float>> model_from_checkpoint(const LoadedCheckpoint& ckpt) {
    auto model = std::make_unique<Model<float>>(ckpt.config, ckpt.seed);
    for (const auto& [name, p] : model->parameters()) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end()) throw DataError("checkpoint: missing parameter " + name);
        if (it->second.shape() != p->value.shape()) {
            throw DataError("checkpoint: shape mismatch for " + name);
        }
        p->value = it->second;
    }
    for (auto& [name, t] : model->buffers()) {
        auto it = ckpt.buffers.find(name);
        if (it == ckpt.buffers.end()) throw DataError("checkpoint: missing buffer " + name);
        *t = it->second;
    }
    return model;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
    std::ostringstream os;
    os << "epoch,lr,loss_total,loss_action,loss_human,loss_scene,train_top1\n";
    char buf[256];
    for (const auto& m : history) {
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      static_cast<long long>(m.epoch), m.lr, m.loss_total, m.loss_action,
                      m.loss_human, m.loss_scene, m.train_top1);
        os << buf;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

AugmentConfig make_aug_config(const RunConfig& cfg) {
    AugmentConfig a;
    a.base_h = static_cast<int>(cfg.data.base_h);
    a.base_w = static_cast<int>(cfg.data.base_w);
    a.input_h = static_cast<int>(cfg.model.input_h);
    a.input_w = static_cast<int>(cfg.model.input_w);
    return a;
}

int argmax_row(const Tensor<float>& m, int64_t row) {
    const int64_t k = m.dim(1);
    int best = 0;
    for (int64_t j = 1; j < k; ++j) {
        if (m.at(row, j) > m.at(row, best)) best = static_cast<int>(j);
    }
    return best;
}

bool in_top_k(const std::vector<double>& scores, int label, int k) {
    // rank by score, ties broken by class index
    int above = 0;
    for (size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > scores[static_cast<size_t>(label)] ||
            (scores[j] == scores[static_cast<size_t>(label)] && static_cast<int>(j) < label)) {
            ++above;
        }
    }
    return above < k;
}

}  // namespace

Tensor<float> frame_logits(Model<float>& model, const Tensor<float>& frames) {
    const bool was_training = model.train_mode();
    model.set_train(false);
    const int64_t n = frames.dim(0), k = model.config().k_action;
    Tensor<float> out({n, k});
    const int64_t chunk = 50;
    const int64_t numel = frames.numel() / n;
    for (int64_t off = 0; off < n; off += chunk) {
        const int64_t len = std::min(chunk, n - off);
        Tensor<float> part({len, frames.dim(1), frames.dim(2), frames.dim(3)});
        std::memcpy(part.data(), frames.data() + off * numel,
                    static_cast<size_t>(len * numel) * sizeof(float));
        Tape<float> tape;
        tape.recording = false;
        auto result = model.forward(tape, make_leaf(std::move(part)), /*n_seg=*/1,
                                    /*with_aux_heads=*/false);
        std::memcpy(out.data() + off * k, result.video_logits->value.data(),
                    static_cast<size_t>(len * k) * sizeof(float));
    }
    model.set_train(was_training);
    return out;
}

EvalResult evaluate(Model<float>& model, const Dataset& dataset, const RunConfig& cfg,
                    const std::string& protocol, EvalDetail* detail) {
    if (dataset.n_classes > model.config().k_action) {
        throw ValidationError("evaluate: dataset has " + std::to_string(dataset.n_classes) +
                              " classes but the checkpoint supports " +
                              std::to_string(model.config().k_action));
    }
    if (protocol != "full250" && protocol != "fast") {
        throw ConfigError("evaluate: unknown protocol '" + protocol + "'");
    }
    const AugmentConfig aug = make_aug_config(cfg);
    const int64_t k = model.config().k_action;
    const int top_k = static_cast<int>(std::min<int64_t>(5, k));

    EvalResult res;
    res.n_videos = static_cast<int64_t>(dataset.videos.size());
    int64_t hit1 = 0, hit5 = 0;
    for (const auto& video : dataset.videos) {
        std::vector<double> scores(static_cast<size_t>(k), 0.0);
        if (protocol == "full250") {
            ViewBatch batch = inference_views(video, aug, cfg.eval.n_eval_seg);
            res.views_per_video = batch.frames.dim(0);
            Tensor<float> logits = frame_logits(model, batch.frames);
            Tensor<float> grouped({batch.n_segments, batch.views_per_segment, k});
            std::memcpy(grouped.data(), logits.data(),
                        static_cast<size_t>(logits.numel()) * sizeof(float));
            scores = consensus(grouped, cfg.eval.window);
            if (detail) {
                detail->view_logits.push_back(std::move(grouped));
                detail->final_scores.push_back(scores);
            }
        } else {
            const int64_t n_seg = model.config().n_seg;
            res.views_per_video = n_seg;
            const auto centers = eval_segment_centers(static_cast<int64_t>(video.frame_paths.size()), n_seg);
            Tensor<float> frames({n_seg, 3, aug.input_h, aug.input_w});
            const int64_t numel = 3LL * aug.input_h * aug.input_w;
            for (int64_t s = 0; s < n_seg; ++s) {
                Tensor<float> t = eval_center_view(
                    read_png(video.frame_paths[static_cast<size_t>(centers[static_cast<size_t>(s)])]), aug);
                std::memcpy(frames.data() + s * numel, t.data(), static_cast<size_t>(numel) * sizeof(float));
            }
            Tensor<float> logits = frame_logits(model, frames);
            for (int64_t s = 0; s < n_seg; ++s) {
                for (int64_t j = 0; j < k; ++j) {
                    scores[static_cast<size_t>(j)] += static_cast<double>(logits.at(s, j));
                }
            }
            for (auto& v : scores) v /= static_cast<double>(n_seg);
            if (detail) detail->final_scores.push_back(scores);
        }

        int best = 0;
        for (int64_t j = 1; j < k; ++j) {
            if (scores[static_cast<size_t>(j)] > scores[static_cast<size_t>(best)]) best = static_cast<int>(j);
        }
        if (best == video.action_label) ++hit1;
        if (in_top_k(scores, video.action_label, top_k)) ++hit5;
    }
    res.top1 = static_cast<double>(hit1) / static_cast<double>(res.n_videos);
    res.top5 = static_cast<double>(hit5) / static_cast<double>(res.n_videos);
    return res;
}

TrainResult train(const RunConfig& cfg, const Dataset& dataset, const LabelCache* labels,
                  uint64_t seed, const fs::path& out_dir) {
    cfg.validate();
    const int64_t n_seg = cfg.model.n_seg;
    const bool need_scene = cfg.optim.lambda_scene > 0.0;
    const bool need_human = cfg.optim.lambda_human > 0.0;
    const bool need_aux_heads = need_scene || need_human;

    if (dataset.n_classes > cfg.model.k_action) {
        throw ConfigError("train: dataset has " + std::to_string(dataset.n_classes) +
                          " classes but model.k_action is " + std::to_string(cfg.model.k_action));
    }
    if (need_aux_heads) {
        if (!labels) {
            throw DataError("train: auxiliary losses enabled but no pseudo-label cache given; "
                            "run the pseudolabel command first");
        }
        const std::string problem = labels->check_complete(dataset, static_cast<int>(n_seg));
        if (!problem.empty()) {
            throw DataError("train: incomplete pseudo-label cache (" + problem +
                            "); run the pseudolabel command first");
        }
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("train: cannot create output directory " + out_dir.string());

    const AugmentConfig aug = make_aug_config(cfg);

    // decode every frame once; all augmentation happens on the base canvas
    std::vector<std::vector<Image>> base_frames(dataset.videos.size());
    for (size_t v = 0; v < dataset.videos.size(); ++v) {
        base_frames[v].reserve(dataset.videos[v].frame_paths.size());
        for (const auto& p : dataset.videos[v].frame_paths) {
            base_frames[v].push_back(resize_bilinear(read_png(p), aug.base_h, aug.base_w));
        }
    }
    // pseudo-label masks, decoded once, kept at frame resolution
    std::map<std::pair<std::string, int>, Image> mask_cache;
    if (need_human) {
        for (const auto& video : dataset.videos) {
            for (int s = 0; s < n_seg; ++s) {
                mask_cache[{video.video_id, s}] = labels->mask(video.video_id, s);
            }
        }
    }
    if (need_scene) {
        for (const auto& video : dataset.videos) {
            for (int s = 0; s < n_seg; ++s) {
                const int sc = labels->scene_class(video.video_id, s);
                if (sc < 0 || sc >= cfg.model.k_scene) {
                    throw ValidationError("train: scene pseudo-label " + std::to_string(sc) +
                                          " out of range for " + video.video_id);
                }
            }
        }
    }

    Model<float> model(cfg.model, seed);
    model.set_train(true);
    OptimState optim;
    optim.base_lr = cfg.optim.lr;
    optim.momentum = cfg.optim.momentum;
    optim.weight_decay = cfg.optim.weight_decay;
    optim.lr_decay = cfg.optim.lr_decay;
    optim.milestones = milestones_from_fracs(cfg.optim.epochs, cfg.optim.milestone_fracs);
    optim.init_for(model.parameters());
    const LossWeights weights{cfg.optim.lambda_action, cfg.optim.lambda_human, cfg.optim.lambda_scene};

    const int64_t n_videos = static_cast<int64_t>(dataset.videos.size());
    const int64_t in_h = cfg.model.input_h, in_w = cfg.model.input_w;
    const int64_t frame_numel = 3 * in_h * in_w;

    TrainResult result;
    int64_t final_epoch = 0;
    for (int64_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const double lr = lr_at(epoch, optim.base_lr, optim.milestones, optim.lr_decay);

        std::vector<int64_t> order(static_cast<size_t>(n_videos));
        for (int64_t i = 0; i < n_videos; ++i) order[static_cast<size_t>(i)] = i;
        Rng shuffle_rng(seed_for(seed, "shuffle", static_cast<uint64_t>(epoch)));
        for (int64_t i = n_videos - 1; i > 0; --i) {
            const int64_t j = shuffle_rng.uniform_int(i + 1);
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        double sum_total = 0, sum_action = 0, sum_human = 0, sum_scene = 0;
        int64_t correct = 0;
        for (int64_t start = 0; start < n_videos; start += cfg.optim.batch_size) {
            const int64_t bsz = std::min(cfg.optim.batch_size, n_videos - start);
            Tensor<float> frames({bsz * n_seg, 3, in_h, in_w});
            Tensor<uint8_t> masks;
            if (need_human) masks = Tensor<uint8_t>({bsz * n_seg, in_h, in_w});
            std::vector<int> scene_labels(need_scene ? static_cast<size_t>(bsz * n_seg) : 0);
            std::vector<int> action_labels(static_cast<size_t>(bsz));

            for (int64_t b = 0; b < bsz; ++b) {
                const int64_t v = order[static_cast<size_t>(start + b)];
                const VideoRecord& video = dataset.videos[static_cast<size_t>(v)];
                action_labels[static_cast<size_t>(b)] = video.action_label;

                Rng sample_rng(seed_for(seed, "sample", fnv1a(video.video_id), static_cast<uint64_t>(epoch)));
                const auto indices = sample_train_segments(video, n_seg, sample_rng);
                Rng aug_rng(seed_for(seed, "augment", fnv1a(video.video_id), static_cast<uint64_t>(epoch)));
                for (int64_t s = 0; s < n_seg; ++s) {
                    ViewGeometry geom;
                    Tensor<float> t = train_augment(
                        base_frames[static_cast<size_t>(v)][static_cast<size_t>(indices[static_cast<size_t>(s)])],
                        aug, aug_rng, &geom);
                    std::memcpy(frames.data() + (b * n_seg + s) * frame_numel, t.data(),
                                static_cast<size_t>(frame_numel) * sizeof(float));
                    if (need_human) {
                        // labels ride through the same crop/flip as the frame
                        const Image& m = mask_cache.at({video.video_id, static_cast<int>(s)});
                        Image view = apply_geometry_nearest(m, geom, static_cast<int>(in_h),
                                                            static_cast<int>(in_w));
                        uint8_t* dst = masks.data() + (b * n_seg + s) * in_h * in_w;
                        for (int64_t i = 0; i < in_h * in_w; ++i) dst[i] = view.pix[static_cast<size_t>(i)] > 127 ? 1 : 0;
                    }
                    if (need_scene) {
                        scene_labels[static_cast<size_t>(b * n_seg + s)] =
                            labels->scene_class(video.video_id, static_cast<int>(s));
                    }
                }
            }

            Tape<float> tape;
            auto input = make_leaf(std::move(frames));
            auto out = model.forward(tape, input, n_seg, need_aux_heads);

            auto l_action = softmax_cross_entropy(tape, out.video_logits, action_labels);
            Var<float> l_human, l_scene;
            std::vector<Var<float>> terms = {l_action};
            std::vector<float> coeffs = {static_cast<float>(weights.action)};
            if (need_human) {
                l_human = human_loss(tape, out.human_logits, masks);
                terms.push_back(l_human);
                coeffs.push_back(static_cast<float>(weights.human));
            }
            if (need_scene) {
                l_scene = scene_loss(tape, out.scene_logits, scene_labels);
                terms.push_back(l_scene);
                coeffs.push_back(static_cast<float>(weights.scene));
            }
            const double la = l_action->value[0];
            const double lh = need_human ? l_human->value[0] : 0.0;
            const double ls = need_scene ? l_scene->value[0] : 0.0;
            const double lt = total_loss(la, lh, ls, weights);  // validates finiteness

            auto total = terms.size() == 1 ? l_action : weighted_sum(tape, terms, coeffs);
            model.zero_grad();
            tape.backward(total);
            sgd_step(model.parameters(), optim, lr);

            for (int64_t b = 0; b < bsz; ++b) {
                if (argmax_row(out.video_logits->value, b) == action_labels[static_cast<size_t>(b)]) ++correct;
            }
            const double w = static_cast<double>(bsz);
            sum_total += lt * w;
            sum_action += la * w;
            sum_human += lh * w;
            sum_scene += ls * w;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.loss_total = sum_total / static_cast<double>(n_videos);
        m.loss_action = sum_action / static_cast<double>(n_videos);
        m.loss_human = sum_human / static_cast<double>(n_videos);
        m.loss_scene = sum_scene / static_cast<double>(n_videos);
        m.train_top1 = static_cast<double>(correct) / static_cast<double>(n_videos);
        result.history.push_back(m);
        final_epoch = epoch;
        if (cfg.optim.target_top1 > 0.0 && m.train_top1 >= cfg.optim.target_top1) break;
    }

    // summary evaluation on the training set, fast protocol
    EvalResult ev = evaluate(model, dataset, cfg, "fast");
    result.final_top1 = ev.top1;
    result.final_top5 = ev.top5;

    result.checkpoint_path = out_dir / "model.ckpt";
    save_checkpoint(result.checkpoint_path, model, &optim, final_epoch + 1, seed);

    result.metrics_path = out_dir / "metrics.csv";
    {
        std::ofstream f(result.metrics_path, std::ios::trunc);
        if (!f) throw IoError("train: cannot write " + result.metrics_path.string());
        f << metrics_csv(result.history);
    }
    result.summary_path = out_dir / "summary.txt";
    {
        char buf[256];
        std::ofstream f(result.summary_path, std::ios::trunc);
        if (!f) throw IoError("train: cannot write " + result.summary_path.string());
        std::snprintf(buf, sizeof(buf), "top1 = %.6f\ntop5 = %.6f\nconfig_hash = %016llx\nseed = %llu\n",
                      result.final_top1, result.final_top5,
                      static_cast<unsigned long long>(config_hash(cfg)),
                      static_cast<unsigned long long>(seed));
        f << buf;
    }
    return result;
}

}  // namespace kinet
