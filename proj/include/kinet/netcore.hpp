#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "kinet/akg.hpp"
#include "kinet/cbi.hpp"
#include "kinet/ops.hpp"
#include "kinet/rng.hpp"

namespace kinet {

// Architecture + head configuration. Stages are named res2..res5 by analogy
// with the usual residual-network stage numbering.
struct ModelConfig {
    int64_t n_seg = 3;
    int64_t stem_channels = 8;
    std::vector<int64_t> branch_channels = {8, 16, 32, 32};
    int64_t n_stages = 4;
    std::vector<std::string> cbi_attach = {"res4", "res5"};
    RelationKind relation_kind = RelationKind::kDot;
    int64_t d_embed = 0;  // 0 -> d/2 for the embedded relation kinds
    int64_t d = 32;       // must equal branch_channels.back()
    int64_t k_action = 4;
    int64_t k_scene = 8;
    int64_t input_h = 56;
    int64_t input_w = 56;
    bool use_akg = true;
    MaskMode mask_mode = MaskMode::kLiteral;
    GcnActivation gcn_activation = GcnActivation::kRelu;

    std::string stage_name(int64_t i) const { return "res" + std::to_string(i + 2); }

    int64_t embed_width() const { return d_embed > 0 ? d_embed : std::max<int64_t>(1, d / 2); }

    void validate() const {
        if (n_seg < 1) throw ConfigError("model.n_seg: must be >= 1, got " + std::to_string(n_seg));
        if (n_stages < 1) throw ConfigError("model.n_stages: must be >= 1");
        if (static_cast<int64_t>(branch_channels.size()) != n_stages) {
            throw ConfigError("model.branch_channels: expected " + std::to_string(n_stages) +
                              " entries, got " + std::to_string(branch_channels.size()));
        }
        for (int64_t c : branch_channels) {
            if (c < 1) throw ConfigError("model.branch_channels: entries must be positive");
        }
        if (stem_channels < 1) throw ConfigError("model.stem_channels: must be positive");
        if (d != branch_channels.back()) {
            throw ConfigError("model.d: must equal last-stage channel width " +
                              std::to_string(branch_channels.back()) + ", got " + std::to_string(d));
        }
        std::set<std::string> known;
        for (int64_t i = 0; i < n_stages; ++i) known.insert(stage_name(i));
        for (const auto& s : cbi_attach) {
            if (!known.count(s)) throw ConfigError("model.cbi_attach: unknown stage '" + s + "'");
        }
        if (k_action < 1) throw ConfigError("model.k_action: must be positive");
        if (k_scene < 1) throw ConfigError("model.k_scene: must be positive");
        if (input_h < 8 || input_w < 8) throw ConfigError("model.input_h/input_w: must be >= 8");
    }
};

// The three-branch network: a shared two-layer stem (total stride 4), four
// branch-private residual stages per branch, cross-branch fusion at the
// configured stages, graph reasoning over pooled features, and three heads.
template <typename T>
class Model {
public:
    struct ConvLayer {
        Var<T> w;
        int64_t stride = 1;
        int64_t pad = 1;
    };
    struct Block {
        ConvLayer c1;
        BatchNorm<T> bn1;
        ConvLayer c2;
        BatchNorm<T> bn2;
        bool has_down = false;
        ConvLayer down;
        BatchNorm<T> down_bn;
    };
    struct Stage {
        std::string name;
        Block b0, b1;
    };
    struct StageFeatures {
        Var<T> action, scene, human;
    };
    struct Output {
        Var<T> video_logits;    // [B, k_action]
        Var<T> segment_logits;  // [B*n_seg, k_action]
        Var<T> scene_logits;    // [B*n_seg, k_scene], null when aux heads are off
        Var<T> human_logits;    // [B*n_seg, 2, h, w], null when aux heads are off
        Var<T> action_pooled, scene_pooled, human_pooled;  // [B*n_seg, d]
        StageFeatures final_maps;
    };

    Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
        cfg_.validate();
        build();
    }
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    uint64_t seed() const { return seed_; }

    void set_train(bool training) { train_ = training; }
    bool train_mode() const { return train_; }

    const std::vector<std::pair<std::string, Var<T>>>& parameters() const { return params_; }
    const std::vector<std::pair<std::string, Tensor<T>*>>& buffers() { return buffers_; }

    Var<T> parameter(const std::string& name) const {
        for (const auto& [n, v] : params_) {
            if (n == name) return v;
        }
        throw ConfigError("unknown parameter: " + name);
    }

    void zero_grad() {
        for (auto& [name, p] : params_) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    void reset_touch_counters() {
        for (auto& [name, p] : params_) p->forward_touches = 0;
    }

    uint64_t touches_with_prefix(const std::string& prefix) const {
        uint64_t n = 0;
        for (const auto& [name, p] : params_) {
            if (name.rfind(prefix, 0) == 0) n += p->forward_touches;
        }
        return n;
    }

    Var<T> forward_stem(Tape<T>& tape, const Var<T>& frames) {
        require_rank(frames->value, 4, "stem input");
        if (frames->value.dim(1) != 3 || frames->value.dim(2) != cfg_.input_h ||
            frames->value.dim(3) != cfg_.input_w) {
            throw ShapeError("stem input: expected (*,3," + std::to_string(cfg_.input_h) + "," +
                             std::to_string(cfg_.input_w) + "), got " + shape_str(frames->value.shape()));
        }
        auto x = relu(tape, batch_norm2d(tape, conv2d(tape, frames, stem_c1_.w, Var<T>{}, 2, 1),
                                         stem_bn1_, train_));
        return relu(tape, batch_norm2d(tape, conv2d(tape, x, stem_c2_.w, Var<T>{}, 2, 1), stem_bn2_,
                                       train_));
    }

    // Per-stage feature triples. When run_aux is false only the action branch
    // is evaluated (cbi_attach must be empty in that case). Fusion replaces
    // the action map at each attach point before the next stage runs.
    std::vector<StageFeatures> forward_branches(Tape<T>& tape, const Var<T>& stem_out, bool run_aux) {
        if (!run_aux && !cfg_.cbi_attach.empty()) {
            throw ConfigError("forward_branches: cbi_attach requires auxiliary branches");
        }
        std::vector<StageFeatures> out;
        Var<T> a = stem_out, s = stem_out, h = stem_out;
        for (int64_t i = 0; i < cfg_.n_stages; ++i) {
            const std::string name = cfg_.stage_name(i);
            a = run_stage(tape, branch_[0].at(static_cast<size_t>(i)), a);
            if (run_aux) {
                s = run_stage(tape, branch_[1].at(static_cast<size_t>(i)), s);
                h = run_stage(tape, branch_[2].at(static_cast<size_t>(i)), h);
                if (cbi_.count(name)) a = cbi_forward(tape, a, s, h, cbi_.at(name), train_);
            }
            out.push_back({a, run_aux ? s : Var<T>{}, run_aux ? h : Var<T>{}});
        }
        return out;
    }

    // frames: [B*n_seg, 3, H, W] with segment-major layout per video.
    Output forward(Tape<T>& tape, const Var<T>& frames, int64_t n_seg, bool with_aux_heads) {
        if (frames->value.dim(0) % n_seg != 0) {
            throw ShapeError("forward: batch " + std::to_string(frames->value.dim(0)) +
                             " not divisible by n_seg " + std::to_string(n_seg));
        }
        const int64_t n_videos = frames->value.dim(0) / n_seg;
        const bool run_aux = with_aux_heads || cfg_.use_akg || !cfg_.cbi_attach.empty();

        Output out;
        auto stem_out = forward_stem(tape, frames);
        auto stages = forward_branches(tape, stem_out, run_aux);
        out.final_maps = stages.back();

        out.action_pooled = global_avg_pool(tape, out.final_maps.action);
        if (run_aux) {
            out.scene_pooled = global_avg_pool(tape, out.final_maps.scene);
            out.human_pooled = global_avg_pool(tape, out.final_maps.human);
        }

        Var<T> refined;
        if (cfg_.use_akg) {
            const Tensor<T> mask = edge_mask<T>(n_seg, cfg_.mask_mode);
            std::vector<Var<T>> per_video;
            per_video.reserve(static_cast<size_t>(n_videos));
            for (int64_t v = 0; v < n_videos; ++v) {
                auto av = slice_rows(tape, out.action_pooled, v * n_seg, (v + 1) * n_seg);
                auto sv = slice_rows(tape, out.scene_pooled, v * n_seg, (v + 1) * n_seg);
                auto hv = slice_rows(tape, out.human_pooled, v * n_seg, (v + 1) * n_seg);
                auto nodes = build_nodes(tape, av, sv, hv);
                auto scores = relation_scores(tape, nodes, relation_);
                auto graph = normalize_graph(tape, scores, mask);
                auto z = gcn_layer(tape, graph, nodes, gcn_);
                per_video.push_back(select_action_nodes(tape, z, n_seg));
            }
            refined = per_video.size() == 1 ? per_video[0] : concat_rows(tape, per_video);
        } else {
            refined = out.action_pooled;
        }

        out.segment_logits = linear(tape, refined, head_action_w_, head_action_b_);
        out.video_logits = mean_rows_grouped(tape, out.segment_logits, n_seg);

        if (with_aux_heads) {
            out.scene_logits = linear(tape, out.scene_pooled, head_scene_w_, head_scene_b_);
            out.human_logits = conv2d(tape, out.final_maps.human, head_human_w_, head_human_b_, 1, 0);
        }
        return out;
    }

    Var<T> scene_head_weight() const { return head_scene_w_; }
    Var<T> scene_head_bias() const { return head_scene_b_; }
    Var<T> human_head_weight() const { return head_human_w_; }
    Var<T> human_head_bias() const { return head_human_b_; }

    RelationParams<T>& relation_params() { return relation_; }
    GcnParams<T>& gcn_params() { return gcn_; }
    CbiParams<T>& cbi_params(const std::string& stage) { return cbi_.at(stage); }

private:
    Var<T> run_stage(Tape<T>& tape, Stage& st, const Var<T>& x) {
        return run_block(tape, st.b1, run_block(tape, st.b0, x));
    }

    Var<T> run_block(Tape<T>& tape, Block& blk, const Var<T>& x) {
        auto y = relu(tape, batch_norm2d(tape, conv2d(tape, x, blk.c1.w, Var<T>{}, blk.c1.stride, 1),
                                         blk.bn1, train_));
        y = batch_norm2d(tape, conv2d(tape, y, blk.c2.w, Var<T>{}, 1, 1), blk.bn2, train_);
        Var<T> shortcut = x;
        if (blk.has_down) {
            shortcut = batch_norm2d(tape, conv2d(tape, x, blk.down.w, Var<T>{}, blk.down.stride, 0),
                                    blk.down_bn, train_);
        }
        return relu(tape, add(tape, y, shortcut));
    }

    Var<T> make_param(const std::string& name, Shape shape, double he_fan_in, double fill = 0.0) {
        Tensor<T> t(shape);
        if (he_fan_in > 0.0) {
            Rng rng(seed_for(seed_, name));
            const double stddev = std::sqrt(2.0 / he_fan_in);
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
        } else if (fill != 0.0) {
            t.fill(static_cast<T>(fill));
        }
        auto v = make_leaf(std::move(t), true, name);
        params_.emplace_back(name, v);
        return v;
    }

    Var<T> make_param_scaled_normal(const std::string& name, Shape shape, double stddev) {
        Tensor<T> t(shape);
        Rng rng(seed_for(seed_, name));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
        auto v = make_leaf(std::move(t), true, name);
        params_.emplace_back(name, v);
        return v;
    }

    BatchNorm<T> make_bn(const std::string& prefix, int64_t channels) {
        BatchNorm<T> bn;
        bn.gamma = make_param(prefix + "/gamma", {channels}, 0.0, 1.0);
        bn.beta = make_param(prefix + "/beta", {channels}, 0.0, 0.0);
        bn.running_mean = Tensor<T>({channels});
        bn.running_var = Tensor<T>::full({channels}, T(1));
        return bn;
    }

    void register_bn_buffers(const std::string& prefix, BatchNorm<T>& bn) {
        buffers_.emplace_back(prefix + "/running_mean", &bn.running_mean);
        buffers_.emplace_back(prefix + "/running_var", &bn.running_var);
    }

    ConvLayer make_conv(const std::string& name, int64_t c_out, int64_t c_in, int64_t k, int64_t stride) {
        ConvLayer c;
        c.w = make_param(name + "/weight", {c_out, c_in, k, k}, static_cast<double>(c_in * k * k));
        c.stride = stride;
        c.pad = k / 2;
        return c;
    }

    Block make_block(const std::string& prefix, int64_t c_in, int64_t c_out, int64_t stride) {
        Block blk;
        blk.c1 = make_conv(prefix + "/conv1", c_out, c_in, 3, stride);
        blk.bn1 = make_bn(prefix + "/bn1", c_out);
        blk.c2 = make_conv(prefix + "/conv2", c_out, c_out, 3, 1);
        blk.bn2 = make_bn(prefix + "/bn2", c_out);
        if (stride != 1 || c_in != c_out) {
            blk.has_down = true;
            blk.down = make_conv(prefix + "/downsample/conv", c_out, c_in, 1, stride);
            blk.down_bn = make_bn(prefix + "/downsample/bn", c_out);
        }
        return blk;
    }

    void register_block_buffers(const std::string& prefix, Block& blk) {
        register_bn_buffers(prefix + "/bn1", blk.bn1);
        register_bn_buffers(prefix + "/bn2", blk.bn2);
        if (blk.has_down) register_bn_buffers(prefix + "/downsample/bn", blk.down_bn);
    }

    void build() {
        static const char* kBranchNames[3] = {"action", "scene", "human"};

        stem_c1_ = make_conv("stem/conv1", cfg_.stem_channels, 3, 3, 2);
        stem_bn1_ = make_bn("stem/bn1", cfg_.stem_channels);
        stem_c2_ = make_conv("stem/conv2", cfg_.stem_channels, cfg_.stem_channels, 3, 2);
        stem_bn2_ = make_bn("stem/bn2", cfg_.stem_channels);

        for (int br = 0; br < 3; ++br) {
            int64_t c_in = cfg_.stem_channels;
            for (int64_t i = 0; i < cfg_.n_stages; ++i) {
                const int64_t c_out = cfg_.branch_channels[static_cast<size_t>(i)];
                const int64_t stride = i == 0 ? 1 : 2;
                const std::string prefix =
                    std::string(kBranchNames[br]) + "/" + cfg_.stage_name(i);
                Stage st;
                st.name = cfg_.stage_name(i);
                st.b0 = make_block(prefix + "/block0", c_in, c_out, stride);
                st.b1 = make_block(prefix + "/block1", c_out, c_out, 1);
                branch_[br].push_back(std::move(st));
                c_in = c_out;
            }
        }

        for (int64_t i = 0; i < cfg_.n_stages; ++i) {
            const std::string name = cfg_.stage_name(i);
            bool attached = false;
            for (const auto& s : cfg_.cbi_attach) attached = attached || s == name;
            if (!attached) continue;
            const int64_t c = cfg_.branch_channels[static_cast<size_t>(i)];
            CbiParams<T> p;
            p.bn_scene = make_bn("cbi/" + name + "/bn_scene", c);
            p.bn_human = make_bn("cbi/" + name + "/bn_human", c);
            p.reduce_w = make_param("cbi/" + name + "/reduce/weight", {c, 3 * c, 1, 1}, 0.0);
            for (int64_t ch = 0; ch < c; ++ch) p.reduce_w->value.at(ch, ch, 0, 0) = T(1);
            p.reduce_b = make_param("cbi/" + name + "/reduce/bias", {c}, 0.0);
            cbi_.emplace(name, std::move(p));
        }

        relation_.kind = cfg_.relation_kind;
        if (cfg_.relation_kind != RelationKind::kDot) {
            const int64_t de = cfg_.embed_width();
            const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
            relation_.theta = make_param_scaled_normal("akg/relation/theta", {cfg_.d, de}, stddev);
            relation_.phi = make_param_scaled_normal("akg/relation/phi", {cfg_.d, de}, stddev);
            if (cfg_.relation_kind == RelationKind::kConcat) {
                relation_.w_cat = make_param_scaled_normal("akg/relation/w_cat", {2 * de},
                                                           1.0 / std::sqrt(2.0 * static_cast<double>(de)));
            }
        }
        gcn_.weight = make_param("akg/gcn/weight", {cfg_.d, cfg_.d}, 0.0);
        for (int64_t i = 0; i < cfg_.d; ++i) gcn_.weight->value.at(i, i) = T(1);
        gcn_.activation = cfg_.gcn_activation;

        head_action_w_ = make_param("heads/action/weight", {cfg_.d, cfg_.k_action}, 0.0);
        head_action_b_ = make_param("heads/action/bias", {cfg_.k_action}, 0.0);
        head_scene_w_ = make_param("heads/scene/weight", {cfg_.d, cfg_.k_scene}, 0.0);
        head_scene_b_ = make_param("heads/scene/bias", {cfg_.k_scene}, 0.0);
        head_human_w_ = make_param("heads/human/weight", {2, cfg_.d, 1, 1}, 0.0);
        head_human_b_ = make_param("heads/human/bias", {2}, 0.0);

        // buffers registered after all parameter structs have settled
        register_bn_buffers("stem/bn1", stem_bn1_);
        register_bn_buffers("stem/bn2", stem_bn2_);
        for (int br = 0; br < 3; ++br) {
            for (auto& st : branch_[br]) {
                const std::string prefix = std::string(kBranchNames[br]) + "/" + st.name;
                register_block_buffers(prefix + "/block0", st.b0);
                register_block_buffers(prefix + "/block1", st.b1);
            }
        }
        for (auto& [name, p] : cbi_) {
            register_bn_buffers("cbi/" + name + "/bn_scene", p.bn_scene);
            register_bn_buffers("cbi/" + name + "/bn_human", p.bn_human);
        }
    }

    ModelConfig cfg_;
    uint64_t seed_;
    bool train_ = true;

    ConvLayer stem_c1_, stem_c2_;
    BatchNorm<T> stem_bn1_, stem_bn2_;
    std::vector<Stage> branch_[3];  // action, scene, human
    std::map<std::string, CbiParams<T>> cbi_;
    RelationParams<T> relation_;
    GcnParams<T> gcn_;
    Var<T> head_action_w_, head_action_b_;
    Var<T> head_scene_w_, head_scene_b_;
    Var<T> head_human_w_, head_human_b_;

    std::vector<std::pair<std::string, Var<T>>> params_;
    std::vector<std::pair<std::string, Tensor<T>*>> buffers_;
};

}  // namespace kinet
