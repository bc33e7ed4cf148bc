#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "relapse/errors.hpp"
#include "relapse/preprocess.hpp"
#include "relapse/rng.hpp"
#include "relapse/vol.hpp"

namespace relapse {

enum class Activation { relu, gelu };
enum class Task { classify, regress };
enum class Modality { tabular_only, vision_only, multimodal };

inline const char* to_string(Task t) { return t == Task::classify ? "classify" : "regress"; }
inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::tabular_only: return "tabular_only";
        case Modality::vision_only: return "vision_only";
        default: return "multimodal";
    }
}
inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

// Late-fusion network: residual 3D CNN -> vision embedding, MLP -> tabular
// embedding, concatenation, fusion MLP -> one output. Convolutions are 3x3x3
// with zero padding; each stage is one transition conv, `blocks_per_stage`
// residual blocks and a 2x max pool, followed by global average pooling and
// a linear embedding layer.
struct ModelConfig {
    std::vector<int> vision_channels{8, 16, 32};
    int blocks_per_stage = 1;
    int vision_embed_dim = 32;
    std::vector<int> tabular_hidden{16, 16};
    int tabular_embed_dim = 8;
    std::vector<int> fusion_hidden{16};
    Task task = Task::classify;
    Activation vision_activation = Activation::relu;
    Activation tabular_activation = Activation::gelu;
    Activation fusion_activation = Activation::gelu;
    Modality modality = Modality::multimodal;
    Dims3 input_shape{24, 24, 24};
    std::uint64_t init_seed = 0;

    bool has_vision() const { return modality != Modality::tabular_only; }
    bool has_tabular() const { return modality != Modality::vision_only; }

    int fusion_input_dim() const {
        int d = 0;
        if (has_vision()) d += vision_embed_dim;
        if (has_tabular()) d += tabular_embed_dim;
        return d;
    }

    void validate() const {
        if (vision_channels.empty()) throw config_error("model.vision_channels must be non-empty");
        for (int c : vision_channels)
            if (c <= 0) throw config_error("model.vision_channels entries must be > 0");
        if (blocks_per_stage <= 0) throw config_error("model.blocks_per_stage must be > 0");
        if (vision_embed_dim <= 0) throw config_error("model.vision_embed_dim must be > 0");
        for (int w : tabular_hidden)
            if (w <= 0) throw config_error("model.tabular_hidden entries must be > 0");
        if (tabular_embed_dim <= 0) throw config_error("model.tabular_embed_dim must be > 0");
        for (int w : fusion_hidden)
            if (w <= 0) throw config_error("model.fusion_hidden entries must be > 0");
        const std::uint32_t min_side = 1u << vision_channels.size();
        for (auto d : input_shape)
            if (d < min_side)
                throw config_error("model.input_shape sides must be >= 2^n_stages");
    }
};

struct ParamSegment {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t count = 0;

    std::size_t fan_in() const {
        // weight shapes: conv [out,in,3,3,3], dense [out,in]; biases have fan_in 0
        if (shape.size() == 2) return static_cast<std::size_t>(shape[1]);
        if (shape.size() == 5) return static_cast<std::size_t>(shape[1]) * 27u;
        return 0;
    }
};

// Canonical flat parameter layout; the checkpoint payload and the gradient
// vector both follow this ordering.
struct ParamLayout {
    std::vector<ParamSegment> segments;
    std::size_t total = 0;

    std::size_t add(std::string name, std::vector<int> shape) {
        std::size_t count = 1;
        for (int s : shape) count *= static_cast<std::size_t>(s);
        segments.push_back({std::move(name), std::move(shape), total, count});
        total += count;
        return segments.size() - 1;
    }

    const ParamSegment& find(const std::string& name) const {
        for (const auto& s : segments)
            if (s.name == name) return s;
        throw argument_error("ParamLayout: unknown segment " + name);
    }

    static ParamLayout from_config(const ModelConfig& cfg) {
        ParamLayout L;
        if (cfg.has_vision()) {
            int prev = 1;
            for (std::size_t s = 0; s < cfg.vision_channels.size(); ++s) {
                const int ch = cfg.vision_channels[s];
                const std::string st = "vision.stage" + std::to_string(s);
                L.add(st + ".trans.w", {ch, prev, 3, 3, 3});
                L.add(st + ".trans.b", {ch});
                for (int b = 0; b < cfg.blocks_per_stage; ++b) {
                    const std::string bl = st + ".block" + std::to_string(b);
                    L.add(bl + ".conv1.w", {ch, ch, 3, 3, 3});
                    L.add(bl + ".conv1.b", {ch});
                    L.add(bl + ".conv2.w", {ch, ch, 3, 3, 3});
                    L.add(bl + ".conv2.b", {ch});
                }
                prev = ch;
            }
            L.add("vision.fc.w", {cfg.vision_embed_dim, prev});
            L.add("vision.fc.b", {cfg.vision_embed_dim});
        }
        if (cfg.has_tabular()) {
            int prev = static_cast<int>(FeatureVector::kDim);
            for (std::size_t l = 0; l < cfg.tabular_hidden.size(); ++l) {
                const std::string ly = "tabular.layer" + std::to_string(l);
                L.add(ly + ".w", {cfg.tabular_hidden[l], prev});
                L.add(ly + ".b", {cfg.tabular_hidden[l]});
                prev = cfg.tabular_hidden[l];
            }
            L.add("tabular.embed.w", {cfg.tabular_embed_dim, prev});
            L.add("tabular.embed.b", {cfg.tabular_embed_dim});
        }
        {
            int prev = cfg.fusion_input_dim();
            for (std::size_t l = 0; l < cfg.fusion_hidden.size(); ++l) {
                const std::string ly = "fusion.layer" + std::to_string(l);
                L.add(ly + ".w", {cfg.fusion_hidden[l], prev});
                L.add(ly + ".b", {cfg.fusion_hidden[l]});
                prev = cfg.fusion_hidden[l];
            }
            L.add("fusion.out.w", {1, prev});
            L.add("fusion.out.b", {1});
        }
        return L;
    }
};

struct FusionModelParams {
    ModelConfig config;
    ParamLayout layout;
    std::vector<double> values;

    double* seg(const std::string& name) { return values.data() + layout.find(name).offset; }
    const double* seg(const std::string& name) const {
        return values.data() + layout.find(name).offset;
    }
};

// Fan-in-scaled uniform init (variance 1/fan_in); biases start at zero.
inline FusionModelParams init_model(const ModelConfig& config) {
    config.validate();
    FusionModelParams p;
    p.config = config;
    p.layout = ParamLayout::from_config(config);
    p.values.assign(p.layout.total, 0.0);
    Rng rng(config.init_seed);
    for (const auto& seg : p.layout.segments) {
        const std::size_t fan_in = seg.fan_in();
        if (fan_in == 0) continue; // bias
        const double a = std::sqrt(3.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < seg.count; ++i)
            p.values[seg.offset + i] = rng.uniform(-a, a);
    }
    return p;
}

namespace nn {

inline double act_fwd(double x, Activation a) {
    if (a == Activation::relu) return x > 0.0 ? x : 0.0;
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475));
}

inline double act_grad(double x, Activation a) {
    if (a == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
    const double phi = std::exp(-0.5 * x * x) * 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865475)) + x * phi;
}

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + e^z), overflow-safe
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// Multichannel 3D map, row-major (c, i, j, k).
struct Map3 {
    int ch = 0;
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    std::vector<double> v;

    Map3() = default;
    Map3(int c, std::size_t a, std::size_t b, std::size_t cc)
        : ch(c), d0(a), d1(b), d2(cc), v(static_cast<std::size_t>(c) * a * b * cc, 0.0) {}
    std::size_t voxels() const { return d0 * d1 * d2; }
    double* channel(int c) { return v.data() + static_cast<std::size_t>(c) * voxels(); }
    const double* channel(int c) const {
        return v.data() + static_cast<std::size_t>(c) * voxels();
    }
};

// Zero-padded copy of all channels, each (d0+2)(d1+2)(d2+2).
struct Padded3 {
    int ch = 0;
    std::size_t p0 = 0, p1 = 0, p2 = 0;
    std::vector<double> v;

    void from(const Map3& m) {
        ch = m.ch;
        p0 = m.d0 + 2;
        p1 = m.d1 + 2;
        p2 = m.d2 + 2;
        v.assign(static_cast<std::size_t>(ch) * p0 * p1 * p2, 0.0);
        for (int c = 0; c < ch; ++c) {
            const double* src = m.channel(c);
            double* dst = v.data() + static_cast<std::size_t>(c) * p0 * p1 * p2;
            for (std::size_t i = 0; i < m.d0; ++i)
                for (std::size_t j = 0; j < m.d1; ++j) {
                    const double* srow = src + (i * m.d1 + j) * m.d2;
                    double* drow = dst + ((i + 1) * p1 + (j + 1)) * p2 + 1;
                    std::copy(srow, srow + m.d2, drow);
                }
        }
    }
    double* channel(int c) { return v.data() + static_cast<std::size_t>(c) * p0 * p1 * p2; }
    const double* channel(int c) const {
        return v.data() + static_cast<std::size_t>(c) * p0 * p1 * p2;
    }
};

// out(co,i,j,k) = b[co] + sum_{ci,kz,ky,kx} w[co,ci,kz,ky,kx] *
//                 in(ci, i+kz-1, j+ky-1, k+kx-1), zero padding.
inline void conv3_forward(const Padded3& pin, const double* w, const double* b, Map3& out) {
    const int cin = pin.ch;
    const std::size_t d0 = out.d0, d1 = out.d1, d2 = out.d2;
    for (int co = 0; co < out.ch; ++co) {
        double* o = out.channel(co);
        std::fill(o, o + out.voxels(), b[co]);
        for (int ci = 0; ci < cin; ++ci) {
            const double* wk = w + (static_cast<std::size_t>(co) * cin + ci) * 27;
            const double* pc = pin.channel(ci);
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky) {
                    const double w0 = wk[(kz * 3 + ky) * 3 + 0];
                    const double w1 = wk[(kz * 3 + ky) * 3 + 1];
                    const double w2 = wk[(kz * 3 + ky) * 3 + 2];
                    for (std::size_t i = 0; i < d0; ++i) {
                        const double* prow =
                            pc + ((i + static_cast<std::size_t>(kz)) * pin.p1 + ky) * pin.p2;
                        for (std::size_t j = 0; j < d1; ++j) {
                            const double* p = prow + j * pin.p2;
                            double* orow = o + (i * d1 + j) * d2;
                            for (std::size_t k = 0; k < d2; ++k)
                                orow[k] += w0 * p[k] + w1 * p[k + 1] + w2 * p[k + 2];
                        }
                    }
                }
        }
    }
}

// Accumulates dW, dB and the padded input gradient. `pin` must be the padded
// input saved by the forward pass; `dpin` has the same geometry (pre-zeroed
// by the caller).
inline void conv3_backward(const Padded3& pin, const double* w, const Map3& dout, double* dw,
                           double* db, Padded3& dpin) {
    const int cin = pin.ch;
    const std::size_t d0 = dout.d0, d1 = dout.d1, d2 = dout.d2;
    for (int co = 0; co < dout.ch; ++co) {
        const double* do_ = dout.channel(co);
        double acc = 0.0;
        for (std::size_t t = 0; t < dout.voxels(); ++t) acc += do_[t];
        db[co] += acc;
        for (int ci = 0; ci < cin; ++ci) {
            const double* pc = pin.channel(ci);
            double* dpc = dpin.channel(ci);
            const std::size_t wbase = (static_cast<std::size_t>(co) * cin + ci) * 27;
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky) {
                    double g0 = 0.0, g1 = 0.0, g2 = 0.0;
                    const double w0 = w[wbase + (kz * 3 + ky) * 3 + 0];
                    const double w1 = w[wbase + (kz * 3 + ky) * 3 + 1];
                    const double w2 = w[wbase + (kz * 3 + ky) * 3 + 2];
                    for (std::size_t i = 0; i < d0; ++i) {
                        const double* prow =
                            pc + ((i + static_cast<std::size_t>(kz)) * pin.p1 + ky) * pin.p2;
                        double* dprow =
                            dpc + ((i + static_cast<std::size_t>(kz)) * dpin.p1 + ky) * dpin.p2;
                        for (std::size_t j = 0; j < d1; ++j) {
                            const double* p = prow + j * pin.p2;
                            double* dp = dprow + j * dpin.p2;
                            const double* dorow = do_ + (i * d1 + j) * d2;
                            for (std::size_t k = 0; k < d2; ++k) {
                                const double g = dorow[k];
                                g0 += g * p[k];
                                g1 += g * p[k + 1];
                                g2 += g * p[k + 2];
                                dp[k] += w0 * g;
                                dp[k + 1] += w1 * g;
                                dp[k + 2] += w2 * g;
                            }
                        }
                    }
                    dw[wbase + (kz * 3 + ky) * 3 + 0] += g0;
                    dw[wbase + (kz * 3 + ky) * 3 + 1] += g1;
                    dw[wbase + (kz * 3 + ky) * 3 + 2] += g2;
                }
        }
    }
}

// Crops the interior of a padded gradient back onto a Map3 gradient.
inline void crop_padded(const Padded3& dpin, Map3& din) {
    for (int c = 0; c < din.ch; ++c) {
        const double* src = dpin.channel(c);
        double* dst = din.channel(c);
        for (std::size_t i = 0; i < din.d0; ++i)
            for (std::size_t j = 0; j < din.d1; ++j) {
                const double* srow = src + ((i + 1) * dpin.p1 + (j + 1)) * dpin.p2 + 1;
                double* drow = dst + (i * din.d1 + j) * din.d2;
                std::copy(srow, srow + din.d2, drow);
            }
    }
}

// 2x max pooling with floor division; odd trailing slices are dropped.
// First maximal element in scan order wins, making backprop deterministic.
inline void maxpool2_forward(const Map3& in, Map3& out, std::vector<std::size_t>& argmax) {
    const std::size_t o0 = in.d0 / 2, o1 = in.d1 / 2, o2 = in.d2 / 2;
    out = Map3(in.ch, o0, o1, o2);
    argmax.assign(out.v.size(), 0);
    for (int c = 0; c < in.ch; ++c) {
        const double* src = in.channel(c);
        double* dst = out.channel(c);
        const std::size_t cbase = static_cast<std::size_t>(c) * in.voxels();
        for (std::size_t i = 0; i < o0; ++i)
            for (std::size_t j = 0; j < o1; ++j)
                for (std::size_t k = 0; k < o2; ++k) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t di = 0; di < 2; ++di)
                        for (std::size_t dj = 0; dj < 2; ++dj)
                            for (std::size_t dk = 0; dk < 2; ++dk) {
                                const std::size_t idx =
                                    ((2 * i + di) * in.d1 + (2 * j + dj)) * in.d2 + (2 * k + dk);
                                if (src[idx] > best) {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                    const std::size_t oidx = (i * o1 + j) * o2 + k;
                    dst[oidx] = best;
                    argmax[static_cast<std::size_t>(c) * out.voxels() + oidx] = cbase + best_idx;
                }
    }
}

inline void dense_forward(const double* w, const double* b, const double* x, int in, int out,
                          double* y) {
    for (int o = 0; o < out; ++o) {
        double acc = b[o];
        const double* wr = w + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

inline void dense_backward(const double* w, const double* x, const double* dy, int in, int out,
                           double* dw, double* db, double* dx) {
    for (int o = 0; o < out; ++o) {
        const double g = dy[o];
        db[o] += g;
        const double* wr = w + static_cast<std::size_t>(o) * in;
        double* dwr = dw + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
            dwr[i] += g * x[i];
            if (dx) dx[i] += g * wr[i];
        }
    }
}

// Forward caches. Everything the backward pass reads is kept; activations are
// recomputed from stored pre-activations.
struct ConvCache {
    Padded3 padded_in;
    Map3 out; // pre-activation
};

struct BlockCache {
    ConvCache c1;
    Map3 h; // act(conv1 out)
    ConvCache c2;
};

struct StageCache {
    ConvCache trans;
    Map3 trans_act;
    std::vector<BlockCache> blocks;
    Map3 stage_out; // before pooling
    Map3 pooled;
    std::vector<std::size_t> argmax;
};

struct DenseCache {
    std::vector<double> x;   // input
    std::vector<double> pre; // Wx+b
};

struct ForwardCache {
    std::vector<StageCache> stages;
    std::vector<double> gap;       // pooled mean per channel
    std::size_t gap_voxels = 0;
    DenseCache vision_fc;
    std::vector<DenseCache> tabular_layers;
    DenseCache tabular_embed;
    std::vector<double> vision_embedding;
    std::vector<double> tabular_embedding;
    std::vector<DenseCache> fusion_layers;
    DenseCache fusion_out;
    double raw = 0.0; // pre-head scalar
};

}  // namespace nn

struct ForwardResult {
    double output = 0.0; // task head applied
    double raw = 0.0;    // pre-head scalar (logit or normalized RFS)
    std::vector<double> vision_embedding;
    std::vector<double> tabular_embedding;
};

namespace nn {

inline void run_forward(const FusionModelParams& p, const Vol* volume,
                        const FeatureVector& features, ForwardCache& cache) {
    const ModelConfig& cfg = p.config;

    if (cfg.has_vision()) {
        if (volume == nullptr) throw shape_error("forward: vision model needs a volume");
        if (volume->dims != cfg.input_shape)
            throw shape_error("forward: volume shape does not match model input shape");

        Map3 cur(1, volume->dims[0], volume->dims[1], volume->dims[2]);
        std::copy(volume->data.begin(), volume->data.end(), cur.v.begin());

        cache.stages.assign(cfg.vision_channels.size(), {});
        for (std::size_t s = 0; s < cfg.vision_channels.size(); ++s) {
            StageCache& sc = cache.stages[s];
            const std::string st = "vision.stage" + std::to_string(s);
            const int ch = cfg.vision_channels[s];

            sc.trans.padded_in.from(cur);
            sc.trans.out = Map3(ch, cur.d0, cur.d1, cur.d2);
            conv3_forward(sc.trans.padded_in, p.seg(st + ".trans.w"), p.seg(st + ".trans.b"),
                          sc.trans.out);
            sc.trans_act = sc.trans.out;
            for (double& x : sc.trans_act.v) x = act_fwd(x, cfg.vision_activation);

            Map3 block_in = sc.trans_act;
            sc.blocks.resize(static_cast<std::size_t>(cfg.blocks_per_stage));
            for (int b = 0; b < cfg.blocks_per_stage; ++b) {
                BlockCache& bc = sc.blocks[static_cast<std::size_t>(b)];
                const std::string bl = st + ".block" + std::to_string(b);
                bc.c1.padded_in.from(block_in);
                bc.c1.out = Map3(ch, block_in.d0, block_in.d1, block_in.d2);
                conv3_forward(bc.c1.padded_in, p.seg(bl + ".conv1.w"), p.seg(bl + ".conv1.b"),
                              bc.c1.out);
                bc.h = bc.c1.out;
                for (double& x : bc.h.v) x = act_fwd(x, cfg.vision_activation);
                bc.c2.padded_in.from(bc.h);
                bc.c2.out = Map3(ch, block_in.d0, block_in.d1, block_in.d2);
                conv3_forward(bc.c2.padded_in, p.seg(bl + ".conv2.w"), p.seg(bl + ".conv2.b"),
                              bc.c2.out);
                // residual: out = block_in + conv2(act(conv1(block_in)))
                for (std::size_t t = 0; t < bc.c2.out.v.size(); ++t)
                    bc.c2.out.v[t] += block_in.v[t];
                block_in = bc.c2.out;
            }
            sc.stage_out = block_in;
            maxpool2_forward(sc.stage_out, sc.pooled, sc.argmax);
            cur = sc.pooled;
        }

        const int ch_last = cfg.vision_channels.back();
        cache.gap_voxels = cur.voxels();
        cache.gap.assign(static_cast<std::size_t>(ch_last), 0.0);
        for (int c = 0; c < ch_last; ++c) {
            const double* src = cur.channel(c);
            double acc = 0.0;
            for (std::size_t t = 0; t < cur.voxels(); ++t) acc += src[t];
            cache.gap[static_cast<std::size_t>(c)] = acc / static_cast<double>(cur.voxels());
        }

        cache.vision_fc.x = cache.gap;
        cache.vision_fc.pre.assign(static_cast<std::size_t>(cfg.vision_embed_dim), 0.0);
        dense_forward(p.seg("vision.fc.w"), p.seg("vision.fc.b"), cache.vision_fc.x.data(),
                      ch_last, cfg.vision_embed_dim, cache.vision_fc.pre.data());
        cache.vision_embedding = cache.vision_fc.pre; // linear embedding
    }

    if (cfg.has_tabular()) {
        std::vector<double> x(features.values.begin(), features.values.end());
        cache.tabular_layers.assign(cfg.tabular_hidden.size(), {});
        for (std::size_t l = 0; l < cfg.tabular_hidden.size(); ++l) {
            DenseCache& dc = cache.tabular_layers[l];
            const std::string ly = "tabular.layer" + std::to_string(l);
            dc.x = x;
            dc.pre.assign(static_cast<std::size_t>(cfg.tabular_hidden[l]), 0.0);
            dense_forward(p.seg(ly + ".w"), p.seg(ly + ".b"), dc.x.data(),
                          static_cast<int>(dc.x.size()), cfg.tabular_hidden[l], dc.pre.data());
            x = dc.pre;
            for (double& v : x) v = act_fwd(v, cfg.tabular_activation);
        }
        cache.tabular_embed.x = x;
        cache.tabular_embed.pre.assign(static_cast<std::size_t>(cfg.tabular_embed_dim), 0.0);
        dense_forward(p.seg("tabular.embed.w"), p.seg("tabular.embed.b"),
                      cache.tabular_embed.x.data(), static_cast<int>(x.size()),
                      cfg.tabular_embed_dim, cache.tabular_embed.pre.data());
        cache.tabular_embedding = cache.tabular_embed.pre; // linear embedding
    }

    std::vector<double> z;
    z.reserve(static_cast<std::size_t>(cfg.fusion_input_dim()));
    if (cfg.has_vision())
        z.insert(z.end(), cache.vision_embedding.begin(), cache.vision_embedding.end());
    if (cfg.has_tabular())
        z.insert(z.end(), cache.tabular_embedding.begin(), cache.tabular_embedding.end());

    cache.fusion_layers.assign(cfg.fusion_hidden.size(), {});
    for (std::size_t l = 0; l < cfg.fusion_hidden.size(); ++l) {
        DenseCache& dc = cache.fusion_layers[l];
        const std::string ly = "fusion.layer" + std::to_string(l);
        dc.x = z;
        dc.pre.assign(static_cast<std::size_t>(cfg.fusion_hidden[l]), 0.0);
        dense_forward(p.seg(ly + ".w"), p.seg(ly + ".b"), dc.x.data(),
                      static_cast<int>(dc.x.size()), cfg.fusion_hidden[l], dc.pre.data());
        z = dc.pre;
        for (double& v : z) v = act_fwd(v, cfg.fusion_activation);
    }
    cache.fusion_out.x = z;
    cache.fusion_out.pre.assign(1, 0.0);
    dense_forward(p.seg("fusion.out.w"), p.seg("fusion.out.b"), cache.fusion_out.x.data(),
                  static_cast<int>(z.size()), 1, cache.fusion_out.pre.data());
    cache.raw = cache.fusion_out.pre[0];
}

// Backpropagates d(loss)/d(raw) into the flat gradient vector.
inline void run_backward(const FusionModelParams& p, const nn::ForwardCache& cache,
                         double draw, std::vector<double>& grad) {
    const ModelConfig& cfg = p.config;
    auto gseg = [&](const std::string& name) { return grad.data() + p.layout.find(name).offset; };

    std::vector<double> dz(cache.fusion_out.x.size(), 0.0);
    {
        const double dy = draw;
        dense_backward(p.seg("fusion.out.w"), cache.fusion_out.x.data(), &dy,
                       static_cast<int>(cache.fusion_out.x.size()), 1, gseg("fusion.out.w"),
                       gseg("fusion.out.b"), dz.data());
    }
    for (std::size_t l = cfg.fusion_hidden.size(); l-- > 0;) {
        const DenseCache& dc = cache.fusion_layers[l];
        const std::string ly = "fusion.layer" + std::to_string(l);
        std::vector<double> dpre(dc.pre.size());
        for (std::size_t i = 0; i < dpre.size(); ++i)
            dpre[i] = dz[i] * act_grad(dc.pre[i], cfg.fusion_activation);
        std::vector<double> dx(dc.x.size(), 0.0);
        dense_backward(p.seg(ly + ".w"), dc.x.data(), dpre.data(), static_cast<int>(dc.x.size()),
                       static_cast<int>(dpre.size()), gseg(ly + ".w"), gseg(ly + ".b"), dx.data());
        dz = std::move(dx);
    }

    std::size_t off = 0;
    std::vector<double> dvis, dtab;
    if (cfg.has_vision()) {
        dvis.assign(cache.vision_embedding.size(), 0.0);
        std::copy(dz.begin() + static_cast<std::ptrdiff_t>(off),
                  dz.begin() + static_cast<std::ptrdiff_t>(off + dvis.size()), dvis.begin());
        off += dvis.size();
    }
    if (cfg.has_tabular()) {
        dtab.assign(cache.tabular_embedding.size(), 0.0);
        std::copy(dz.begin() + static_cast<std::ptrdiff_t>(off),
                  dz.begin() + static_cast<std::ptrdiff_t>(off + dtab.size()), dtab.begin());
    }

    if (cfg.has_tabular()) {
        std::vector<double> dx(cache.tabular_embed.x.size(), 0.0);
        dense_backward(p.seg("tabular.embed.w"), cache.tabular_embed.x.data(), dtab.data(),
                       static_cast<int>(cache.tabular_embed.x.size()), cfg.tabular_embed_dim,
                       gseg("tabular.embed.w"), gseg("tabular.embed.b"), dx.data());
        std::vector<double> dcur = std::move(dx);
        for (std::size_t l = cfg.tabular_hidden.size(); l-- > 0;) {
            const DenseCache& dc = cache.tabular_layers[l];
            const std::string ly = "tabular.layer" + std::to_string(l);
            std::vector<double> dpre(dc.pre.size());
            for (std::size_t i = 0; i < dpre.size(); ++i)
                dpre[i] = dcur[i] * act_grad(dc.pre[i], cfg.tabular_activation);
            std::vector<double> dxi(dc.x.size(), 0.0);
            dense_backward(p.seg(ly + ".w"), dc.x.data(), dpre.data(),
                           static_cast<int>(dc.x.size()), static_cast<int>(dpre.size()),
                           gseg(ly + ".w"), gseg(ly + ".b"), dxi.data());
            dcur = std::move(dxi);
        }
    }

    if (cfg.has_vision()) {
        const int ch_last = cfg.vision_channels.back();
        std::vector<double> dgap(static_cast<std::size_t>(ch_last), 0.0);
        dense_backward(p.seg("vision.fc.w"), cache.vision_fc.x.data(), dvis.data(), ch_last,
                       cfg.vision_embed_dim, gseg("vision.fc.w"), gseg("vision.fc.b"),
                       dgap.data());

        // GAP backward: spread mean gradient over pooled voxels
        const StageCache& last = cache.stages.back();
        Map3 dcur(last.pooled.ch, last.pooled.d0, last.pooled.d1, last.pooled.d2);
        const double inv = 1.0 / static_cast<double>(cache.gap_voxels);
        for (int c = 0; c < dcur.ch; ++c) {
            double* d = dcur.channel(c);
            const double g = dgap[static_cast<std::size_t>(c)] * inv;
            std::fill(d, d + dcur.voxels(), g);
        }

        for (std::size_t s = cfg.vision_channels.size(); s-- > 0;) {
            const StageCache& sc = cache.stages[s];
            const std::string st = "vision.stage" + std::to_string(s);

            // maxpool backward
            Map3 dstage(sc.stage_out.ch, sc.stage_out.d0, sc.stage_out.d1, sc.stage_out.d2);
            for (std::size_t t = 0; t < dcur.v.size(); ++t) dstage.v[sc.argmax[t]] += dcur.v[t];

            // residual blocks, last to first
            Map3 dblock = std::move(dstage);
            for (std::size_t b = sc.blocks.size(); b-- > 0;) {
                const BlockCache& bc = sc.blocks[b];
                const std::string bl = st + ".block" + std::to_string(b);
                // through conv2
                Padded3 dpad2;
                dpad2.from(Map3(bc.h.ch, bc.h.d0, bc.h.d1, bc.h.d2)); // zeroed, right geometry
                conv3_backward(bc.c2.padded_in, p.seg(bl + ".conv2.w"), dblock,
                               gseg(bl + ".conv2.w"), gseg(bl + ".conv2.b"), dpad2);
                Map3 dh(bc.h.ch, bc.h.d0, bc.h.d1, bc.h.d2);
                crop_padded(dpad2, dh);
                // through activation of conv1
                for (std::size_t t = 0; t < dh.v.size(); ++t)
                    dh.v[t] *= act_grad(bc.c1.out.v[t], cfg.vision_activation);
                // through conv1
                Padded3 dpad1;
                dpad1.from(Map3(dblock.ch, dblock.d0, dblock.d1, dblock.d2));
                conv3_backward(bc.c1.padded_in, p.seg(bl + ".conv1.w"), dh, gseg(bl + ".conv1.w"),
                               gseg(bl + ".conv1.b"), dpad1);
                Map3 din(dblock.ch, dblock.d0, dblock.d1, dblock.d2);
                crop_padded(dpad1, din);
                // skip connection adds the incoming gradient unchanged
                for (std::size_t t = 0; t < din.v.size(); ++t) din.v[t] += dblock.v[t];
                dblock = std::move(din);
            }

            // through transition activation + conv
            for (std::size_t t = 0; t < dblock.v.size(); ++t)
                dblock.v[t] *= act_grad(sc.trans.out.v[t], cfg.vision_activation);
            const int cin = s == 0 ? 1 : cfg.vision_channels[s - 1];
            Padded3 dpadt;
            dpadt.from(Map3(cin, dblock.d0, dblock.d1, dblock.d2));
            conv3_backward(sc.trans.padded_in, p.seg(st + ".trans.w"), dblock,
                           gseg(st + ".trans.w"), gseg(st + ".trans.b"), dpadt);
            if (s > 0) {
                Map3 din(cin, dblock.d0, dblock.d1, dblock.d2);
                crop_padded(dpadt, din);
                dcur = std::move(din);
            }
        }
    }
}

}  // namespace nn

// Pure single-sample forward. Classification squashes the raw output through
// a sigmoid; regression returns the affine output unchanged (clamping to the
// RFS range happens at reporting time, not here).
inline ForwardResult forward(const FusionModelParams& params, const Vol& volume,
                             const FeatureVector& features) {
    nn::ForwardCache cache;
    nn::run_forward(params, &volume, features, cache);
    ForwardResult r;
    r.raw = cache.raw;
    r.output = params.config.task == Task::classify ? nn::sigmoid(cache.raw) : cache.raw;
    r.vision_embedding = std::move(cache.vision_embedding);
    r.tabular_embedding = std::move(cache.tabular_embedding);
    return r;
}

struct TrainSample {
    std::string id;
    const Vol* volume = nullptr; // normalized; may be null for tabular_only
    FeatureVector features;
    double target = 0.0; // [0,1] label for classify, normalized days for regress
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

// Mean loss and its exact gradient over a batch. Classification uses binary
// cross-entropy (computed from the logit for stability), regression squared
// error on normalized targets. Per-sample gradients are accumulated in batch
// order, so the reduction order is fixed.
inline LossGrad loss_and_grad(const FusionModelParams& params,
                              const std::vector<TrainSample>& batch) {
    if (batch.empty()) throw argument_error("loss_and_grad: empty batch");
    LossGrad out;
    out.grad.assign(params.values.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    for (const TrainSample& s : batch) {
        nn::ForwardCache cache;
        nn::run_forward(params, s.volume, s.features, cache);
        double sample_loss, draw;
        if (params.config.task == Task::classify) {
            sample_loss = nn::softplus(cache.raw) - s.target * cache.raw;
            draw = nn::sigmoid(cache.raw) - s.target;
        } else {
            const double diff = cache.raw - s.target;
            sample_loss = diff * diff;
            draw = 2.0 * diff;
        }
        if (!std::isfinite(sample_loss))
            throw numeric_error("loss_and_grad: non-finite loss for record " + s.id);
        out.loss += sample_loss * inv_n;
        nn::run_backward(params, cache, draw * inv_n, out.grad);
    }
    return out;
}

}  // namespace relapse
