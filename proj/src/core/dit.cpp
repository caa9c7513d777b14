#include "dit.hpp"

#include <cmath>

#include "errors.hpp"

namespace ldit {

namespace {

constexpr int kTimeFreqDim = 16;

// Sinusoidal embedding of the diffusion time in [0,1].
Tensor time_embedding(double t) {
    Tensor emb({1, kTimeFreqDim});
    for (int k = 0; k < kTimeFreqDim / 2; ++k) {
        const double freq = std::pow(1000.0, -2.0 * k / kTimeFreqDim);
        emb.at(0, 2 * k) = std::sin(t * freq * 1000.0);
        emb.at(0, 2 * k + 1) = std::cos(t * freq * 1000.0);
    }
    return emb;
}

}  // namespace

void ModelConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw_validation("model: d_model must be divisible by n_heads");
    if (head_dim() % 2 != 0) throw_validation("model: head_dim must be even");
    if (n_blocks < 1) throw_validation("model: n_blocks must be >= 1");
    if (cam_block_index < 0 || cam_block_index >= n_blocks)
        throw_validation("model: cam_block_index out of range");
    if (t_target < 1) throw_validation("model: t_target must be >= 1");
    if (patch_size < 1 || noise_h < 1 || noise_w < 1)
        throw_validation("model: patch/grid dims must be >= 1");
    if (max_references < 0) throw_validation("model: max_references must be >= 0");
    if (vocab_size < 1) throw_validation("model: vocab_size must be >= 1");
    rope().validate();
}

RopeConfig ModelConfig::rope() const {
    if (rope_dim_t > 0) {
        RopeConfig cfg;
        cfg.head_dim = head_dim();
        cfg.dim_t = rope_dim_t;
        cfg.dim_h = rope_dim_h;
        cfg.dim_w = rope_dim_w;
        cfg.base_frequency = rope_base;
        return cfg;
    }
    return RopeConfig::for_head_dim(head_dim(), rope_base);
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({img.height, img.width, 3});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const Rgb c = img.get(x, y);
            for (int ch = 0; ch < 3; ++ch)
                t.data[(static_cast<std::size_t>(y) * img.width + x) * 3 + ch] =
                    c[ch] / 127.5 - 1.0;
        }
    return t;
}

Image tensor_to_image(const Tensor& t) {
    if (t.shape.size() != 3 || t.shape[2] != 3)
        throw_dimension("tensor_to_image: expected {H, W, 3}");
    Image img(t.shape[1], t.shape[0]);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            Rgb c;
            for (int ch = 0; ch < 3; ++ch) {
                const double v =
                    t.data[(static_cast<std::size_t>(y) * img.width + x) * 3 + ch];
                c[ch] = static_cast<std::uint8_t>(
                    std::clamp(std::lround((v + 1.0) * 127.5), 0l, 255l));
            }
            img.set(x, y, c);
        }
    return img;
}

Tensor extract_patches(const Tensor& img, int patch_size) {
    if (img.shape.size() != 3) throw_dimension("extract_patches: expected {H, W, C}");
    const int H = img.shape[0], W = img.shape[1], C = img.shape[2];
    if (H % patch_size != 0 || W % patch_size != 0)
        throw_dimension("extract_patches: image dims not divisible by patch size");
    const int gh = H / patch_size, gw = W / patch_size;
    const int pd = patch_size * patch_size * C;
    Tensor out({gh * gw, pd});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            const int tok = gy * gw + gx;
            int off = 0;
            for (int py = 0; py < patch_size; ++py)
                for (int px = 0; px < patch_size; ++px)
                    for (int ch = 0; ch < C; ++ch)
                        out.at(tok, off++) =
                            img.data[((static_cast<std::size_t>(gy * patch_size + py) * W) +
                                      gx * patch_size + px) *
                                         C +
                                     ch];
        }
    return out;
}

Tensor assemble_patches(const Tensor& tokens, int grid_h, int grid_w, int patch_size,
                        int channels) {
    if (tokens.shape.size() != 2 || tokens.rows() != grid_h * grid_w ||
        tokens.cols() != patch_size * patch_size * channels)
        throw_dimension("assemble_patches: token shape mismatch");
    Tensor img({grid_h * patch_size, grid_w * patch_size, channels});
    const int W = grid_w * patch_size;
    for (int gy = 0; gy < grid_h; ++gy)
        for (int gx = 0; gx < grid_w; ++gx) {
            const int tok = gy * grid_w + gx;
            int off = 0;
            for (int py = 0; py < patch_size; ++py)
                for (int px = 0; px < patch_size; ++px)
                    for (int ch = 0; ch < channels; ++ch)
                        img.data[((static_cast<std::size_t>(gy * patch_size + py) * W) +
                                  gx * patch_size + px) *
                                     channels +
                                 ch] = tokens.at(tok, off++);
        }
    return img;
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ParamStore p;
    const int d = cfg.d_model;
    const int pd = cfg.patch_dim();
    auto lin = [&](const std::string& name, int in, int out) {
        p.add(name + "_w", Tensor::randn({in, out}, rng, 1.0 / std::sqrt(double(in))));
        p.add(name + "_b", Tensor::zeros({1, out}));
    };
    p.add("cond_embed", Tensor::randn({cfg.vocab_size, d}, rng, 0.02));
    lin("patch_proj", pd, d);
    lin("time1", kTimeFreqDim, d);
    lin("time2", d, d);
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string pre = "blk" + std::to_string(b) + ".";
        p.add(pre + "ln1_g", Tensor::full({1, d}, 1.0));
        p.add(pre + "ln1_b", Tensor::zeros({1, d}));
        lin(pre + "q", d, d);
        lin(pre + "k", d, d);
        lin(pre + "v", d, d);
        lin(pre + "o", d, d);
        p.add(pre + "ln2_g", Tensor::full({1, d}, 1.0));
        p.add(pre + "ln2_b", Tensor::zeros({1, d}));
        lin(pre + "mlp1", d, 4 * d);
        lin(pre + "mlp2", 4 * d, d);
    }
    p.add("final_ln_g", Tensor::full({1, d}, 1.0));
    p.add("final_ln_b", Tensor::zeros({1, d}));
    lin("out", d, pd);
    return p;
}

std::pair<int, int> TokenSequence::ref_range(int ref_index) const {
    for (const Segment& s : segments)
        if (s.kind == Segment::Kind::Reference && s.ref_index == ref_index)
            return {s.start, s.start + s.length};
    throw_validation("token sequence: no such reference segment");
}

TokenSequence build_sequence(const std::vector<ReferenceCondition>& refs,
                             const std::vector<int>& condition_ids, const ModelConfig& cfg,
                             bool use_regional_rope) {
    cfg.validate();
    if (static_cast<int>(refs.size()) > cfg.max_references)
        throw_validation("build_sequence: too many references (capacity " +
                         std::to_string(cfg.max_references) + ")");
    for (int id : condition_ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw_validation("build_sequence: condition id out of vocabulary");

    TokenSequence seq;
    seq.condition_ids = condition_ids;

    auto append_coords = [&](const RopeCoords& c) {
        seq.coords.t.insert(seq.coords.t.end(), c.t.begin(), c.t.end());
        seq.coords.i.insert(seq.coords.i.end(), c.i.begin(), c.i.end());
        seq.coords.j.insert(seq.coords.j.end(), c.j.begin(), c.j.end());
    };

    int cursor = 0;
    if (!condition_ids.empty()) {
        Segment s{Segment::Kind::Condition, cursor, static_cast<int>(condition_ids.size()), -1};
        seq.segments.push_back(s);
        for (std::size_t k = 0; k < condition_ids.size(); ++k) {
            seq.coords.t.push_back(0.0);
            seq.coords.i.push_back(0.0);
            seq.coords.j.push_back(0.0);
        }
        cursor += s.length;
    }

    for (std::size_t r = 0; r < refs.size(); ++r) {
        const ReferenceCondition& rc = refs[r];
        rc.target_box.validate();
        if (rc.target_box.w_start < 0.0 || rc.target_box.h_start < 0.0 ||
            rc.target_box.w_end > cfg.noise_w || rc.target_box.h_end > cfg.noise_h)
            throw_validation("build_sequence: reference " + std::to_string(r) +
                             " target box [" + std::to_string(rc.target_box.w_start) + "," +
                             std::to_string(rc.target_box.h_start) + "," +
                             std::to_string(rc.target_box.w_end) + "," +
                             std::to_string(rc.target_box.h_end) +
                             "] lies outside the noise grid");
        if (rc.image.height % cfg.patch_size != 0 || rc.image.width % cfg.patch_size != 0)
            throw_dimension("build_sequence: reference image not divisible by patch size");
        const int gh = rc.image.height / cfg.patch_size;
        const int gw = rc.image.width / cfg.patch_size;
        seq.ref_patches.push_back(extract_patches(image_to_tensor(rc.image), cfg.patch_size));
        seq.ref_grids.push_back({gh, gw});

        Segment s{Segment::Kind::Reference, cursor, gh * gw, static_cast<int>(r)};
        seq.segments.push_back(s);
        append_coords(use_regional_rope ? regional_coords(gh, gw, rc.target_box)
                                        : default_coords(gh, gw, 0));
        cursor += s.length;
    }

    seq.noise_start = cursor;
    seq.noise_len = cfg.noise_tokens();
    Segment noise{Segment::Kind::Noise, cursor, seq.noise_len, -1};
    seq.segments.push_back(noise);
    append_coords(default_coords(cfg.noise_h, cfg.noise_w, cfg.t_target));
    cursor += seq.noise_len;
    seq.total = cursor;

    // reference isolation: block exactly the cross-reference pairs
    seq.visibility_bias = Tensor::zeros({seq.total, seq.total});
    for (const Segment& a : seq.segments) {
        if (a.kind != Segment::Kind::Reference) continue;
        for (const Segment& b : seq.segments) {
            if (b.kind != Segment::Kind::Reference || a.ref_index == b.ref_index) continue;
            for (int qi = a.start; qi < a.start + a.length; ++qi)
                for (int ki = b.start; ki < b.start + b.length; ++ki)
                    seq.visibility_bias.at(qi, ki) = kVisibilityBlock;
        }
    }
    return seq;
}

ParamLeaves::ParamLeaves(Tape& tape, const ParamStore& params) {
    for (const std::string& name : params.names())
        leaves_.emplace(name, tape.leaf(params.get(name)));
}

Var ParamLeaves::operator[](const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw_validation("no parameter leaf: " + name);
    return it->second;
}

std::map<std::string, Tensor> collect_grads(const ParamStore& params,
                                            const ParamLeaves& leaves) {
    std::map<std::string, Tensor> grads;
    for (const std::string& name : params.names()) {
        const Var leaf = leaves[name];
        Tensor g(leaf->value.shape, leaf->grad);
        grads.emplace(name, std::move(g));
    }
    return grads;
}

DitForward dit_forward(Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                       const TokenSequence& seq, double diffusion_time,
                       const Tensor& noisy_latent) {
    cfg.validate();
    if (diffusion_time < 0.0 || diffusion_time > 1.0)
        throw_validation("dit_forward: diffusion time must lie in [0,1]");
    if (noisy_latent.shape != std::vector<int>{seq.noise_len, cfg.patch_dim()})
        throw_dimension("dit_forward: noisy latent shape mismatch");
    noisy_latent.check_finite("dit_forward noisy latent");

    const int d = cfg.d_model;
    const int H = cfg.n_heads;
    const int hd = cfg.head_dim();
    const RopeConfig rope_cfg = cfg.rope();
    const Tensor angles = rope_angles(seq.coords, rope_cfg);

    auto linear = [&](Var x, const std::string& name) {
        return tape.add_rowvec(tape.matmul(x, leaves[name + "_w"]), leaves[name + "_b"]);
    };

    // embed segments: condition ids, patch-projected references, patch-
    // projected noisy latent (shared projection)
    std::vector<Var> parts;
    for (const Segment& s : seq.segments) {
        if (s.kind == Segment::Kind::Condition) {
            parts.push_back(tape.gather_rows(leaves["cond_embed"], seq.condition_ids));
        } else if (s.kind == Segment::Kind::Reference) {
            Var raw = tape.constant(seq.ref_patches[s.ref_index]);
            parts.push_back(linear(raw, "patch_proj"));
        } else {
            Var raw = tape.constant(noisy_latent);
            parts.push_back(linear(raw, "patch_proj"));
        }
    }
    Var x = parts.size() == 1 ? parts[0] : tape.concat_rows(parts);

    // timestep modulation: learned time embedding added to every token
    Var temb = tape.constant(time_embedding(diffusion_time));
    temb = linear(tape.silu(linear(temb, "time1")), "time2");
    x = tape.add_rowvec(x, temb);

    DitForward out;
    out.cams.resize(cfg.n_blocks);

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string pre = "blk" + std::to_string(b) + ".";
        Var h = tape.layernorm(x, leaves[pre + "ln1_g"], leaves[pre + "ln1_b"]);
        Var q = linear(h, pre + "q");
        Var k = linear(h, pre + "k");
        Var v = linear(h, pre + "v");

        std::vector<Var> head_outs;
        std::vector<Var> head_logits;
        for (int hh = 0; hh < H; ++hh) {
            Var qh = tape.slice_cols(q, hh * hd, (hh + 1) * hd);
            Var kh = tape.slice_cols(k, hh * hd, (hh + 1) * hd);
            Var vh = tape.slice_cols(v, hh * hd, (hh + 1) * hd);
            qh = tape.rope_rotate(qh, angles);
            kh = tape.rope_rotate(kh, angles);
            Var logits = tape.scale(tape.matmul(qh, tape.transpose(kh)),
                                    1.0 / std::sqrt(double(hd)));
            head_logits.push_back(logits);
            Var attn = tape.softmax_lastdim(tape.add_const(logits, seq.visibility_bias));
            head_outs.push_back(tape.matmul(attn, vh));
        }

        // cross-attention maps: reference-token queries vs noise-token keys,
        // head-averaged, reference-row-averaged, min-max normalized
        for (int r = 0; r < seq.n_refs(); ++r) {
            const auto [r0, r1] = seq.ref_range(r);
            Var acc;
            for (int hh = 0; hh < H; ++hh) {
                Var sl = tape.slice_cols(
                    tape.slice_rows(head_logits[hh], r0, r1), seq.noise_start,
                    seq.noise_start + seq.noise_len);
                acc = hh == 0 ? sl : tape.add(acc, sl);
            }
            acc = tape.scale(acc, 1.0 / H);
            Var cam = tape.minmax_normalize(tape.mean_over_rows(acc));
            out.cams[b].push_back(cam);
        }

        Var attn_out = linear(head_outs.size() == 1 ? head_outs[0]
                                                    : tape.concat_cols(head_outs),
                              pre + "o");
        x = tape.add(x, attn_out);

        Var m = tape.layernorm(x, leaves[pre + "ln2_g"], leaves[pre + "ln2_b"]);
        m = linear(tape.silu(linear(m, pre + "mlp1")), pre + "mlp2");
        x = tape.add(x, m);
    }

    out.features = tape.layernorm(x, leaves["final_ln_g"], leaves["final_ln_b"]);
    Var noise_feats =
        tape.slice_rows(out.features, seq.noise_start, seq.noise_start + seq.noise_len);
    out.velocity = linear(noise_feats, "out");
    out.velocity->value.check_finite("dit_forward velocity");
    return out;
}

std::vector<double> extract_cam(const ParamStore& params, const ModelConfig& cfg,
                                const TokenSequence& seq, double diffusion_time,
                                const Tensor& noisy_latent, int block_index, int ref_index) {
    if (block_index < 0 || block_index >= cfg.n_blocks)
        throw_validation("extract_cam: block index out of range");
    if (ref_index < 0 || ref_index >= seq.n_refs())
        throw_validation("extract_cam: no such reference");
    Tape tape;
    ParamLeaves leaves(tape, params);
    DitForward fwd = dit_forward(tape, leaves, cfg, seq, diffusion_time, noisy_latent);
    return fwd.cams[block_index][ref_index]->value.data;
}

}  // namespace ldit
