#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualtsr/image.hpp"
#include "dualtsr/rng.hpp"
#include "dualtsr/text.hpp"

namespace dualtsr::model {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ModelConfig {
    int image_h = 32;
    int image_w = 128;
    int patch = 4;
    int channels = 3;
    int scale = 4;      // HR/LR spatial ratio
    int embed_dim = 256;
    int depth = 6;
    int heads = 4;
    int vocab = 27;     // real tokens, PAD included; MASK id = vocab
    int seq_len = 24;

    int mask_id() const { return vocab; }
    int lr_patch() const { return patch / scale; }
    int lr_h() const { return image_h / scale; }
    int lr_w() const { return image_w / scale; }
    int grid_h() const { return image_h / patch; }
    int grid_w() const { return image_w / patch; }
    int tokens_hr() const { return grid_h() * grid_w(); }
    int patch_dim() const { return patch * patch * channels; }
    int lr_patch_dim() const { return lr_patch() * lr_patch() * channels; }
    int image_elems() const { return image_h * image_w * channels; }

    void validate() const;

    // Closed-form parameter count; asserted against the registry in tests.
    std::int64_t param_count() const;

    bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Parameter containers. Every tensor is a row-major matrix; biases and
// per-stream embeddings are 1 x d rows so the checkpoint registry stays
// uniform.

template <typename S>
struct AttnParams {
    Mat<S> wq, wk, wv, wo;  // d x d
    Mat<S> bq, bk, bv, bo;  // 1 x d
};

template <typename S>
struct MlpParams {
    Mat<S> w1;  // d x 4d
    Mat<S> b1;  // 1 x 4d
    Mat<S> w2;  // 4d x d
    Mat<S> b2;  // 1 x d
};

template <typename S>
struct StreamBlockParams {
    AttnParams<S> attn;
    MlpParams<S> mlp;
    Mat<S> wmod;  // d x 6d, from SiLU(cond)
    Mat<S> bmod;  // 1 x 6d
};

template <typename S>
struct BlockParams {
    StreamBlockParams<S> img;
    StreamBlockParams<S> txt;
};

template <typename S>
struct ModelParams {
    Mat<S> patch_hr_w, patch_hr_b;  // (p^2 C) x d, 1 x d
    Mat<S> patch_lr_w, patch_lr_b;  // (p_lr^2 C) x d, 1 x d
    Mat<S> pos_hr, pos_lr;          // n_hr x d each (HR and LR grids align)
    Mat<S> pos_txt;                 // L x d
    Mat<S> type_hr, type_lr;        // 1 x d stream-type embeddings
    Mat<S> null_lr;                 // 1 x d learned unconditional embedding
    Mat<S> tok_embed;               // (N+1) x d, MASK row included
    Mat<S> time_w1, time_b1;        // 2d x d, 1 x d
    Mat<S> time_w2, time_b2;        // d x d, 1 x d
    Mat<S> head_img_w, head_img_b;  // d x p^2C, 1 x p^2C
    Mat<S> head_txt_w, head_txt_b;  // d x N, 1 x N
    std::vector<BlockParams<S>> blocks;

    // Enumerates (name, matrix) in a stable order shared by the optimizer,
    // the EMA copy, and the checkpoint format.
    template <typename F>
    void for_each(F&& f) {
        f("patch_hr.w", patch_hr_w);
        f("patch_hr.b", patch_hr_b);
        f("patch_lr.w", patch_lr_w);
        f("patch_lr.b", patch_lr_b);
        f("pos_hr", pos_hr);
        f("pos_lr", pos_lr);
        f("pos_txt", pos_txt);
        f("type_hr", type_hr);
        f("type_lr", type_lr);
        f("null_lr", null_lr);
        f("tok_embed", tok_embed);
        f("time.w1", time_w1);
        f("time.b1", time_b1);
        f("time.w2", time_w2);
        f("time.b2", time_b2);
        f("head_img.w", head_img_w);
        f("head_img.b", head_img_b);
        f("head_txt.w", head_txt_w);
        f("head_txt.b", head_txt_b);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string pre = "blk" + std::to_string(i) + ".";
            auto stream = [&](const char* sname, StreamBlockParams<S>& sp) {
                const std::string sp_pre = pre + sname + ".";
                f((sp_pre + "attn.wq").c_str(), sp.attn.wq);
                f((sp_pre + "attn.bq").c_str(), sp.attn.bq);
                f((sp_pre + "attn.wk").c_str(), sp.attn.wk);
                f((sp_pre + "attn.bk").c_str(), sp.attn.bk);
                f((sp_pre + "attn.wv").c_str(), sp.attn.wv);
                f((sp_pre + "attn.bv").c_str(), sp.attn.bv);
                f((sp_pre + "attn.wo").c_str(), sp.attn.wo);
                f((sp_pre + "attn.bo").c_str(), sp.attn.bo);
                f((sp_pre + "mlp.w1").c_str(), sp.mlp.w1);
                f((sp_pre + "mlp.b1").c_str(), sp.mlp.b1);
                f((sp_pre + "mlp.w2").c_str(), sp.mlp.w2);
                f((sp_pre + "mlp.b2").c_str(), sp.mlp.b2);
                f((sp_pre + "mod.w").c_str(), sp.wmod);
                f((sp_pre + "mod.b").c_str(), sp.bmod);
            };
            stream("img", blocks[i].img);
            stream("txt", blocks[i].txt);
        }
    }

    template <typename F>
    void for_each(F&& f) const {
        const_cast<ModelParams*>(this)->for_each(
            [&](const char* name, Mat<S>& m) { f(name, static_cast<const Mat<S>&>(m)); });
    }

    std::int64_t count() const {
        std::int64_t n = 0;
        for_each([&](const char*, const Mat<S>& m) { n += m.size(); });
        return n;
    }
};

template <typename S>
struct ModelOutput {
    Mat<S> velocity;     // 1 x (H*W*C), flattened like ImageGrid
    Mat<S> text_logits;  // L x N (MASK column excluded)
};

// ---------------------------------------------------------------------------
// Forward cache for backprop.

template <typename S>
struct StreamBlockCache {
    Mat<S> x_in;                       // n x d
    Mat<S> ln1_xhat;                   // n x d
    Mat<S> ln1_rstd;                   // n x 1
    Mat<S> a_in;                       // modulated attention input
    Mat<S> attn_out;                   // n x d (after out projection)
    Mat<S> attn_concat;                // n x d (before out projection)
    Mat<S> x_mid;                      // after attention residual
    Mat<S> ln2_xhat, ln2_rstd;
    Mat<S> m_in;                       // modulated mlp input
    Mat<S> mlp_pre, mlp_act;           // n x 4d
    Mat<S> mlp_out;                    // n x d
    Mat<S> mod;                        // 1 x 6d modulation vector
};

template <typename S>
struct BlockCache {
    StreamBlockCache<S> img, txt;
    Mat<S> q, k, v;                    // concatenated (n_img+n_txt) x d
    std::vector<Mat<S>> probs;         // per-head softmax
};

template <typename S>
struct Cache {
    // conditioning
    RowVec<S> t_emb;                   // 1 x 2d sinusoidal input
    RowVec<S> time_h1, time_a1;        // hidden pre/post SiLU
    RowVec<S> cond, silu_cond;         // c and SiLU(c)
    // embedding inputs
    Mat<S> patches_hr;                 // n_hr x p^2C
    Mat<S> patches_lr;                 // n_hr x p_lr^2C (empty if uncond)
    bool lr_present = true;
    std::vector<int> txt_ids;
    std::vector<BlockCache<S>> blocks;
    // heads
    Mat<S> head_img_xhat, head_img_rstd;  // over HR rows only
    Mat<S> head_txt_xhat, head_txt_rstd;
    // final stream states (needed for LN backward inputs)
    Mat<S> final_img, final_txt;
};

// ---------------------------------------------------------------------------
// Elementwise helpers.

namespace detail {

template <typename S>
S gelu(S x) {
    const S c0 = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
    const S u = c0 * (x + static_cast<S>(0.044715) * x * x * x);
    return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::tanh(u));
}

template <typename S>
S gelu_grad(S x) {
    const S c0 = static_cast<S>(0.7978845608028654);
    const S x2 = x * x;
    const S u = c0 * (x + static_cast<S>(0.044715) * x * x2);
    const S th = std::tanh(u);
    const S sech2 = static_cast<S>(1) - th * th;
    const S du = c0 * (static_cast<S>(1) + static_cast<S>(3) * static_cast<S>(0.044715) * x2);
    return static_cast<S>(0.5) * (static_cast<S>(1) + th) +
           static_cast<S>(0.5) * x * sech2 * du;
}

template <typename S>
S silu(S x) {
    return x / (static_cast<S>(1) + std::exp(-x));
}

template <typename S>
S silu_grad(S x) {
    const S sig = static_cast<S>(1) / (static_cast<S>(1) + std::exp(-x));
    return sig * (static_cast<S>(1) + x * (static_cast<S>(1) - sig));
}

inline constexpr double kLnEps = 1e-5;

// Non-affine LayerNorm over rows; fills xhat and rstd.
template <typename S>
void layer_norm(const Mat<S>& x, Mat<S>& xhat, Mat<S>& rstd) {
    const auto n = x.rows();
    const auto d = x.cols();
    xhat.resize(n, d);
    rstd.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const S mu = x.row(i).mean();
        const S var = (x.row(i).array() - mu).square().mean();
        const S r = static_cast<S>(1) / std::sqrt(var + static_cast<S>(kLnEps));
        rstd(i, 0) = r;
        xhat.row(i) = (x.row(i).array() - mu) * r;
    }
}

// Backward of non-affine LayerNorm; returns dx.
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dxhat, const Mat<S>& xhat,
                           const Mat<S>& rstd) {
    const auto n = xhat.rows();
    const auto d = xhat.cols();
    Mat<S> dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const S m1 = dxhat.row(i).mean();
        const S m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
        dx.row(i) =
            rstd(i, 0) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
    }
    (void)d;
    return dx;
}

}  // namespace detail

// Joint attention core: per-stream Q/K/V projections, one self-attention over
// the concatenated token axis, split, per-stream output projections. With
// isolate_streams set, cross-modality attention logits are masked out (test
// surface for the per-stream equivalence oracle).
template <typename S>
void joint_attention_forward(const Mat<S>& img_in, const Mat<S>& txt_in,
                             const AttnParams<S>& img_p,
                             const AttnParams<S>& txt_p, int heads,
                             bool isolate_streams, Mat<S>& img_out,
                             Mat<S>& txt_out, BlockCache<S>* cache);

// Convenience wrapper returning the two streams (spec-facing test helper).
template <typename S>
std::pair<Mat<S>, Mat<S>> joint_attention_block(const Mat<S>& img_tokens,
                                                const Mat<S>& txt_tokens,
                                                const AttnParams<S>& img_p,
                                                const AttnParams<S>& txt_p,
                                                int heads,
                                                bool isolate_streams = false);

// Plain single-stream multi-head self-attention used as the reference oracle
// path and by the isolation tests.
template <typename S>
Mat<S> self_attention(const Mat<S>& tokens, const AttnParams<S>& p, int heads);

// ---------------------------------------------------------------------------

template <typename S>
class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        allocate();
    }

    // Truncated-normal init for projections, zeros for modulation and heads.
    void init_params(Rng& rng);
    ModelParams<S>& params() { return params_; }
    const ModelParams<S>& params() const { return params_; }
    const ModelConfig& config() const { return cfg_; }

    // Allocates a zeroed gradient container mirroring the parameters.
    ModelParams<S> make_grads() const;

    // One pass over both heads. x_img is the HR-shaped interpolant, txt may
    // contain MASK ids, lr == nullptr selects the unconditional branch
    // (learned null embedding + the caller passing all-MASK text).
    ModelOutput<S> forward(const Mat<S>& x_img_flat, S t_img,
                           const std::vector<int>& txt, S t_txt,
                           const Mat<S>* lr_flat, Cache<S>* cache = nullptr,
                           bool isolate_attn = false) const;

    // Accumulates parameter gradients into `grads` given output adjoints.
    // dvelocity is 1 x (H*W*C); dlogits is L x N. Either may be empty.
    void backward(const Cache<S>& cache, const Mat<S>& dvelocity,
                  const Mat<S>& dlogits, ModelParams<S>& grads) const;

    // Patch embedding layout helpers (shared with the trainer and tests).
    Mat<S> patchify_hr(const Mat<S>& img_flat) const;
    Mat<S> patchify_lr(const Mat<S>& lr_flat) const;
    Mat<S> unpatchify_hr(const Mat<S>& tokens) const;  // n_hr x p^2C -> 1 x HWC

    static Mat<S> grid_to_mat(const ImageGrid& g);
    static ImageGrid mat_to_grid(const Mat<S>& m, int h, int w, int c);

private:
    void allocate();
    RowVec<S> sinusoidal_embedding(S t) const;

    ModelConfig cfg_;
    ModelParams<S> params_;
};

void validate_or_throw(const ModelConfig& cfg);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace dualtsr::model

#include "dualtsr/model_impl.hpp"
