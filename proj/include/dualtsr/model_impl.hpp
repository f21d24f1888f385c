#pragma once

// Template implementation for model.hpp. Explicit instantiations for float
// and double live in src/model.cpp.

namespace dualtsr::model {

inline void ModelConfig::validate() const {
    if (image_h <= 0 || image_w <= 0 || channels <= 0) {
        throw std::invalid_argument("ModelConfig: non-positive image shape");
    }
    if (patch <= 0 || image_h % patch != 0 || image_w % patch != 0) {
        throw std::invalid_argument("ModelConfig: H and W must be divisible by patch");
    }
    if (scale <= 0 || patch % scale != 0 || image_h % scale != 0 ||
        image_w % scale != 0) {
        throw std::invalid_argument("ModelConfig: patch and image must be divisible by scale");
    }
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
        throw std::invalid_argument("ModelConfig: embed_dim must be divisible by heads");
    }
    if (depth < 1 || vocab < 2 || seq_len < 1) {
        throw std::invalid_argument("ModelConfig: depth >= 1, vocab >= 2, seq_len >= 1");
    }
}

inline std::int64_t ModelConfig::param_count() const {
    const std::int64_t d = embed_dim;
    const std::int64_t n_hr = tokens_hr();
    const std::int64_t pd = patch_dim();
    const std::int64_t pld = lr_patch_dim();
    const std::int64_t embed = pd * d + d + pld * d + d      // patch projections
                               + 2 * n_hr * d + seq_len * d  // positional tables
                               + 2 * d                       // stream-type
                               + d                           // null LR embedding
                               + (static_cast<std::int64_t>(vocab) + 1) * d;
    const std::int64_t time = 2 * d * d + d + d * d + d;
    const std::int64_t heads_p = d * pd + pd + d * vocab + vocab;
    const std::int64_t per_stream = 18 * d * d + 15 * d;
    return embed + time + heads_p + 2 * depth * per_stream;
}

namespace detail {

template <typename S>
void trunc_normal(Mat<S>& m, Rng& rng, double std_dev = 0.02) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double z = rng.normal();
            while (std::abs(z) > 2.0) z = rng.normal();
            m(i, j) = static_cast<S>(z * std_dev);
        }
    }
}

}  // namespace detail

template <typename S>
void Model<S>::allocate() {
    const int d = cfg_.embed_dim;
    auto zeros = [](Eigen::Index r, Eigen::Index c) { return Mat<S>::Zero(r, c); };

    auto& p = params_;
    p.patch_hr_w = zeros(cfg_.patch_dim(), d);
    p.patch_hr_b = zeros(1, d);
    p.patch_lr_w = zeros(cfg_.lr_patch_dim(), d);
    p.patch_lr_b = zeros(1, d);
    p.pos_hr = zeros(cfg_.tokens_hr(), d);
    p.pos_lr = zeros(cfg_.tokens_hr(), d);
    p.pos_txt = zeros(cfg_.seq_len, d);
    p.type_hr = zeros(1, d);
    p.type_lr = zeros(1, d);
    p.null_lr = zeros(1, d);
    p.tok_embed = zeros(cfg_.vocab + 1, d);
    p.time_w1 = zeros(2 * d, d);
    p.time_b1 = zeros(1, d);
    p.time_w2 = zeros(d, d);
    p.time_b2 = zeros(1, d);
    p.head_img_w = zeros(d, cfg_.patch_dim());
    p.head_img_b = zeros(1, cfg_.patch_dim());
    p.head_txt_w = zeros(d, cfg_.vocab);
    p.head_txt_b = zeros(1, cfg_.vocab);

    p.blocks.resize(static_cast<std::size_t>(cfg_.depth));
    for (auto& blk : p.blocks) {
        for (StreamBlockParams<S>* sp : {&blk.img, &blk.txt}) {
            sp->attn.wq = zeros(d, d);
            sp->attn.wk = zeros(d, d);
            sp->attn.wv = zeros(d, d);
            sp->attn.wo = zeros(d, d);
            sp->attn.bq = zeros(1, d);
            sp->attn.bk = zeros(1, d);
            sp->attn.bv = zeros(1, d);
            sp->attn.bo = zeros(1, d);
            sp->mlp.w1 = zeros(d, 4 * d);
            sp->mlp.b1 = zeros(1, 4 * d);
            sp->mlp.w2 = zeros(4 * d, d);
            sp->mlp.b2 = zeros(1, d);
            sp->wmod = zeros(d, 6 * d);
            sp->bmod = zeros(1, 6 * d);
        }
    }
}

template <typename S>
void Model<S>::init_params(Rng& rng) {
    auto& p = params_;
    // Projections and embeddings get truncated-normal noise; biases,
    // modulation projections, and both output heads stay at zero so the
    // initial network is the identity map with zero outputs.
    for (Mat<S>* m : {&p.patch_hr_w, &p.patch_lr_w, &p.pos_hr, &p.pos_lr,
                      &p.pos_txt, &p.type_hr, &p.type_lr, &p.null_lr,
                      &p.tok_embed, &p.time_w1, &p.time_w2}) {
        detail::trunc_normal(*m, rng);
    }
    for (auto& blk : p.blocks) {
        for (StreamBlockParams<S>* sp : {&blk.img, &blk.txt}) {
            detail::trunc_normal(sp->attn.wq, rng);
            detail::trunc_normal(sp->attn.wk, rng);
            detail::trunc_normal(sp->attn.wv, rng);
            detail::trunc_normal(sp->attn.wo, rng);
            detail::trunc_normal(sp->mlp.w1, rng);
            detail::trunc_normal(sp->mlp.w2, rng);
        }
    }
}

template <typename S>
ModelParams<S> Model<S>::make_grads() const {
    ModelParams<S> g = params_;
    g.for_each([](const char*, Mat<S>& m) { m.setZero(); });
    return g;
}

// ---------------------------------------------------------------------------
// Patch layout.

template <typename S>
Mat<S> Model<S>::patchify_hr(const Mat<S>& img_flat) const {
    const int p = cfg_.patch;
    const int gw = cfg_.grid_w();
    const int c = cfg_.channels;
    const int w = cfg_.image_w;
    Mat<S> out(cfg_.tokens_hr(), cfg_.patch_dim());
    for (int py = 0; py < cfg_.grid_h(); ++py) {
        for (int px = 0; px < gw; ++px) {
            const int tk = py * gw + px;
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    for (int ch = 0; ch < c; ++ch) {
                        out(tk, (dy * p + dx) * c + ch) = img_flat(
                            0, ((py * p + dy) * w + px * p + dx) * c + ch);
                    }
                }
            }
        }
    }
    return out;
}

template <typename S>
Mat<S> Model<S>::patchify_lr(const Mat<S>& lr_flat) const {
    const int p = cfg_.lr_patch();
    const int gw = cfg_.grid_w();
    const int c = cfg_.channels;
    const int w = cfg_.lr_w();
    Mat<S> out(cfg_.tokens_hr(), cfg_.lr_patch_dim());
    for (int py = 0; py < cfg_.grid_h(); ++py) {
        for (int px = 0; px < gw; ++px) {
            const int tk = py * gw + px;
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    for (int ch = 0; ch < c; ++ch) {
                        out(tk, (dy * p + dx) * c + ch) = lr_flat(
                            0, ((py * p + dy) * w + px * p + dx) * c + ch);
                    }
                }
            }
        }
    }
    return out;
}

template <typename S>
Mat<S> Model<S>::unpatchify_hr(const Mat<S>& tokens) const {
    const int p = cfg_.patch;
    const int gw = cfg_.grid_w();
    const int c = cfg_.channels;
    const int w = cfg_.image_w;
    Mat<S> out(1, cfg_.image_elems());
    for (int py = 0; py < cfg_.grid_h(); ++py) {
        for (int px = 0; px < gw; ++px) {
            const int tk = py * gw + px;
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) {
                    for (int ch = 0; ch < c; ++ch) {
                        out(0, ((py * p + dy) * w + px * p + dx) * c + ch) =
                            tokens(tk, (dy * p + dx) * c + ch);
                    }
                }
            }
        }
    }
    return out;
}

template <typename S>
Mat<S> Model<S>::grid_to_mat(const ImageGrid& g) {
    Mat<S> m(1, static_cast<Eigen::Index>(g.size()));
    for (std::size_t i = 0; i < g.size(); ++i) {
        m(0, static_cast<Eigen::Index>(i)) = static_cast<S>(g.data[i]);
    }
    return m;
}

template <typename S>
ImageGrid Model<S>::mat_to_grid(const Mat<S>& m, int h, int w, int c) {
    ImageGrid g(h, w, c);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.data[i] = static_cast<float>(m(0, static_cast<Eigen::Index>(i)));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Attention.

template <typename S>
void joint_attention_forward(const Mat<S>& img_in, const Mat<S>& txt_in,
                             const AttnParams<S>& img_p,
                             const AttnParams<S>& txt_p, int heads,
                             bool isolate_streams, Mat<S>& img_out,
                             Mat<S>& txt_out, BlockCache<S>* cache) {
    const Eigen::Index n_i = img_in.rows();
    const Eigen::Index n_t = txt_in.rows();
    const Eigen::Index d = img_in.cols();
    if (n_t > 0 && txt_in.cols() != d) {
        throw std::invalid_argument("joint_attention: embed_dim mismatch");
    }
    const Eigen::Index n = n_i + n_t;
    const Eigen::Index dh = d / heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    Mat<S> q(n, d), k(n, d), v(n, d);
    if (n_i > 0) {
        q.topRows(n_i) = (img_in * img_p.wq).rowwise() + img_p.bq.row(0);
        k.topRows(n_i) = (img_in * img_p.wk).rowwise() + img_p.bk.row(0);
        v.topRows(n_i) = (img_in * img_p.wv).rowwise() + img_p.bv.row(0);
    }
    if (n_t > 0) {
        q.bottomRows(n_t) = (txt_in * txt_p.wq).rowwise() + txt_p.bq.row(0);
        k.bottomRows(n_t) = (txt_in * txt_p.wk).rowwise() + txt_p.bk.row(0);
        v.bottomRows(n_t) = (txt_in * txt_p.wv).rowwise() + txt_p.bv.row(0);
    }

    Mat<S> concat(n, d);
    std::vector<Mat<S>> probs(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = q.middleCols(h * dh, dh);
        auto kh = k.middleCols(h * dh, dh);
        auto vh = v.middleCols(h * dh, dh);
        Mat<S> scores = qh * kh.transpose() * inv_sqrt_dh;
        if (isolate_streams) {
            const S neg = static_cast<S>(-1e30);
            scores.topRightCorner(n_i, n_t).setConstant(neg);
            scores.bottomLeftCorner(n_t, n_i).setConstant(neg);
        }
        Mat<S>& p = probs[static_cast<std::size_t>(h)];
        p.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const S mx = scores.row(i).maxCoeff();
            p.row(i) = (scores.row(i).array() - mx).exp();
            p.row(i) /= p.row(i).sum();
        }
        concat.middleCols(h * dh, dh) = p * vh;
    }

    if (n_i > 0) {
        img_out = (concat.topRows(n_i) * img_p.wo).rowwise() + img_p.bo.row(0);
    } else {
        img_out.resize(0, d);
    }
    if (n_t > 0) {
        txt_out = (concat.bottomRows(n_t) * txt_p.wo).rowwise() + txt_p.bo.row(0);
    } else {
        txt_out.resize(0, d);
    }

    if (cache != nullptr) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->img.attn_concat = concat.topRows(n_i);
        cache->txt.attn_concat = concat.bottomRows(n_t);
    }
}

template <typename S>
std::pair<Mat<S>, Mat<S>> joint_attention_block(const Mat<S>& img_tokens,
                                                const Mat<S>& txt_tokens,
                                                const AttnParams<S>& img_p,
                                                const AttnParams<S>& txt_p,
                                                int heads,
                                                bool isolate_streams) {
    Mat<S> img_out, txt_out;
    joint_attention_forward(img_tokens, txt_tokens, img_p, txt_p, heads,
                            isolate_streams, img_out, txt_out,
                            static_cast<BlockCache<S>*>(nullptr));
    return {std::move(img_out), std::move(txt_out)};
}

template <typename S>
Mat<S> self_attention(const Mat<S>& tokens, const AttnParams<S>& p, int heads) {
    Mat<S> empty(0, tokens.cols());
    Mat<S> out, unused;
    joint_attention_forward(tokens, empty, p, p, heads, false, out, unused,
                            static_cast<BlockCache<S>*>(nullptr));
    return out;
}

// ---------------------------------------------------------------------------
// Forward.

template <typename S>
RowVec<S> Model<S>::sinusoidal_embedding(S t) const {
    const int d = cfg_.embed_dim;
    const int half = d / 2;
    RowVec<S> emb(d);
    for (int i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        const double arg = static_cast<double>(t) * 1000.0 * freq;
        emb(i) = static_cast<S>(std::cos(arg));
        emb(half + i) = static_cast<S>(std::sin(arg));
    }
    if (d % 2 == 1) emb(d - 1) = static_cast<S>(0);
    return emb;
}

template <typename S>
ModelOutput<S> Model<S>::forward(const Mat<S>& x_img_flat, S t_img,
                                 const std::vector<int>& txt, S t_txt,
                                 const Mat<S>* lr_flat, Cache<S>* cache,
                                 bool isolate_attn) const {
    const int d = cfg_.embed_dim;
    const int n_hr = cfg_.tokens_hr();
    const int n_img = 2 * n_hr;
    const int L = cfg_.seq_len;
    if (x_img_flat.cols() != cfg_.image_elems()) {
        throw std::invalid_argument("forward: image size does not match config");
    }
    if (static_cast<int>(txt.size()) != L) {
        throw std::invalid_argument("forward: text length does not match config");
    }
    for (int id : txt) {
        if (id < 0 || id > cfg_.mask_id()) {
            throw std::invalid_argument("forward: token id outside [0, mask_id]");
        }
    }
    if (lr_flat != nullptr &&
        lr_flat->cols() != cfg_.lr_h() * cfg_.lr_w() * cfg_.channels) {
        throw std::invalid_argument("forward: LR size does not match config");
    }

    Cache<S> local;
    Cache<S>& cc = cache != nullptr ? *cache : local;
    const bool keep = cache != nullptr;

    // Conditioning vector from the (t_img, t_txt) pair.
    RowVec<S> e(2 * d);
    e.leftCols(d) = sinusoidal_embedding(t_img);
    e.rightCols(d) = sinusoidal_embedding(t_txt);
    RowVec<S> h1 = e * params_.time_w1 + params_.time_b1.row(0);
    RowVec<S> a1 = h1.unaryExpr([](S x) { return detail::silu(x); });
    RowVec<S> cond = a1 * params_.time_w2 + params_.time_b2.row(0);
    RowVec<S> sc = cond.unaryExpr([](S x) { return detail::silu(x); });
    if (keep) {
        cc.t_emb = e;
        cc.time_h1 = h1;
        cc.time_a1 = a1;
        cc.cond = cond;
        cc.silu_cond = sc;
    }

    // Image stream: HR interpolant tokens followed by LR conditioning tokens.
    Mat<S> patches_hr = patchify_hr(x_img_flat);
    Mat<S> x_img(n_img, d);
    x_img.topRows(n_hr) =
        ((patches_hr * params_.patch_hr_w).rowwise() + params_.patch_hr_b.row(0))
            .rowwise() +
        params_.type_hr.row(0);
    x_img.topRows(n_hr) += params_.pos_hr;

    Mat<S> patches_lr;
    if (lr_flat != nullptr) {
        patches_lr = patchify_lr(*lr_flat);
        x_img.bottomRows(n_hr) =
            ((patches_lr * params_.patch_lr_w).rowwise() +
             params_.patch_lr_b.row(0))
                .rowwise() +
            params_.type_lr.row(0);
    } else {
        x_img.bottomRows(n_hr) =
            params_.null_lr.row(0).replicate(n_hr, 1).rowwise() +
            params_.type_lr.row(0);
    }
    x_img.bottomRows(n_hr) += params_.pos_lr;

    // Text stream.
    Mat<S> x_txt(L, d);
    for (int j = 0; j < L; ++j) {
        x_txt.row(j) = params_.tok_embed.row(txt[j]) + params_.pos_txt.row(j);
    }

    if (keep) {
        cc.patches_hr = std::move(patches_hr);
        cc.patches_lr = std::move(patches_lr);
        cc.lr_present = lr_flat != nullptr;
        cc.txt_ids = txt;
        cc.blocks.resize(static_cast<std::size_t>(cfg_.depth));
    }

    for (int b = 0; b < cfg_.depth; ++b) {
        const BlockParams<S>& bp = params_.blocks[static_cast<std::size_t>(b)];
        BlockCache<S> bc_local;
        BlockCache<S>& bc = keep ? cc.blocks[static_cast<std::size_t>(b)] : bc_local;

        // Pre-attention: LayerNorm + adaptive modulation per stream.
        auto pre = [&](const Mat<S>& x, const StreamBlockParams<S>& sp,
                       StreamBlockCache<S>& scache) -> Mat<S> {
            scache.mod = sc * sp.wmod + sp.bmod;
            detail::layer_norm(x, scache.ln1_xhat, scache.ln1_rstd);
            const auto scale_a = scache.mod.row(0).segment(0, d);
            const auto shift_a = scache.mod.row(0).segment(d, d);
            Mat<S> a_in =
                (scache.ln1_xhat.array().rowwise() *
                 (scale_a.array() + static_cast<S>(1))).rowwise() +
                shift_a.array();
            scache.x_in = x;
            scache.a_in = a_in;
            return a_in;
        };
        Mat<S> a_img = pre(x_img, bp.img, bc.img);
        Mat<S> a_txt = pre(x_txt, bp.txt, bc.txt);

        Mat<S> attn_img, attn_txt;
        joint_attention_forward(a_img, a_txt, bp.img.attn, bp.txt.attn,
                                cfg_.heads, isolate_attn, attn_img, attn_txt,
                                keep ? &bc : nullptr);

        // Post-attention residual + MLP per stream.
        auto post = [&](Mat<S>& x, const Mat<S>& attn_out,
                        const StreamBlockParams<S>& sp,
                        StreamBlockCache<S>& scache) {
            const auto gate_a = scache.mod.row(0).segment(2 * d, d);
            const auto shift_m = scache.mod.row(0).segment(3 * d, d);
            const auto scale_m = scache.mod.row(0).segment(4 * d, d);
            const auto gate_m = scache.mod.row(0).segment(5 * d, d);
            scache.attn_out = attn_out;
            Mat<S> x2 = x;
            x2.array() += attn_out.array().rowwise() * gate_a.array();
            detail::layer_norm(x2, scache.ln2_xhat, scache.ln2_rstd);
            Mat<S> m_in = (scache.ln2_xhat.array().rowwise() *
                           (scale_m.array() + static_cast<S>(1))).rowwise() +
                          shift_m.array();
            Mat<S> pre_act = (m_in * sp.mlp.w1).rowwise() + sp.mlp.b1.row(0);
            Mat<S> act = pre_act.unaryExpr([](S v) { return detail::gelu(v); });
            Mat<S> mlp_out = (act * sp.mlp.w2).rowwise() + sp.mlp.b2.row(0);
            Mat<S> x_out = x2;
            x_out.array() += mlp_out.array().rowwise() * gate_m.array();
            scache.x_mid = std::move(x2);
            scache.m_in = std::move(m_in);
            scache.mlp_pre = std::move(pre_act);
            scache.mlp_act = std::move(act);
            scache.mlp_out = std::move(mlp_out);
            x = std::move(x_out);
        };
        post(x_img, attn_img, bp.img, bc.img);
        post(x_txt, attn_txt, bp.txt, bc.txt);
    }

    if (keep) {
        cc.final_img = x_img;
        cc.final_txt = x_txt;
    }

    // Output heads over the HR image rows and the text stream.
    ModelOutput<S> out;
    {
        Mat<S> hr = x_img.topRows(n_hr);
        Mat<S> xhat, rstd;
        detail::layer_norm(hr, xhat, rstd);
        Mat<S> vel_tokens =
            (xhat * params_.head_img_w).rowwise() + params_.head_img_b.row(0);
        out.velocity = unpatchify_hr(vel_tokens);
        if (keep) {
            cc.head_img_xhat = std::move(xhat);
            cc.head_img_rstd = std::move(rstd);
        }
    }
    {
        Mat<S> xhat, rstd;
        detail::layer_norm(x_txt, xhat, rstd);
        out.text_logits =
            (xhat * params_.head_txt_w).rowwise() + params_.head_txt_b.row(0);
        if (keep) {
            cc.head_txt_xhat = std::move(xhat);
            cc.head_txt_rstd = std::move(rstd);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward.

template <typename S>
void Model<S>::backward(const Cache<S>& cache, const Mat<S>& dvelocity,
                        const Mat<S>& dlogits, ModelParams<S>& grads) const {
    const int d = cfg_.embed_dim;
    const int n_hr = cfg_.tokens_hr();
    const int n_img = 2 * n_hr;
    const int L = cfg_.seq_len;
    const Eigen::Index dh = d / cfg_.heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    Mat<S> dx_img = Mat<S>::Zero(n_img, d);
    Mat<S> dx_txt = Mat<S>::Zero(L, d);

    // Image head.
    if (dvelocity.size() > 0) {
        Mat<S> dvt = patchify_hr(dvelocity);  // n_hr x p^2C
        grads.head_img_w += cache.head_img_xhat.transpose() * dvt;
        grads.head_img_b += dvt.colwise().sum();
        Mat<S> dxhat = dvt * params_.head_img_w.transpose();
        dx_img.topRows(n_hr) += detail::layer_norm_backward(
            dxhat, cache.head_img_xhat, cache.head_img_rstd);
    }
    // Text head.
    if (dlogits.size() > 0) {
        grads.head_txt_w += cache.head_txt_xhat.transpose() * dlogits;
        grads.head_txt_b += dlogits.colwise().sum();
        Mat<S> dxhat = dlogits * params_.head_txt_w.transpose();
        dx_txt += detail::layer_norm_backward(dxhat, cache.head_txt_xhat,
                                              cache.head_txt_rstd);
    }

    RowVec<S> dsc = RowVec<S>::Zero(d);

    for (int b = cfg_.depth - 1; b >= 0; --b) {
        const BlockParams<S>& bp = params_.blocks[static_cast<std::size_t>(b)];
        BlockParams<S>& bg = grads.blocks[static_cast<std::size_t>(b)];
        const BlockCache<S>& bc = cache.blocks[static_cast<std::size_t>(b)];

        // MLP + second modulation, per stream. Produces dx at x2 and the
        // adjoint of the attention output.
        auto post_back = [&](Mat<S>& dx_out, const StreamBlockParams<S>& sp,
                             StreamBlockParams<S>& sg,
                             const StreamBlockCache<S>& scache,
                             RowVec<S>& dmod) -> Mat<S> {
            const auto gate_a = scache.mod.row(0).segment(2 * d, d);
            const auto scale_m = scache.mod.row(0).segment(4 * d, d);
            const auto gate_m = scache.mod.row(0).segment(5 * d, d);

            dmod.segment(5 * d, d) +=
                (dx_out.array() * scache.mlp_out.array()).colwise().sum().matrix();
            Mat<S> dmlp_out = dx_out.array().rowwise() * gate_m.array();

            sg.mlp.w2 += scache.mlp_act.transpose() * dmlp_out;
            sg.mlp.b2 += dmlp_out.colwise().sum();
            Mat<S> dact = dmlp_out * sp.mlp.w2.transpose();
            Mat<S> dpre = dact.array() * scache.mlp_pre.unaryExpr([](S v) {
                                              return detail::gelu_grad(v);
                                          }).array();
            sg.mlp.w1 += scache.m_in.transpose() * dpre;
            sg.mlp.b1 += dpre.colwise().sum();
            Mat<S> dm_in = dpre * sp.mlp.w1.transpose();

            dmod.segment(4 * d, d) +=
                (dm_in.array() * scache.ln2_xhat.array()).colwise().sum().matrix();
            dmod.segment(3 * d, d) += dm_in.colwise().sum();
            Mat<S> dxhat2 =
                dm_in.array().rowwise() * (scale_m.array() + static_cast<S>(1));
            Mat<S> dx2 = dx_out + detail::layer_norm_backward(
                                      dxhat2, scache.ln2_xhat, scache.ln2_rstd);

            dmod.segment(2 * d, d) +=
                (dx2.array() * scache.attn_out.array()).colwise().sum().matrix();
            Mat<S> dattn_out = dx2.array().rowwise() * gate_a.array();
            dx_out = std::move(dx2);  // now the adjoint at x2 (pre-attn residual)
            return dattn_out;
        };

        RowVec<S> dmod_img = RowVec<S>::Zero(6 * d);
        RowVec<S> dmod_txt = RowVec<S>::Zero(6 * d);
        Mat<S> dattn_img = post_back(dx_img, bp.img, bg.img, bc.img, dmod_img);
        Mat<S> dattn_txt = post_back(dx_txt, bp.txt, bg.txt, bc.txt, dmod_txt);

        // Attention output projections.
        bg.img.attn.wo += bc.img.attn_concat.transpose() * dattn_img;
        bg.img.attn.bo += dattn_img.colwise().sum();
        bg.txt.attn.wo += bc.txt.attn_concat.transpose() * dattn_txt;
        bg.txt.attn.bo += dattn_txt.colwise().sum();

        const Eigen::Index n = n_img + L;
        Mat<S> dconcat(n, d);
        dconcat.topRows(n_img) = dattn_img * bp.img.attn.wo.transpose();
        dconcat.bottomRows(L) = dattn_txt * bp.txt.attn.wo.transpose();

        Mat<S> dq = Mat<S>::Zero(n, d);
        Mat<S> dk = Mat<S>::Zero(n, d);
        Mat<S> dv = Mat<S>::Zero(n, d);
        for (int h = 0; h < cfg_.heads; ++h) {
            const Mat<S>& p = bc.probs[static_cast<std::size_t>(h)];
            auto kh = bc.k.middleCols(h * dh, dh);
            auto qh = bc.q.middleCols(h * dh, dh);
            auto vh = bc.v.middleCols(h * dh, dh);
            auto doh = dconcat.middleCols(h * dh, dh);
            Mat<S> dp = doh * vh.transpose();
            dv.middleCols(h * dh, dh) += p.transpose() * doh;
            // softmax backward, rowwise
            Mat<S> ds(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const S dot = dp.row(i).dot(p.row(i));
                ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
            }
            dq.middleCols(h * dh, dh) += ds * kh * inv_sqrt_dh;
            dk.middleCols(h * dh, dh) += ds.transpose() * qh * inv_sqrt_dh;
        }

        // Q/K/V projections back to the modulated inputs.
        auto qkv_back = [&](Eigen::Index row0, Eigen::Index rows,
                            const StreamBlockParams<S>& sp,
                            StreamBlockParams<S>& sg,
                            const StreamBlockCache<S>& scache) -> Mat<S> {
            auto dq_s = dq.middleRows(row0, rows);
            auto dk_s = dk.middleRows(row0, rows);
            auto dv_s = dv.middleRows(row0, rows);
            sg.attn.wq += scache.a_in.transpose() * dq_s;
            sg.attn.bq += dq_s.colwise().sum();
            sg.attn.wk += scache.a_in.transpose() * dk_s;
            sg.attn.bk += dk_s.colwise().sum();
            sg.attn.wv += scache.a_in.transpose() * dv_s;
            sg.attn.bv += dv_s.colwise().sum();
            return dq_s * sp.attn.wq.transpose() + dk_s * sp.attn.wk.transpose() +
                   dv_s * sp.attn.wv.transpose();
        };
        Mat<S> da_img = qkv_back(0, n_img, bp.img, bg.img, bc.img);
        Mat<S> da_txt = qkv_back(n_img, L, bp.txt, bg.txt, bc.txt);

        // First modulation + LayerNorm back to the block input.
        auto pre_back = [&](Mat<S>& dx, const Mat<S>& da,
                            const StreamBlockCache<S>& scache, RowVec<S>& dmod) {
            const auto scale_a = scache.mod.row(0).segment(0, d);
            dmod.segment(0, d) +=
                (da.array() * scache.ln1_xhat.array()).colwise().sum().matrix();
            dmod.segment(d, d) += da.colwise().sum();
            Mat<S> dxhat =
                da.array().rowwise() * (scale_a.array() + static_cast<S>(1));
            dx += detail::layer_norm_backward(dxhat, scache.ln1_xhat,
                                              scache.ln1_rstd);
        };
        pre_back(dx_img, da_img, bc.img, dmod_img);
        pre_back(dx_txt, da_txt, bc.txt, dmod_txt);

        // Modulation projections and the shared conditioning adjoint.
        bg.img.wmod += cache.silu_cond.transpose() * dmod_img;
        bg.img.bmod += dmod_img;
        bg.txt.wmod += cache.silu_cond.transpose() * dmod_txt;
        bg.txt.bmod += dmod_txt;
        dsc += dmod_img * bp.img.wmod.transpose();
        dsc += dmod_txt * bp.txt.wmod.transpose();
    }

    // Time-conditioning MLP.
    {
        RowVec<S> dcond =
            dsc.array() * cache.cond.unaryExpr([](S x) {
                              return detail::silu_grad(x);
                          }).array();
        grads.time_w2 += cache.time_a1.transpose() * dcond;
        grads.time_b2 += dcond;
        RowVec<S> da1 = dcond * params_.time_w2.transpose();
        RowVec<S> dh1 =
            da1.array() * cache.time_h1.unaryExpr([](S x) {
                              return detail::silu_grad(x);
                          }).array();
        grads.time_w1 += cache.t_emb.transpose() * dh1;
        grads.time_b1 += dh1;
    }

    // Embeddings.
    {
        auto dx_hr = dx_img.topRows(n_hr);
        grads.patch_hr_w += cache.patches_hr.transpose() * dx_hr;
        grads.patch_hr_b += dx_hr.colwise().sum();
        grads.pos_hr += dx_hr;
        grads.type_hr += dx_hr.colwise().sum();

        auto dx_lr = dx_img.bottomRows(n_hr);
        grads.pos_lr += dx_lr;
        grads.type_lr += dx_lr.colwise().sum();
        if (cache.lr_present) {
            grads.patch_lr_w += cache.patches_lr.transpose() * dx_lr;
            grads.patch_lr_b += dx_lr.colwise().sum();
        } else {
            grads.null_lr += dx_lr.colwise().sum();
        }

        grads.pos_txt += dx_txt;
        for (int j = 0; j < L; ++j) {
            grads.tok_embed.row(cache.txt_ids[static_cast<std::size_t>(j)]) +=
                dx_txt.row(j);
        }
    }
}

}  // namespace dualtsr::model
