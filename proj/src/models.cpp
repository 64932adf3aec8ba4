#include "tsf/models.hpp"

#include <algorithm>
#include <cmath>

namespace tsf {

// ---------------------------------------------------------------------------
// ModelKind / ModelSpec
// ---------------------------------------------------------------------------

ModelKind model_kind_from_string(const std::string& name) {
    if (name == "vanilla") return ModelKind::vanilla;
    if (name == "informer") return ModelKind::informer;
    if (name == "autoformer") return ModelKind::autoformer;
    if (name == "reformer") return ModelKind::reformer;
    if (name == "etsformer") return ModelKind::etsformer;
    if (name == "lstm") return ModelKind::lstm;
    if (name == "cnn") return ModelKind::cnn;
    throw ConfigError("unknown model kind: " + name);
}

std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::vanilla: return "vanilla";
    case ModelKind::informer: return "informer";
    case ModelKind::autoformer: return "autoformer";
    case ModelKind::reformer: return "reformer";
    case ModelKind::etsformer: return "etsformer";
    case ModelKind::lstm: return "lstm";
    case ModelKind::cnn: return "cnn";
    }
    return "?";
}

bool is_transformer_kind(ModelKind kind) {
    return kind != ModelKind::lstm && kind != ModelKind::cnn;
}

const std::vector<ModelKind>& all_model_kinds() {
    static const std::vector<ModelKind> kinds = {
        ModelKind::vanilla,   ModelKind::informer, ModelKind::autoformer, ModelKind::reformer,
        ModelKind::etsformer, ModelKind::lstm,     ModelKind::cnn};
    return kinds;
}

const std::vector<int>& ModelSpec::standard_horizons() {
    static const std::vector<int> h = {96, 192, 336, 720};
    return h;
}

void ModelSpec::validate() const {
    if (lookback < 1) throw ConfigError("ModelSpec: lookback must be >= 1");
    if (horizon < 1) throw ConfigError("ModelSpec: horizon must be >= 1");
    if (label_len < 0 || label_len > lookback) {
        throw ConfigError("ModelSpec: label_len must lie in [0, lookback]");
    }
    if (n_features < 1 || n_targets < 1) throw ConfigError("ModelSpec: feature/target counts must be positive");
    if (n_time_features < 0 || n_time_features >= n_features) {
        throw ConfigError("ModelSpec: n_time_features must be < n_features");
    }
    if (target_column < 0 || target_column >= n_features) {
        throw ConfigError("ModelSpec: target_column out of range");
    }
    if (is_transformer_kind(kind)) {
        if (d_model < 1 || d_ff < 1) throw ConfigError("ModelSpec: d_model/d_ff must be positive");
        if (d_model % n_heads != 0) {
            throw ConfigError("ModelSpec: d_model " + std::to_string(d_model) +
                              " not divisible by n_heads " + std::to_string(n_heads));
        }
        if (n_encoder_layers < 1) throw ConfigError("ModelSpec: need at least one encoder layer");
    }
    switch (kind) {
    case ModelKind::autoformer:
        if (decomp_kernel < 1 || decomp_kernel % 2 == 0) {
            throw ConfigError("ModelSpec: decomposition kernel must be odd and >= 1");
        }
        if (!(autocorr_factor > 0.0)) throw ConfigError("ModelSpec: autocorr_factor must be > 0");
        break;
    case ModelKind::reformer:
        lsh.validate();
        break;
    case ModelKind::informer:
        prob_sparse.validate();
        break;
    case ModelKind::etsformer:
        ets.validate();
        if (ets.top_k_freq > lookback / 2) {
            throw ConfigError("ModelSpec: ets.top_k_freq must be <= lookback/2");
        }
        break;
    case ModelKind::cnn:
        if (cnn_channels.empty()) throw ConfigError("ModelSpec: cnn_channels is empty");
        if (cnn_kernel < 1) throw ConfigError("ModelSpec: cnn_kernel must be >= 1");
        break;
    case ModelKind::lstm:
        if (lstm_units < 1 || lstm_layers < 1) throw ConfigError("ModelSpec: lstm plan invalid");
        break;
    default:
        break;
    }
}

// ---------------------------------------------------------------------------
// series_decompose
// ---------------------------------------------------------------------------

std::pair<Var, Var> series_decompose(Tape& t, Var x, int kernel) {
    const Shape& xs = t.shape(x);
    if (xs.size() != 2) throw ShapeError("series_decompose: expected [L x d]");
    if (kernel < 1 || kernel % 2 == 0) {
        throw ShapeError("series_decompose: kernel must be odd and >= 1, got " + std::to_string(kernel));
    }
    if (kernel == 1) {
        Var seasonal = t.sub(x, x); // zeros with gradient ties
        Var trend = t.sub(x, seasonal);
        return {seasonal, trend};
    }
    const int length = xs[0];
    const int half = kernel / 2;

    // edge-replicated padding, then a running-sum difference for the mean
    std::vector<int> padded(static_cast<std::size_t>(length + kernel - 1));
    for (int i = 0; i < length + kernel - 1; ++i) {
        padded[static_cast<std::size_t>(i)] = std::clamp(i - half, 0, length - 1);
    }
    Var pad = t.pick_rows(x, padded);
    Var cs = t.cumsum_rows(pad);
    Var zero = t.constant(Tensor::zeros({1, xs[1]}));
    Var cs2 = t.concat_rows({zero, cs}); // cs2[i] = sum of first i padded rows
    std::vector<int> hi(static_cast<std::size_t>(length)), lo(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        hi[static_cast<std::size_t>(i)] = i + kernel;
        lo[static_cast<std::size_t>(i)] = i;
    }
    Var avg = t.scale(t.sub(t.pick_rows(cs2, hi), t.pick_rows(cs2, lo)), 1.0 / kernel);
    Var seasonal = t.sub(x, avg);
    // recompute the trend from the seasonal so the pair sums back to x
    Var trend = t.sub(x, seasonal);
    return {seasonal, trend};
}

// ---------------------------------------------------------------------------
// shared building blocks
// ---------------------------------------------------------------------------

namespace {

void ensure_finite(Tape& t, Var v, const std::string& layer) {
    if (!t.all_finite(v)) {
        throw NumericError("model forward: non-finite activations in " + layer);
    }
}

// decoder input tokens: label-window rows followed by placeholder rows that
// carry only the (known) future time features
Var decoder_tokens(Tape& t, Var window, const Tensor& horizon_time, const ModelSpec& spec) {
    if (horizon_time.shape() != Shape{spec.horizon, spec.n_time_features}) {
        throw ShapeError("decoder tokens: horizon time features must be [H x " +
                         std::to_string(spec.n_time_features) + "], got " +
                         shape_str(horizon_time.shape()));
    }
    Tensor placeholder({spec.horizon, spec.n_features});
    const int time_base = spec.n_features - spec.n_time_features;
    for (int h = 0; h < spec.horizon; ++h) {
        for (int j = 0; j < spec.n_time_features; ++j) {
            placeholder.data()[static_cast<std::size_t>(h) * spec.n_features + time_base + j] =
                horizon_time.data()[static_cast<std::size_t>(h) * spec.n_time_features + j];
        }
    }
    Var ph = t.constant(std::move(placeholder));
    if (spec.label_len == 0) return ph;
    Var label = t.slice_rows(window, spec.lookback - spec.label_len, spec.label_len);
    return t.concat_rows({label, ph});
}

struct EncoderLayer {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;

    EncoderLayer(const ModelSpec& spec, Rng& rng)
        : ln1(spec.d_model), ln2(spec.d_model),
          attn(AttentionConfig{spec.d_model, spec.n_heads, false}, rng),
          ffn(spec.d_model, spec.d_ff, Activation::gelu, rng) {}

    Var apply(Tape& t, Var x) const {
        Var h = ln1.apply(t, x);
        x = t.add(x, attn.apply(t, h, h));
        x = t.add(x, ffn.apply(t, ln2.apply(t, x)));
        return x;
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        ln1.collect(prefix + ".ln1", out);
        attn.collect(prefix + ".attn", out);
        ln2.collect(prefix + ".ln2", out);
        ffn.collect(prefix + ".ffn", out);
    }
};

struct DecoderLayer {
    LayerNorm ln1, ln2, ln3;
    MultiHeadAttention self_attn;
    MultiHeadAttention cross_attn;
    FeedForward ffn;

    DecoderLayer(const ModelSpec& spec, Rng& rng)
        : ln1(spec.d_model), ln2(spec.d_model), ln3(spec.d_model),
          self_attn(AttentionConfig{spec.d_model, spec.n_heads, true}, rng),
          cross_attn(AttentionConfig{spec.d_model, spec.n_heads, false}, rng),
          ffn(spec.d_model, spec.d_ff, Activation::gelu, rng) {}

    Var apply(Tape& t, Var x, Var memory) const {
        Var h = ln1.apply(t, x);
        x = t.add(x, self_attn.apply(t, h, h));
        x = t.add(x, cross_attn.apply(t, ln2.apply(t, x), memory));
        x = t.add(x, ffn.apply(t, ln3.apply(t, x)));
        return x;
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        ln1.collect(prefix + ".ln1", out);
        self_attn.collect(prefix + ".self", out);
        ln2.collect(prefix + ".ln2", out);
        cross_attn.collect(prefix + ".cross", out);
        ln3.collect(prefix + ".ln3", out);
        ffn.collect(prefix + ".ffn", out);
    }
};

// multi-head wrapper around the ProbSparse kernel
struct ProbSparseMha {
    AttentionConfig cfg;
    ProbSparseConfig ps;
    Linear wq, wk, wv, wo;
    std::uint64_t seed = 0;
    bool causal = false;

    ProbSparseMha() = default;
    ProbSparseMha(const ModelSpec& spec, bool causal_, std::uint64_t seed_, Rng& rng)
        : cfg{spec.d_model, spec.n_heads, causal_}, ps(spec.prob_sparse),
          wq(spec.d_model, spec.d_model, rng), wk(spec.d_model, spec.d_model, rng),
          wv(spec.d_model, spec.d_model, rng), wo(spec.d_model, spec.d_model, rng),
          seed(seed_), causal(causal_) {}

    Var apply(Tape& t, Var x_q, Var x_kv) const {
        Var q = wq.apply(t, x_q);
        Var k = wk.apply(t, x_kv);
        Var v = wv.apply(t, x_kv);
        const int dk = cfg.d_k();
        std::vector<Var> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            Var qh = t.slice_cols(q, h * dk, dk);
            Var kh = t.slice_cols(k, h * dk, dk);
            Var vh = t.slice_cols(v, h * dk, dk);
            heads.push_back(prob_sparse_attention(t, qh, kh, vh, ps, causal,
                                                  derive_seed(seed, "head" + std::to_string(h))));
        }
        return wo.apply(t, cfg.n_heads == 1 ? heads[0] : t.concat_cols(heads));
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        wq.collect(prefix + ".wq", out);
        wk.collect(prefix + ".wk", out);
        wv.collect(prefix + ".wv", out);
        wo.collect(prefix + ".wo", out);
    }
};

// multi-head wrapper around the auto-correlation kernel; cross attention
// resizes the memory stream to the query length (truncate or zero-pad)
struct AutoCorrMha {
    AttentionConfig cfg;
    double c_factor = 1.0;
    bool exclude_zero = false;
    Linear wq, wk, wv, wo;

    AutoCorrMha() = default;
    AutoCorrMha(const ModelSpec& spec, Rng& rng)
        : cfg{spec.d_model, spec.n_heads, false}, c_factor(spec.autocorr_factor),
          exclude_zero(spec.autocorr_exclude_zero), wq(spec.d_model, spec.d_model, rng),
          wk(spec.d_model, spec.d_model, rng), wv(spec.d_model, spec.d_model, rng),
          wo(spec.d_model, spec.d_model, rng) {}

    static Var resize_rows(Tape& t, Var x, int rows) {
        const int have = t.shape(x)[0];
        if (have == rows) return x;
        if (have > rows) return t.slice_rows(x, 0, rows);
        Var pad = t.constant(Tensor::zeros({rows - have, t.shape(x)[1]}));
        return t.concat_rows({x, pad});
    }

    Var apply(Tape& t, Var x_q, Var x_kv) const {
        const int lq = t.shape(x_q)[0];
        Var q = wq.apply(t, x_q);
        Var k = resize_rows(t, wk.apply(t, x_kv), lq);
        Var v = resize_rows(t, wv.apply(t, x_kv), lq);
        const int dk = cfg.d_k();
        std::vector<Var> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            Var qh = t.slice_cols(q, h * dk, dk);
            Var kh = t.slice_cols(k, h * dk, dk);
            Var vh = t.slice_cols(v, h * dk, dk);
            heads.push_back(auto_correlation_attention(t, qh, kh, vh, c_factor, exclude_zero));
        }
        return wo.apply(t, cfg.n_heads == 1 ? heads[0] : t.concat_cols(heads));
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        wq.collect(prefix + ".wq", out);
        wk.collect(prefix + ".wk", out);
        wv.collect(prefix + ".wv", out);
        wo.collect(prefix + ".wo", out);
    }
};

// pre-norm LSH attention sublayer (F of a reversible block)
class LshAttnSublayer : public Sublayer {
public:
    LshAttnSublayer(const ModelSpec& spec, std::uint64_t seed, Rng& rng)
        : ln_(spec.d_model), wqk_(spec.d_model, spec.d_model, rng),
          wv_(spec.d_model, spec.d_model, rng), wo_(spec.d_model, spec.d_model, rng),
          n_heads_(spec.n_heads), cfg_(spec.lsh) {
        cfg_.seed = seed;
    }

    Var apply(Tape& t, Var x) const override {
        Var h = ln_.apply(t, x);
        Var qk = wqk_.apply(t, h);
        Var v = wv_.apply(t, h);
        const int dk = t.shape(qk)[1] / n_heads_;
        std::vector<Var> heads;
        for (int i = 0; i < n_heads_; ++i) {
            LshConfig head_cfg = cfg_;
            head_cfg.seed = derive_seed(cfg_.seed, "head" + std::to_string(i));
            heads.push_back(lsh_attention(t, t.slice_cols(qk, i * dk, dk),
                                          t.slice_cols(v, i * dk, dk), head_cfg, false));
        }
        return wo_.apply(t, n_heads_ == 1 ? heads[0] : t.concat_cols(heads));
    }

    void collect(const std::string& prefix, NamedParams& out) const override {
        ln_.collect(prefix + ".ln", out);
        wqk_.collect(prefix + ".wqk", out);
        wv_.collect(prefix + ".wv", out);
        wo_.collect(prefix + ".wo", out);
    }

private:
    LayerNorm ln_;
    Linear wqk_, wv_, wo_;
    int n_heads_;
    LshConfig cfg_;
};

// pre-norm feed-forward sublayer (G of a reversible block)
class FfnSublayer : public Sublayer {
public:
    FfnSublayer(int d_model, int d_ff, Rng& rng)
        : ln_(d_model), ffn_(d_model, d_ff, Activation::gelu, rng) {}

    Var apply(Tape& t, Var x) const override {
        return ffn_.apply(t, ln_.apply(t, x));
    }

    void collect(const std::string& prefix, NamedParams& out) const override {
        ln_.collect(prefix + ".ln", out);
        ffn_.collect(prefix + ".ffn", out);
    }

private:
    LayerNorm ln_;
    FeedForward ffn_;
};

} // namespace

// ---------------------------------------------------------------------------
// ForecastModel base
// ---------------------------------------------------------------------------

Var ForecastModel::forward(Tape& t, Var window, const Tensor& horizon_time) {
    if (t.shape(window) != Shape{spec_.lookback, spec_.n_features}) {
        throw ShapeError("forward: window must be [" + std::to_string(spec_.lookback) + " x " +
                         std::to_string(spec_.n_features) + "], got " + shape_str(t.shape(window)));
    }
    Var out = do_forward(t, window, horizon_time);
    if (t.shape(out) != Shape{spec_.horizon, spec_.n_targets}) {
        throw ShapeError("forward: output shape " + shape_str(t.shape(out)) + " violates [H x n_targets]");
    }
    ensure_finite(t, out, "output head");
    return out;
}

Tensor ForecastModel::predict(const Tensor& window, const Tensor& horizon_time) {
    Tape t;
    Var out = forward(t, t.constant(window), horizon_time);
    return Tensor(t.shape(out), t.value(out));
}

// ---------------------------------------------------------------------------
// Vanilla transformer / Informer
// ---------------------------------------------------------------------------

namespace {

class VanillaModel : public ForecastModel {
public:
    VanillaModel(const ModelSpec& spec, Rng& rng)
        : enc_embed_(spec.n_features, spec.d_model, rng),
          dec_embed_(spec.n_features, spec.d_model, rng), enc_ln_(spec.d_model),
          dec_ln_(spec.d_model), head_(spec.d_model, spec.n_targets, rng) {
        spec_ = spec;
        for (int i = 0; i < spec.n_encoder_layers; ++i) enc_.emplace_back(spec, rng);
        for (int i = 0; i < spec.n_decoder_layers; ++i) dec_.emplace_back(spec, rng);
        enc_embed_.collect("enc_embed", params_);
        for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].collect("enc" + std::to_string(i), params_);
        enc_ln_.collect("enc_ln", params_);
        dec_embed_.collect("dec_embed", params_);
        for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].collect("dec" + std::to_string(i), params_);
        dec_ln_.collect("dec_ln", params_);
        head_.collect("head", params_);
    }

protected:
    Var do_forward(Tape& t, Var window, const Tensor& horizon_time) override {
        Var x = enc_embed_.apply(t, window);
        x = t.add(x, t.constant(positional_encoding(spec_.lookback, spec_.d_model)));
        ensure_finite(t, x, "encoder embedding");
        for (std::size_t i = 0; i < enc_.size(); ++i) {
            x = enc_[i].apply(t, x);
            ensure_finite(t, x, "encoder layer " + std::to_string(i));
        }
        Var memory = enc_ln_.apply(t, x);

        Var tokens = decoder_tokens(t, window, horizon_time, spec_);
        Var y = dec_embed_.apply(t, tokens);
        y = t.add(y, t.constant(positional_encoding(spec_.label_len + spec_.horizon, spec_.d_model)));
        for (std::size_t i = 0; i < dec_.size(); ++i) {
            y = dec_[i].apply(t, y, memory);
            ensure_finite(t, y, "decoder layer " + std::to_string(i));
        }
        y = dec_ln_.apply(t, y);
        Var all = head_.apply(t, y);
        return t.slice_rows(all, spec_.label_len, spec_.horizon);
    }

private:
    Linear enc_embed_, dec_embed_;
    std::vector<EncoderLayer> enc_;
    std::vector<DecoderLayer> dec_;
    LayerNorm enc_ln_, dec_ln_;
    Linear head_;
};

class InformerModel : public ForecastModel {
public:
    InformerModel(const ModelSpec& spec, std::uint64_t seed, Rng& rng)
        : enc_embed_(spec.n_features, spec.d_model, rng),
          dec_embed_(spec.n_features, spec.d_model, rng), enc_ln_(spec.d_model),
          dec_ln_(spec.d_model), head_(spec.d_model, spec.n_targets, rng) {
        spec_ = spec;
        for (int i = 0; i < spec.n_encoder_layers; ++i) {
            enc_attn_.emplace_back(spec, false, derive_seed(seed, "enc_ps" + std::to_string(i)), rng);
            enc_ln1_.emplace_back(spec.d_model);
            enc_ln2_.emplace_back(spec.d_model);
            enc_ffn_.emplace_back(spec.d_model, spec.d_ff, Activation::gelu, rng);
        }
        for (int i = 0; i < spec.n_decoder_layers; ++i) {
            dec_self_.emplace_back(spec, true, derive_seed(seed, "dec_ps" + std::to_string(i)), rng);
            dec_cross_.emplace_back(AttentionConfig{spec.d_model, spec.n_heads, false}, rng);
            dec_ln1_.emplace_back(spec.d_model);
            dec_ln2_.emplace_back(spec.d_model);
            dec_ln3_.emplace_back(spec.d_model);
            dec_ffn_.emplace_back(spec.d_model, spec.d_ff, Activation::gelu, rng);
        }
        enc_embed_.collect("enc_embed", params_);
        for (std::size_t i = 0; i < enc_attn_.size(); ++i) {
            const std::string p = "enc" + std::to_string(i);
            enc_ln1_[i].collect(p + ".ln1", params_);
            enc_attn_[i].collect(p + ".attn", params_);
            enc_ln2_[i].collect(p + ".ln2", params_);
            enc_ffn_[i].collect(p + ".ffn", params_);
        }
        enc_ln_.collect("enc_ln", params_);
        dec_embed_.collect("dec_embed", params_);
        for (std::size_t i = 0; i < dec_self_.size(); ++i) {
            const std::string p = "dec" + std::to_string(i);
            dec_ln1_[i].collect(p + ".ln1", params_);
            dec_self_[i].collect(p + ".self", params_);
            dec_ln2_[i].collect(p + ".ln2", params_);
            dec_cross_[i].collect(p + ".cross", params_);
            dec_ln3_[i].collect(p + ".ln3", params_);
            dec_ffn_[i].collect(p + ".ffn", params_);
        }
        dec_ln_.collect("dec_ln", params_);
        head_.collect("head", params_);
    }

protected:
    Var do_forward(Tape& t, Var window, const Tensor& horizon_time) override {
        Var x = enc_embed_.apply(t, window);
        x = t.add(x, t.constant(positional_encoding(spec_.lookback, spec_.d_model)));
        ensure_finite(t, x, "encoder embedding");
        for (std::size_t i = 0; i < enc_attn_.size(); ++i) {
            Var h = enc_ln1_[i].apply(t, x);
            x = t.add(x, enc_attn_[i].apply(t, h, h));
            x = t.add(x, enc_ffn_[i].apply(t, enc_ln2_[i].apply(t, x)));
            ensure_finite(t, x, "encoder layer " + std::to_string(i));
        }
        Var memory = enc_ln_.apply(t, x);

        // generative one-shot decoding: label history plus H placeholders
        Var tokens = decoder_tokens(t, window, horizon_time, spec_);
        Var y = dec_embed_.apply(t, tokens);
        y = t.add(y, t.constant(positional_encoding(spec_.label_len + spec_.horizon, spec_.d_model)));
        for (std::size_t i = 0; i < dec_self_.size(); ++i) {
            Var h = dec_ln1_[i].apply(t, y);
            y = t.add(y, dec_self_[i].apply(t, h, h));
            y = t.add(y, dec_cross_[i].apply(t, dec_ln2_[i].apply(t, y), memory));
            y = t.add(y, dec_ffn_[i].apply(t, dec_ln3_[i].apply(t, y)));
            ensure_finite(t, y, "decoder layer " + std::to_string(i));
        }
        y = dec_ln_.apply(t, y);
        Var all = head_.apply(t, y);
        return t.slice_rows(all, spec_.label_len, spec_.horizon);
    }

private:
    Linear enc_embed_, dec_embed_;
    std::vector<ProbSparseMha> enc_attn_;
    std::vector<LayerNorm> enc_ln1_, enc_ln2_;
    std::vector<FeedForward> enc_ffn_;
    std::vector<ProbSparseMha> dec_self_;
    std::vector<MultiHeadAttention> dec_cross_;
    std::vector<LayerNorm> dec_ln1_, dec_ln2_, dec_ln3_;
    std::vector<FeedForward> dec_ffn_;
    LayerNorm enc_ln_, dec_ln_;
    Linear head_;
};

// ---------------------------------------------------------------------------
// Autoformer
// ---------------------------------------------------------------------------

class AutoformerModel : public ForecastModel {
public:
    AutoformerModel(const ModelSpec& spec, Rng& rng)
        : enc_embed_(spec.n_features, spec.d_model, rng),
          dec_embed_(spec.n_features, spec.d_model, rng),
          seasonal_head_(spec.d_model, spec.n_targets, rng),
          trend_head_(spec.d_model, spec.n_targets, rng) {
        spec_ = spec;
        for (int i = 0; i < spec.n_encoder_layers; ++i) {
            enc_attn_.emplace_back(spec, rng);
            enc_ffn_.emplace_back(spec.d_model, spec.d_ff, Activation::gelu, rng);
        }
        for (int i = 0; i < spec.n_decoder_layers; ++i) {
            dec_self_.emplace_back(spec, rng);
            dec_cross_.emplace_back(spec, rng);
            dec_ffn_.emplace_back(spec.d_model, spec.d_ff, Activation::gelu, rng);
        }
        enc_embed_.collect("enc_embed", params_);
        for (std::size_t i = 0; i < enc_attn_.size(); ++i) {
            enc_attn_[i].collect("enc" + std::to_string(i) + ".attn", params_);
            enc_ffn_[i].collect("enc" + std::to_string(i) + ".ffn", params_);
        }
        dec_embed_.collect("dec_embed", params_);
        for (std::size_t i = 0; i < dec_self_.size(); ++i) {
            const std::string p = "dec" + std::to_string(i);
            dec_self_[i].collect(p + ".self", params_);
            dec_cross_[i].collect(p + ".cross", params_);
            dec_ffn_[i].collect(p + ".ffn", params_);
        }
        seasonal_head_.collect("seasonal_head", params_);
        trend_head_.collect("trend_head", params_);
    }

protected:
    Var do_forward(Tape& t, Var window, const Tensor& horizon_time) override {
        const int k = spec_.decomp_kernel;
        Var x = enc_embed_.apply(t, window);
        ensure_finite(t, x, "encoder embedding");
        for (std::size_t i = 0; i < enc_attn_.size(); ++i) {
            x = t.add(x, enc_attn_[i].apply(t, x, x));
            x = series_decompose(t, x, k).first;
            x = t.add(x, enc_ffn_[i].apply(t, x));
            x = series_decompose(t, x, k).first;
            ensure_finite(t, x, "encoder layer " + std::to_string(i));
        }

        Var tokens = decoder_tokens(t, window, horizon_time, spec_);
        Var e = dec_embed_.apply(t, tokens);
        auto [seasonal, trend] = series_decompose(t, e, k);
        for (std::size_t i = 0; i < dec_self_.size(); ++i) {
            seasonal = t.add(seasonal, dec_self_[i].apply(t, seasonal, seasonal));
            auto d1 = series_decompose(t, seasonal, k);
            seasonal = d1.first;
            seasonal = t.add(seasonal, dec_cross_[i].apply(t, seasonal, x));
            auto d2 = series_decompose(t, seasonal, k);
            seasonal = d2.first;
            seasonal = t.add(seasonal, dec_ffn_[i].apply(t, seasonal));
            auto d3 = series_decompose(t, seasonal, k);
            seasonal = d3.first;
            // trend accumulates additively across sublayers
            trend = t.add(trend, t.add(t.add(d1.second, d2.second), d3.second));
            ensure_finite(t, seasonal, "decoder layer " + std::to_string(i));
        }
        Var out = t.add(seasonal_head_.apply(t, seasonal), trend_head_.apply(t, trend));
        return t.slice_rows(out, spec_.label_len, spec_.horizon);
    }

private:
    Linear enc_embed_, dec_embed_;
    std::vector<AutoCorrMha> enc_attn_;
    std::vector<FeedForward> enc_ffn_;
    std::vector<AutoCorrMha> dec_self_, dec_cross_;
    std::vector<FeedForward> dec_ffn_;
    Linear seasonal_head_, trend_head_;
};

// ---------------------------------------------------------------------------
// Reformer
// ---------------------------------------------------------------------------

class ReformerModel : public ForecastModel {
public:
    ReformerModel(const ModelSpec& spec, std::uint64_t seed, Rng& rng)
        : embed_(spec.n_features, spec.d_model, rng), final_ln_(spec.d_model),
          head_(spec.lookback * spec.d_model, spec.horizon * spec.n_targets, rng) {
        spec_ = spec;
        for (int i = 0; i < spec.n_encoder_layers; ++i) {
            RevBlock block;
            block.f = std::make_shared<LshAttnSublayer>(
                spec, derive_seed(seed, "lsh_layer" + std::to_string(i)), rng);
            block.g = std::make_shared<FfnSublayer>(spec.d_model, spec.d_ff, rng);
            stack_.blocks.push_back(std::move(block));
        }
        embed_.collect("embed", params_);
        stack_.collect("rev", params_);
        final_ln_.collect("final_ln", params_);
        head_.collect("head", params_);
    }

protected:
    Var do_forward(Tape& t, Var window, const Tensor&) override {
        Var e = embed_.apply(t, window);
        e = t.add(e, t.constant(positional_encoding(spec_.lookback, spec_.d_model)));
        ensure_finite(t, e, "embedding");
        // pair stream: both halves start as the embedded input
        auto [y1, y2] = stack_.apply(t, e, e);
        Var merged = t.scale(t.add(y1, y2), 0.5);
        ensure_finite(t, merged, "reversible stack");
        Var z = final_ln_.apply(t, merged);
        Var flat = t.reshape(z, {1, spec_.lookback * spec_.d_model});
        return t.reshape(head_.apply(t, flat), {spec_.horizon, spec_.n_targets});
    }

private:
    Linear embed_;
    RevStack stack_;
    LayerNorm final_ln_;
    Linear head_;
};

// ---------------------------------------------------------------------------
// ETSformer
// ---------------------------------------------------------------------------

class EtsformerModel : public ForecastModel {
public:
    EtsformerModel(const ModelSpec& spec, Rng& rng)
        : embed_(spec.n_features, spec.d_model, rng) {
        spec_ = spec;
        auto logit = [](double p) { return std::log(p / (1.0 - p)); };
        level_alpha_ = make_param(Tensor::scalar(logit(spec.ets.alpha)));
        seasonal_damp_ = make_param(Tensor::scalar(logit(spec.ets.gamma)));
        level_alpha_->set_requires_grad(true);
        seasonal_damp_->set_requires_grad(true);
        for (int i = 0; i < spec.n_encoder_layers; ++i) {
            growth_alpha_.push_back(make_param(Tensor::scalar(logit(spec.ets.beta))));
            growth_alpha_.back()->set_requires_grad(true);
            growth_init_.push_back(make_param(Tensor::zeros({1, spec.d_model})));
            growth_init_.back()->set_requires_grad(true);
            stack_ln_.emplace_back(spec.d_model);
            stack_ffn_.emplace_back(spec.d_model, spec.d_ff, Activation::gelu, rng);
        }
        // observation-space projections start at zero so the level stream is
        // the whole forecast at initialization
        season_obs_ = Linear::zeros(spec.d_model, 1);
        growth_obs_ = Linear::zeros(spec.d_model, 1);
        horizon_out_ = Linear::zeros(spec.d_model, spec.n_targets);

        embed_.collect("embed", params_);
        params_.emplace_back("level.alpha", level_alpha_);
        params_.emplace_back("level.seasonal_damp", seasonal_damp_);
        for (std::size_t i = 0; i < growth_alpha_.size(); ++i) {
            const std::string p = "stack" + std::to_string(i);
            params_.emplace_back(p + ".growth_alpha", growth_alpha_[i]);
            params_.emplace_back(p + ".growth_init", growth_init_[i]);
            stack_ln_[i].collect(p + ".ln", params_);
            stack_ffn_[i].collect(p + ".ffn", params_);
        }
        season_obs_.collect("season_obs", params_);
        growth_obs_.collect("growth_obs", params_);
        horizon_out_.collect("horizon_out", params_);
    }

protected:
    Var do_forward(Tape& t, Var window, const Tensor&) override {
        const int length = spec_.lookback;
        const int horizon = spec_.horizon;
        const int d = spec_.d_model;

        Var z = embed_.apply(t, window);
        ensure_finite(t, z, "embedding");

        Var horizon_latents; // sum over stacks of growth + seasonal horizon latents
        Var season_acc;      // sum of in-window seasonal latents
        Var growth_acc;      // sum of growth latents
        Tensor hcoef({horizon, 1});
        for (int h = 0; h < horizon; ++h) hcoef.data()[static_cast<std::size_t>(h)] = h + 1.0;
        Var hcoef_c = t.constant(hcoef);

        for (std::size_t i = 0; i < stack_ffn_.size(); ++i) {
            auto [season_in, season_out] =
                frequency_attention(t, z, spec_.ets.top_k_freq, horizon);
            z = t.sub(z, season_in);

            // growth from first differences of the deseasonalized stream
            Var shifted = t.concat_rows({t.constant(Tensor::zeros({1, d})),
                                         t.slice_rows(z, 0, length - 1)});
            Var diff = t.sub(z, shifted);
            Var alpha = t.sigmoid(t.leaf(growth_alpha_[i]));
            Var growth = exponential_smoothing_attention(t, diff, alpha, t.leaf(growth_init_[i]));
            z = t.sub(z, growth);
            z = t.add(z, stack_ffn_[i].apply(t, stack_ln_[i].apply(t, z)));
            ensure_finite(t, z, "stack " + std::to_string(i));

            Var growth_last = t.slice_rows(growth, length - 1, 1);
            Var growth_horizon = t.mul(t.repeat_row(growth_last, horizon), hcoef_c);
            Var lat = t.add(growth_horizon, season_out);
            horizon_latents = i == 0 ? lat : t.add(horizon_latents, lat);
            season_acc = i == 0 ? season_in : t.add(season_acc, season_in);
            growth_acc = i == 0 ? growth : t.add(growth_acc, growth);
        }

        // level stream on the target channel, per the additive smoothing
        // recursion, with seasonal/growth corrections projected from the
        // latents (zero-initialized projections)
        Var y = t.slice_cols(window, spec_.target_column, 1); // [L x 1]
        Var s_hat = t.mul(season_obs_.apply(t, season_acc),
                          t.reshape(t.sigmoid(t.leaf(seasonal_damp_)), {1, 1}));
        Var b_hat = growth_obs_.apply(t, growth_acc); // [L x 1]
        Var alpha = t.reshape(t.sigmoid(t.leaf(level_alpha_)), {1, 1});
        Var one_minus = t.sub(t.constant(Tensor({1, 1}, {1.0})), alpha);

        Var level = t.slice_rows(y, 0, 1); // e_{-1} = first target value
        Var b_prev = t.constant(Tensor::zeros({1, 1}));
        for (int step = 0; step < length; ++step) {
            Var deseason = t.sub(t.slice_rows(y, step, 1), t.slice_rows(s_hat, step, 1));
            level = t.add(t.mul(alpha, deseason), t.mul(one_minus, t.add(level, b_prev)));
            b_prev = t.slice_rows(b_hat, step, 1);
        }

        Var level_fc = t.add(t.repeat_row(level, horizon), t.mul(t.repeat_row(b_prev, horizon), hcoef_c));
        return t.add(level_fc, horizon_out_.apply(t, horizon_latents));
    }

private:
    Linear embed_;
    Param level_alpha_, seasonal_damp_;
    std::vector<Param> growth_alpha_;
    std::vector<Param> growth_init_;
    std::vector<LayerNorm> stack_ln_;
    std::vector<FeedForward> stack_ffn_;
    Linear season_obs_, growth_obs_, horizon_out_;
};

// ---------------------------------------------------------------------------
// LSTM / CNN baselines
// ---------------------------------------------------------------------------

class LstmModel : public ForecastModel {
public:
    LstmModel(const ModelSpec& spec, Rng& rng)
        : head_(spec.lstm_units, spec.horizon * spec.n_targets, rng) {
        spec_ = spec;
        int in = spec.n_features;
        for (int i = 0; i < spec.lstm_layers; ++i) {
            cells_.emplace_back(in, spec.lstm_units, rng);
            in = spec.lstm_units;
        }
        for (std::size_t i = 0; i < cells_.size(); ++i) {
            cells_[i].collect("lstm" + std::to_string(i), params_);
        }
        head_.collect("head", params_);
    }

protected:
    Var do_forward(Tape& t, Var window, const Tensor&) override {
        const int units = spec_.lstm_units;
        std::vector<Var> h(cells_.size()), c(cells_.size());
        for (std::size_t l = 0; l < cells_.size(); ++l) {
            h[l] = t.constant(Tensor::zeros({1, units}));
            c[l] = t.constant(Tensor::zeros({1, units}));
        }
        for (int step = 0; step < spec_.lookback; ++step) {
            Var x = t.slice_rows(window, step, 1);
            for (std::size_t l = 0; l < cells_.size(); ++l) {
                auto next = cells_[l].step(t, x, h[l], c[l]);
                h[l] = next.first;
                c[l] = next.second;
                x = h[l];
            }
        }
        ensure_finite(t, h.back(), "lstm stack");
        return t.reshape(head_.apply(t, h.back()), {spec_.horizon, spec_.n_targets});
    }

private:
    std::vector<LstmCell> cells_;
    Linear head_;
};

class CnnModel : public ForecastModel {
public:
    CnnModel(const ModelSpec& spec, Rng& rng) {
        spec_ = spec;
        const int pad = spec.cnn_kernel / 2; // same padding at stride 1
        int in = spec.n_features;
        for (int out : spec.cnn_channels) {
            convs_.emplace_back(in, out, spec.cnn_kernel, 1, pad, rng);
            in = out;
        }
        const int flat = in * spec.lookback;
        head_ = Linear(flat, spec.horizon * spec.n_targets, rng);
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].collect("conv" + std::to_string(i), params_);
        }
        head_.collect("head", params_);
    }

protected:
    Var do_forward(Tape& t, Var window, const Tensor&) override {
        // [L x m] -> [1 x m x L]
        Var x = t.reshape(t.transpose(window), {1, spec_.n_features, spec_.lookback});
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            x = t.relu(convs_[i].apply(t, x));
            ensure_finite(t, x, "conv layer " + std::to_string(i));
        }
        const Shape& s = t.shape(x);
        Var flat = t.reshape(x, {1, s[1] * s[2]});
        return t.reshape(head_.apply(t, flat), {spec_.horizon, spec_.n_targets});
    }

private:
    std::vector<Conv1d> convs_;
    Linear head_;
};

} // namespace

// ---------------------------------------------------------------------------
// build_model
// ---------------------------------------------------------------------------

std::unique_ptr<ForecastModel> build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, "model_init_" + to_string(spec.kind)));
    switch (spec.kind) {
    case ModelKind::vanilla: return std::make_unique<VanillaModel>(spec, rng);
    case ModelKind::informer: return std::make_unique<InformerModel>(spec, seed, rng);
    case ModelKind::autoformer: return std::make_unique<AutoformerModel>(spec, rng);
    case ModelKind::reformer: return std::make_unique<ReformerModel>(spec, seed, rng);
    case ModelKind::etsformer: return std::make_unique<EtsformerModel>(spec, rng);
    case ModelKind::lstm: return std::make_unique<LstmModel>(spec, rng);
    case ModelKind::cnn: return std::make_unique<CnnModel>(spec, rng);
    }
    throw ConfigError("build_model: unhandled kind");
}

} // namespace tsf
