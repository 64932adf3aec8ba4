#include "tsf/attention.hpp"

#include "tsf/fft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tsf {

namespace {

constexpr double kMaskBias = -1e30;

} // namespace

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

void AttentionConfig::validate() const {
    if (d_model < 1 || n_heads < 1) throw ConfigError("AttentionConfig: d_model and n_heads must be positive");
    if (d_model % n_heads != 0) {
        throw ConfigError("AttentionConfig: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
}

void LshConfig::validate() const {
    if (n_buckets < 2 || n_buckets % 2 != 0) throw ConfigError("LshConfig: n_buckets must be even and >= 2");
    if (n_rounds < 1) throw ConfigError("LshConfig: n_rounds must be >= 1");
    if (chunk_len < 1) throw ConfigError("LshConfig: chunk_len must be >= 1");
}

void ProbSparseConfig::validate() const {
    if (!(sampling_factor > 0.0)) throw ConfigError("ProbSparseConfig: sampling_factor must be > 0");
}

void EtsAttentionConfig::validate() const {
    for (double v : {alpha, beta, gamma}) {
        if (!(v > 0.0 && v < 1.0)) throw ConfigError("EtsAttentionConfig: smoothing values must lie in (0,1)");
    }
    if (top_k_freq < 1) throw ConfigError("EtsAttentionConfig: top_k_freq must be >= 1");
    if (period < 1) throw ConfigError("EtsAttentionConfig: period must be >= 1");
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

Tensor causal_mask(int length) {
    Tensor m({length, length});
    for (int i = 0; i < length; ++i) {
        for (int j = 0; j <= i; ++j) m.data()[static_cast<std::size_t>(i) * length + j] = 1.0;
    }
    return m;
}

Tensor mask_to_bias(const Tensor& mask) {
    if (mask.rank() != 2) throw ShapeError("mask_to_bias: expected rank-2 mask");
    const int rows = mask.shape()[0];
    const int cols = mask.shape()[1];
    Tensor bias({rows, cols});
    for (int i = 0; i < rows; ++i) {
        bool any = false;
        for (int j = 0; j < cols; ++j) {
            const bool allowed = mask.data()[static_cast<std::size_t>(i) * cols + j] != 0.0;
            bias.data()[static_cast<std::size_t>(i) * cols + j] = allowed ? 0.0 : kMaskBias;
            any = any || allowed;
        }
        if (!any) {
            throw NumericError("attention: query row " + std::to_string(i) +
                               " is fully masked (no valid attention target)");
        }
    }
    return bias;
}

// ---------------------------------------------------------------------------
// Full attention
// ---------------------------------------------------------------------------

Var scaled_dot_attention(Tape& t, Var q, Var k, Var v, const Tensor* mask) {
    const Shape& qs = t.shape(q);
    const Shape& ks = t.shape(k);
    const Shape& vs = t.shape(v);
    if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[1] != ks[1] || ks[0] != vs[0]) {
        throw ShapeError("scaled_dot_attention: incompatible shapes Q" + shape_str(qs) + " K" +
                         shape_str(ks) + " V" + shape_str(vs));
    }
    Var scores = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(static_cast<double>(qs[1])));
    if (mask != nullptr) {
        if (mask->shape() != Shape{qs[0], ks[0]}) {
            throw ShapeError("scaled_dot_attention: mask shape " + shape_str(mask->shape()) +
                             " does not match scores " + shape_str(t.shape(scores)));
        }
        scores = t.add(scores, t.constant(mask_to_bias(*mask)));
    }
    Var weights = t.softmax(scores, 1);
    return t.matmul(weights, v);
}

MultiHeadAttention::MultiHeadAttention(AttentionConfig cfg_, Rng& rng) : cfg(cfg_) {
    cfg.validate();
    wq = Linear(cfg.d_model, cfg.d_model, rng);
    wk = Linear(cfg.d_model, cfg.d_model, rng);
    wv = Linear(cfg.d_model, cfg.d_model, rng);
    wo = Linear(cfg.d_model, cfg.d_model, rng);
}

Var MultiHeadAttention::apply(Tape& t, Var x_q, Var x_kv, const Tensor* mask) const {
    if (t.shape(x_q)[1] != cfg.d_model || t.shape(x_kv)[1] != cfg.d_model) {
        throw ShapeError("multi_head_attention: inputs must have trailing dim d_model");
    }
    Var q = wq.apply(t, x_q);
    Var k = wk.apply(t, x_kv);
    Var v = wv.apply(t, x_kv);

    std::optional<Tensor> causal;
    const Tensor* effective = mask;
    if (effective == nullptr && cfg.causal) {
        if (t.shape(x_q)[0] != t.shape(x_kv)[0]) {
            throw ShapeError("multi_head_attention: causal self-attention needs equal lengths");
        }
        causal = causal_mask(t.shape(x_q)[0]);
        effective = &*causal;
    }

    const int dk = cfg.d_k();
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
        Var qh = t.slice_cols(q, h * dk, dk);
        Var kh = t.slice_cols(k, h * dk, dk);
        Var vh = t.slice_cols(v, h * dk, dk);
        heads.push_back(scaled_dot_attention(t, qh, kh, vh, effective));
    }
    Var cat = cfg.n_heads == 1 ? heads[0] : t.concat_cols(heads);
    return wo.apply(t, cat);
}

void MultiHeadAttention::collect(const std::string& prefix, NamedParams& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
}

// ---------------------------------------------------------------------------
// ProbSparse attention
// ---------------------------------------------------------------------------

double sparsity_measurement(const std::vector<double>& q, const Tensor& key_sample) {
    if (key_sample.rank() != 2 || key_sample.shape()[0] < 1) {
        throw ShapeError("sparsity_measurement: key sample must be [S x d], S >= 1");
    }
    const int s = key_sample.shape()[0];
    const int d = key_sample.shape()[1];
    if (static_cast<int>(q.size()) != d) throw ShapeError("sparsity_measurement: dim mismatch");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    double mx = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (int j = 0; j < s; ++j) {
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += q[static_cast<std::size_t>(c)] * key_sample.data()[static_cast<std::size_t>(j) * d + c];
        const double score = dot * inv_sqrt_d;
        mx = std::max(mx, score);
        sum += score;
    }
    return mx - sum / static_cast<double>(s);
}

namespace {

int log_sample_size(double c, int length) {
    const double raw = c * std::log(static_cast<double>(length));
    const int v = static_cast<int>(std::ceil(raw));
    return std::min(length, std::max(1, v));
}

} // namespace

Var prob_sparse_attention(Tape& t, Var q, Var k, Var v, const ProbSparseConfig& cfg,
                          bool causal, std::uint64_t seed, ProbSparseInfo* info) {
    cfg.validate();
    const Shape& qs = t.shape(q);
    const Shape& ks = t.shape(k);
    const Shape& vs = t.shape(v);
    if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[1] != ks[1] || ks[0] != vs[0]) {
        throw ShapeError("prob_sparse_attention: incompatible shapes Q" + shape_str(qs) + " K" +
                         shape_str(ks) + " V" + shape_str(vs));
    }
    const int lq = qs[0];
    const int lk = ks[0];
    const int d = qs[1];
    if (causal && lq != lk) throw ShapeError("prob_sparse_attention: causal needs L_q == L_k");

    // seeded uniform key sample (constant of the backward pass)
    const int sample_size = log_sample_size(cfg.sampling_factor, lk);
    Rng rng(derive_seed(seed, "prob_sparse_sample"));
    std::vector<int> sample = rng.sample_without_replacement(lk, sample_size);

    // host-side sparsity scores on the sampled keys
    const auto& qv = t.value(q);
    const auto& kv = t.value(k);
    Tensor ksample({sample_size, d});
    for (int j = 0; j < sample_size; ++j) {
        for (int c = 0; c < d; ++c) {
            ksample.data()[static_cast<std::size_t>(j) * d + c] =
                kv[static_cast<std::size_t>(sample[static_cast<std::size_t>(j)]) * d + c];
        }
    }
    std::vector<double> m_scores(static_cast<std::size_t>(lq));
    std::vector<double> qrow(static_cast<std::size_t>(d));
    for (int i = 0; i < lq; ++i) {
        for (int c = 0; c < d; ++c) qrow[static_cast<std::size_t>(c)] = qv[static_cast<std::size_t>(i) * d + c];
        m_scores[static_cast<std::size_t>(i)] = sparsity_measurement(qrow, ksample);
    }

    // Top-u queries, ties broken toward the lower index
    const int u = log_sample_size(cfg.sampling_factor, lq);
    std::vector<int> order(static_cast<std::size_t>(lq));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return m_scores[static_cast<std::size_t>(a)] > m_scores[static_cast<std::size_t>(b)];
    });
    std::vector<int> selected(order.begin(), order.begin() + u);
    std::sort(selected.begin(), selected.end());
    if (info != nullptr) {
        info->selected_queries = selected;
        info->key_sample = sample;
    }

    // full attention rows for the selected queries
    Var q_sel = t.pick_rows(q, selected);
    Var scores = t.scale(t.matmul(q_sel, t.transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    if (causal) {
        Tensor mask({u, lk});
        for (int r = 0; r < u; ++r) {
            for (int j = 0; j <= selected[static_cast<std::size_t>(r)]; ++j) {
                mask.data()[static_cast<std::size_t>(r) * lk + j] = 1.0;
            }
        }
        scores = t.add(scores, t.constant(mask_to_bias(mask)));
    }
    Var out_sel = t.matmul(t.softmax(scores, 1), v);

    // fallback rows for everyone else
    Var fallback;
    if (causal) {
        Tensor inv_count({lk, 1});
        for (int i = 0; i < lk; ++i) inv_count.data()[static_cast<std::size_t>(i)] = 1.0 / (i + 1.0);
        fallback = t.mul(t.cumsum_rows(v), t.constant(inv_count));
    } else {
        fallback = t.repeat_row(t.reduce_mean(v, 0), lq);
    }
    return t.scatter_rows(fallback, out_sel, selected);
}

// ---------------------------------------------------------------------------
// LSH attention
// ---------------------------------------------------------------------------

std::vector<std::vector<int>> lsh_hash(const Tensor& vectors, const LshConfig& cfg) {
    cfg.validate();
    if (vectors.rank() != 2) throw ShapeError("lsh_hash: expected [L x d]");
    const int length = vectors.shape()[0];
    const int d = vectors.shape()[1];
    const int half = cfg.n_buckets / 2;
    std::vector<std::vector<int>> rounds(static_cast<std::size_t>(cfg.n_rounds));
    for (int r = 0; r < cfg.n_rounds; ++r) {
        Rng rng(derive_seed(cfg.seed, "lsh_round_" + std::to_string(r)));
        std::vector<double> rot(static_cast<std::size_t>(d) * half);
        for (auto& x : rot) x = rng.normal();
        auto& buckets = rounds[static_cast<std::size_t>(r)];
        buckets.resize(static_cast<std::size_t>(length));
        for (int i = 0; i < length; ++i) {
            int best = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (int b = 0; b < cfg.n_buckets; ++b) {
                const int col = b < half ? b : b - half;
                double proj = 0.0;
                for (int c = 0; c < d; ++c) {
                    proj += vectors.data()[static_cast<std::size_t>(i) * d + c] *
                            rot[static_cast<std::size_t>(c) * half + col];
                }
                const double score = b < half ? proj : -proj;
                if (score > best_score) { // ties keep the lower bucket id
                    best_score = score;
                    best = b;
                }
            }
            buckets[static_cast<std::size_t>(i)] = best;
        }
    }
    return rounds;
}

namespace {

// log of the softmax denominator per row, as tape ops
Var row_logsumexp(Tape& t, Var scores) {
    Var m = t.reduce_max(scores, 1);
    Var e = t.exp(t.sub(scores, m));
    return t.add(m, t.log(t.reduce_sum(e, 1)));
}

} // namespace

Var lsh_attention(Tape& t, Var qk, Var v, const LshConfig& cfg, bool causal) {
    cfg.validate();
    const Shape& s = t.shape(qk);
    if (s.size() != 2 || t.shape(v) != s) {
        throw ShapeError("lsh_attention: qk and v must both be [L x d]");
    }
    const int length = s[0];
    const int d = s[1];

    // shared-QK: keys are the length-normalized query stream
    Var sq = t.reduce_sum(t.mul(qk, qk), 1);
    Var norm = t.sqrt(t.add_scalar(sq, 1e-24));
    Var keys = t.div(qk, norm);

    Tensor qk_values(Shape{length, d}, t.value(qk));
    const auto rounds = lsh_hash(qk_values, cfg);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Var> round_outputs;
    std::vector<Var> round_logz;
    for (const auto& buckets : rounds) {
        // stable sort by (bucket, original position)
        std::vector<int> order(static_cast<std::size_t>(length));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return buckets[static_cast<std::size_t>(a)] < buckets[static_cast<std::size_t>(b)];
        });

        Var sorted_q = t.pick_rows(qk, order);
        Var sorted_k = t.pick_rows(keys, order);
        Var sorted_v = t.pick_rows(v, order);

        const int n_chunks = (length + cfg.chunk_len - 1) / cfg.chunk_len;
        std::vector<Var> chunk_outs;
        std::vector<Var> chunk_logz;
        for (int c = 0; c < n_chunks; ++c) {
            const int row_start = c * cfg.chunk_len;
            const int row_end = std::min(length, row_start + cfg.chunk_len);
            const int rows = row_end - row_start;
            const int win_start = std::max(0, (c - 1) * cfg.chunk_len);
            const int win = row_end - win_start;

            Var qc = t.slice_rows(sorted_q, row_start, rows);
            Var kw = t.slice_rows(sorted_k, win_start, win);
            Var vw = t.slice_rows(sorted_v, win_start, win);
            Var scores = t.scale(t.matmul(qc, t.transpose(kw)), inv_sqrt_d);

            // window, causality and self-attention rules
            Tensor mask({rows, win});
            for (int i = 0; i < rows; ++i) {
                const int gi = row_start + i;
                bool any = false;
                for (int j = 0; j < win; ++j) {
                    const int gj = win_start + j;
                    const bool ok = gj != gi &&
                                    (!causal || order[static_cast<std::size_t>(gj)] <
                                                    order[static_cast<std::size_t>(gi)]);
                    if (ok) {
                        mask.data()[static_cast<std::size_t>(i) * win + j] = 1.0;
                        any = true;
                    }
                }
                if (!any) {
                    // the position itself is the only available target
                    mask.data()[static_cast<std::size_t>(i) * win + (gi - win_start)] = 1.0;
                }
            }
            Var masked = t.add(scores, t.constant(mask_to_bias(mask)));
            chunk_outs.push_back(t.matmul(t.softmax(masked, 1), vw));
            chunk_logz.push_back(row_logsumexp(t, masked));
        }
        Var sorted_out = chunk_outs.size() == 1 ? chunk_outs[0] : t.concat_rows(chunk_outs);
        Var sorted_z = chunk_logz.size() == 1 ? chunk_logz[0] : t.concat_rows(chunk_logz);

        std::vector<int> inverse(static_cast<std::size_t>(length));
        for (int pos = 0; pos < length; ++pos) inverse[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = pos;
        round_outputs.push_back(t.pick_rows(sorted_out, inverse));
        round_logz.push_back(t.pick_rows(sorted_z, inverse));
    }

    if (round_outputs.size() == 1) return round_outputs[0];

    // combine rounds: per-position softmax over the log normalizers
    Var zcat = t.concat_cols(round_logz); // [L x R]
    Var w = t.softmax(zcat, 1);
    Var out = t.mul(round_outputs[0], t.slice_cols(w, 0, 1));
    for (std::size_t r = 1; r < round_outputs.size(); ++r) {
        out = t.add(out, t.mul(round_outputs[r], t.slice_cols(w, static_cast<int>(r), 1)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Auto-correlation attention
// ---------------------------------------------------------------------------

std::vector<double> auto_correlation_scores_fft(const Tensor& q, const Tensor& k) {
    if (q.rank() != 2 || q.shape() != k.shape()) {
        throw ShapeError("auto_correlation_scores: Q and K must both be [L x d]");
    }
    const int length = q.shape()[0];
    const int d = q.shape()[1];
    std::vector<double> scores(static_cast<std::size_t>(length), 0.0);
    std::vector<cdouble> fq(static_cast<std::size_t>(length));
    std::vector<cdouble> fk(static_cast<std::size_t>(length));
    for (int c = 0; c < d; ++c) {
        for (int i = 0; i < length; ++i) {
            fq[static_cast<std::size_t>(i)] = q.data()[static_cast<std::size_t>(i) * d + c];
            fk[static_cast<std::size_t>(i)] = k.data()[static_cast<std::size_t>(i) * d + c];
        }
        auto sq = dft(fq);
        auto sk = dft(fk);
        for (int i = 0; i < length; ++i) {
            sq[static_cast<std::size_t>(i)] *= std::conj(sk[static_cast<std::size_t>(i)]);
        }
        auto corr = idft(sq);
        for (int i = 0; i < length; ++i) {
            scores[static_cast<std::size_t>(i)] += corr[static_cast<std::size_t>(i)].real();
        }
    }
    const double norm = 1.0 / (static_cast<double>(length) * static_cast<double>(d));
    for (auto& v : scores) v *= norm;
    return scores;
}

Var auto_correlation_attention(Tape& t, Var q, Var k, Var v, double c_factor,
                               bool exclude_zero_lag, std::vector<int>* selected_delays) {
    const Shape& qs = t.shape(q);
    if (qs.size() != 2 || t.shape(k) != qs || t.shape(v) != qs) {
        throw ShapeError("auto_correlation_attention: Q, K, V must share [L x d]");
    }
    const int length = qs[0];
    const int d = qs[1];
    if (length < 2) throw ShapeError("auto_correlation_attention: L must be >= 2");
    if (!(c_factor > 0.0)) throw ConfigError("auto_correlation_attention: c_factor must be > 0");

    Tensor qv(Shape{length, d}, t.value(q));
    Tensor kv(Shape{length, d}, t.value(k));
    const auto scores = auto_correlation_scores_fft(qv, kv);

    std::vector<int> candidates;
    for (int tau = exclude_zero_lag ? 1 : 0; tau < length; ++tau) candidates.push_back(tau);
    const int top_k = std::max(
        1, std::min(static_cast<int>(candidates.size()),
                    static_cast<int>(std::floor(c_factor * std::log(static_cast<double>(length))))));
    std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    std::vector<int> delays(candidates.begin(), candidates.begin() + top_k);
    std::sort(delays.begin(), delays.end());
    if (selected_delays != nullptr) *selected_delays = delays;

    // differentiable recomputation of the selected scores
    std::vector<Var> score_vars;
    score_vars.reserve(delays.size());
    for (int tau : delays) {
        Var lagged = t.roll_rows(k, -tau); // row t holds K[(t - tau) mod L]
        score_vars.push_back(t.reshape(t.mean_all(t.mul(q, lagged)), {1, 1}));
    }
    Var weights = t.softmax(t.concat_rows(score_vars), 0); // [top_k x 1]

    Var out;
    for (std::size_t i = 0; i < delays.size(); ++i) {
        Var w = t.reshape(t.slice_rows(weights, static_cast<int>(i), 1), {1, 1});
        Var contrib = t.mul(t.roll_rows(v, delays[i]), w);
        out = i == 0 ? contrib : t.add(out, contrib);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ESA / FA
// ---------------------------------------------------------------------------

Var exponential_smoothing_attention(Tape& t, Var values, Var alpha, Var v_init) {
    const Shape& vs = t.shape(values);
    if (vs.size() != 2) throw ShapeError("esa: values must be [L x d]");
    if (shape_numel(t.shape(alpha)) != 1) throw ShapeError("esa: alpha must be scalar");
    if (t.shape(v_init) != Shape{1, vs[1]}) {
        throw ShapeError("esa: v_init must be [1 x d]");
    }
    const int length = vs[0];
    Var a = t.reshape(alpha, {1, 1});
    Var one_minus = t.sub(t.constant(Tensor({1, 1}, {1.0})), a);
    Var state = v_init;
    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        Var vt = t.slice_rows(values, i, 1);
        state = t.add(t.mul(a, vt), t.mul(one_minus, state));
        rows.push_back(state);
    }
    return length == 1 ? rows[0] : t.concat_rows(rows);
}

Var exponential_smoothing_attention(Tape& t, Var values, double alpha, Var v_init) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw NumericError("esa: alpha must lie strictly in (0,1)");
    }
    return exponential_smoothing_attention(t, values, t.constant_scalar(alpha), v_init);
}

std::vector<double> esa_weight_row(double alpha, int t) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw NumericError("esa_weight_row: alpha must lie in (0,1)");
    if (t < 0) throw ShapeError("esa_weight_row: t must be >= 0");
    std::vector<double> w(static_cast<std::size_t>(t) + 2);
    w[0] = std::pow(1.0 - alpha, t + 1); // v_init weight
    for (int j = 0; j <= t; ++j) {
        w[static_cast<std::size_t>(j) + 1] = alpha * std::pow(1.0 - alpha, t - j);
    }
    return w;
}

std::pair<Var, Var> frequency_attention(Tape& t, Var x, int top_k, int horizon) {
    const Shape& xs = t.shape(x);
    if (xs.size() != 2) throw ShapeError("frequency_attention: x must be [L x d]");
    const int length = xs[0];
    const int d = xs[1];
    if (top_k < 1 || top_k > length / 2) {
        throw ShapeError("frequency_attention: top_k must lie in [1, L/2]");
    }
    if (horizon < 1) throw ShapeError("frequency_attention: horizon must be >= 1");

    const auto& values = t.value(x);
    const double two_pi_over_l = 6.283185307179586476925286766559 / static_cast<double>(length);

    std::vector<Var> in_cols, out_cols;
    std::vector<cdouble> column(static_cast<std::size_t>(length));
    for (int c = 0; c < d; ++c) {
        for (int i = 0; i < length; ++i) {
            column[static_cast<std::size_t>(i)] = values[static_cast<std::size_t>(i) * d + c];
        }
        const auto spectrum = dft(column);

        // rank non-DC bins 1..L/2 by amplitude, ties toward the lower bin
        std::vector<int> bins;
        for (int b = 1; b <= length / 2; ++b) bins.push_back(b);
        std::stable_sort(bins.begin(), bins.end(), [&](int a, int b) {
            return std::abs(spectrum[static_cast<std::size_t>(a)]) >
                   std::abs(spectrum[static_cast<std::size_t>(b)]);
        });
        bins.resize(static_cast<std::size_t>(top_k));
        std::sort(bins.begin(), bins.end());

        // reconstruction is linear in x: s[t] = sum_s M[t,s] x[s] with
        // M[t,s] = sum_k (coef_k / L) cos(2 pi k (t-s) / L)
        Tensor m_in({length, length});
        Tensor m_out({horizon, length});
        for (int bin : bins) {
            const double coef = (2 * bin == length) ? 1.0 : 2.0;
            for (int s = 0; s < length; ++s) {
                for (int i = 0; i < length; ++i) {
                    m_in.data()[static_cast<std::size_t>(i) * length + s] +=
                        coef / length * std::cos(two_pi_over_l * bin * (i - s));
                }
                for (int h = 0; h < horizon; ++h) {
                    m_out.data()[static_cast<std::size_t>(h) * length + s] +=
                        coef / length * std::cos(two_pi_over_l * bin * (length + h - s));
                }
            }
        }
        Var xc = t.slice_cols(x, c, 1);
        in_cols.push_back(t.matmul(t.constant(std::move(m_in)), xc));
        out_cols.push_back(t.matmul(t.constant(std::move(m_out)), xc));
    }
    Var seasonal_in = d == 1 ? in_cols[0] : t.concat_cols(in_cols);
    Var seasonal_out = d == 1 ? out_cols[0] : t.concat_cols(out_cols);
    return {seasonal_in, seasonal_out};
}

// ---------------------------------------------------------------------------
// Holt-Winters
// ---------------------------------------------------------------------------

double holt_winters_forecast(const std::vector<double>& x, double alpha, double beta,
                             double gamma, int period, int h, const HoltWintersSeeds& seeds) {
    const int total = static_cast<int>(x.size());
    if (period < 1) throw ShapeError("holt_winters: period must be >= 1");
    if (total < period) {
        throw ShapeError("holt_winters: series length " + std::to_string(total) +
                         " shorter than period " + std::to_string(period));
    }
    if (h < 1) throw ShapeError("holt_winters: h must be >= 1");
    for (double p : {alpha, beta, gamma}) {
        if (!(p > 0.0 && p < 1.0)) throw NumericError("holt_winters: smoothing parameters must lie in (0,1)");
    }
    if (static_cast<int>(seeds.seasonal.size()) != period) {
        throw ShapeError("holt_winters: seasonal seed length must equal period");
    }

    double level = seeds.level;
    double growth = seeds.growth;
    std::vector<double> seasonal(x.size());
    for (int i = 0; i < total; ++i) {
        const double s_prev = i - period >= 0 ? seasonal[static_cast<std::size_t>(i - period)]
                                              : seeds.seasonal[static_cast<std::size_t>(i)];
        const double level_prev = level;
        level = alpha * (x[static_cast<std::size_t>(i)] - s_prev) + (1.0 - alpha) * (level_prev + growth);
        growth = beta * (level - level_prev) + (1.0 - beta) * growth;
        seasonal[static_cast<std::size_t>(i)] =
            gamma * (x[static_cast<std::size_t>(i)] - level_prev) + (1.0 - gamma) * s_prev;
    }
    const int m = (h - 1) % period + 1; // seasonal index cycles beyond one period
    const double s_future = seasonal[static_cast<std::size_t>(total + m - period - 1)];
    return level + static_cast<double>(h) * growth + s_future;
}

} // namespace tsf
