#ifndef TSF_ATTENTION_HPP
#define TSF_ATTENTION_HPP

#include "tsf/nn.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace tsf {

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

struct AttentionConfig {
    int d_model = 64;
    int n_heads = 4;
    bool causal = false;

    int d_k() const { return d_model / n_heads; }
    void validate() const;
};

struct LshConfig {
    int n_buckets = 8; // even
    int n_rounds = 2;
    int chunk_len = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ProbSparseConfig {
    // u = ceil(c * ln L_Q) selected queries; key sample size ceil(c * ln L_K).
    double sampling_factor = 1.0;

    void validate() const;
};

struct EtsAttentionConfig {
    // initial smoothing values in (0,1); models store them pre-sigmoid
    double alpha = 0.5;
    double beta = 0.5;
    double gamma = 0.5;
    int top_k_freq = 2;
    int period = 24;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Lower-triangular permission matrix: mask[i][j] = 1 iff j <= i.
Tensor causal_mask(int length);

/// 0/1 permission matrix -> additive bias (0 where allowed, -1e30 where not).
/// Throws NumericError if any row is fully masked.
Tensor mask_to_bias(const Tensor& mask);

// ---------------------------------------------------------------------------
// Full attention
// ---------------------------------------------------------------------------

/// softmax(Q K^T / sqrt(d_k)) V; optional 0/1 permission mask [L_q x L_k].
Var scaled_dot_attention(Tape& t, Var q, Var k, Var v, const Tensor* mask = nullptr);

struct MultiHeadAttention {
    AttentionConfig cfg;
    Linear wq, wk, wv, wo;

    MultiHeadAttention() = default;
    MultiHeadAttention(AttentionConfig cfg, Rng& rng);

    Var apply(Tape& t, Var x_q, Var x_kv, const Tensor* mask = nullptr) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// ---------------------------------------------------------------------------
// ProbSparse attention
// ---------------------------------------------------------------------------

/// M(q, K) = max_j(q.k_j / sqrt(d)) - mean_j(q.k_j / sqrt(d)); always >= 0.
double sparsity_measurement(const std::vector<double>& q, const Tensor& key_sample);

struct ProbSparseInfo {
    std::vector<int> selected_queries; // ascending
    std::vector<int> key_sample;       // ascending
};

/// Top-u queries (by M on a seeded key sample, ties to the lower index) get
/// full attention rows; the rest get mean-of-V (cumulative mean up to the
/// query position when causal).
Var prob_sparse_attention(Tape& t, Var q, Var k, Var v, const ProbSparseConfig& cfg,
                          bool causal, std::uint64_t seed, ProbSparseInfo* info = nullptr);

// ---------------------------------------------------------------------------
// LSH attention
// ---------------------------------------------------------------------------

/// Random-rotation hashing: per round a seeded Gaussian matrix R [d x b/2],
/// bucket = argmax of [xR; -xR]. Returns [n_rounds][L] bucket ids.
std::vector<std::vector<int>> lsh_hash(const Tensor& vectors, const LshConfig& cfg);

/// Shared-QK bucketed attention over pre-projected streams. qk supplies both
/// queries and (length-normalized) keys. Per round: hash, stable-sort by
/// (bucket, position), chunk, attend within own + previous chunk with
/// self-attention masked unless it is the only target; rounds combine by
/// logsumexp weights. Output is returned in original position order.
Var lsh_attention(Tape& t, Var qk, Var v, const LshConfig& cfg, bool causal);

// ---------------------------------------------------------------------------
// Auto-correlation attention
// ---------------------------------------------------------------------------

/// R(tau) = (1/(L d)) sum_{t,c} Q[t,c] K[(t - tau) mod L, c], via FFT
/// (conjugate multiply in the frequency domain). Length-L vector of scores.
std::vector<double> auto_correlation_scores_fft(const Tensor& q, const Tensor& k);

/// Top-k delays (k = max(1, floor(c_factor ln L)), ties to the smaller tau)
/// weighted by softmax over their R values; output = sum_tau w_tau * roll(V, tau).
Var auto_correlation_attention(Tape& t, Var q, Var k, Var v, double c_factor,
                               bool exclude_zero_lag = false,
                               std::vector<int>* selected_delays = nullptr);

// ---------------------------------------------------------------------------
// Exponential smoothing attention / frequency attention
// ---------------------------------------------------------------------------

/// out[t] = (1-a)^(t+1) v_init + sum_{j<=t} a (1-a)^(t-j) V[j], computed by the
/// recursion s_t = a v_t + (1-a) s_{t-1}. alpha is a [1] tensor on the tape so
/// smoothing can be learned through a sigmoid reparameterization.
Var exponential_smoothing_attention(Tape& t, Var values, Var alpha, Var v_init);

/// Convenience entry with a fixed alpha; throws NumericError outside (0,1).
Var exponential_smoothing_attention(Tape& t, Var values, double alpha, Var v_init);

/// Attention-matrix view of the same operation: weights of row t over
/// [v_init, V[0], ..., V[t]]; sums to 1 by the geometric closed form.
std::vector<double> esa_weight_row(double alpha, int t);

/// Per channel: DFT, keep the top_k non-DC bins by amplitude (conjugate pairs
/// together, ties to the lower bin), inverse -> seasonal_in [L x d];
/// seasonal_out [H x d] extrapolates the kept sinusoids to positions L..L+H-1.
std::pair<Var, Var> frequency_attention(Tape& t, Var x, int top_k, int horizon);

// ---------------------------------------------------------------------------
// Holt-Winters recursion
// ---------------------------------------------------------------------------

struct HoltWintersSeeds {
    double level = 0.0;
    double growth = 0.0;
    std::vector<double> seasonal; // length = period
};

/// Additive recursion over the full series, then the h-step forecast
/// e_T + h b_T + s_{T+h-p} (seasonal index cycling for h > p).
double holt_winters_forecast(const std::vector<double>& x, double alpha, double beta,
                             double gamma, int period, int h, const HoltWintersSeeds& seeds);

} // namespace tsf

#endif // TSF_ATTENTION_HPP
