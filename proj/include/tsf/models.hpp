#ifndef TSF_MODELS_HPP
#define TSF_MODELS_HPP

#include "tsf/attention.hpp"
#include "tsf/reversible.hpp"

#include <memory>
#include <string>

namespace tsf {

enum class ModelKind { vanilla, informer, autoformer, reformer, etsformer, lstm, cnn };

ModelKind model_kind_from_string(const std::string& name);
std::string to_string(ModelKind kind);
bool is_transformer_kind(ModelKind kind);
const std::vector<ModelKind>& all_model_kinds();

/**
 * Everything needed to build one forecasting model.
 *
 * Window column layout: [exogenous features..., past target, time features],
 * so n_features = n_exogenous + 1 + n_time_features and
 * target_column = n_features - n_time_features - 1.
 */
struct ModelSpec {
    ModelKind kind = ModelKind::vanilla;
    int d_model = 64;
    int n_heads = 4;
    int n_encoder_layers = 2;
    int n_decoder_layers = 1;
    int d_ff = 128;
    int lookback = 96;  // L_in, hours
    int label_len = 48; // decoder warm-start overlap, hours
    int horizon = 96;   // H, hours
    int n_features = 12;
    int n_targets = 1;
    int n_time_features = 4;
    int target_column = 7;

    // kind-specific sub-configs
    LshConfig lsh;
    ProbSparseConfig prob_sparse;
    EtsAttentionConfig ets;
    int decomp_kernel = 25;               // autoformer moving-average width (odd)
    double autocorr_factor = 1.0;         // top-k delay factor
    bool autocorr_exclude_zero = false;
    std::vector<int> cnn_channels = {32, 64};
    int cnn_kernel = 3;
    int lstm_units = 64;
    int lstm_layers = 2;

    void validate() const;
    // The evaluation grid of the toolkit runs these horizons.
    static const std::vector<int>& standard_horizons();
};

class ForecastModel {
public:
    virtual ~ForecastModel() = default;

    const ModelSpec& spec() const { return spec_; }
    NamedParams& params() { return params_; }
    const NamedParams& params() const { return params_; }
    std::int64_t parameter_count() const { return tsf::parameter_count(params_); }

    /// Builds the forecast graph for one window. `window` is [L_in x m] on
    /// the tape; `horizon_time` carries the known time features of the H
    /// forecast hours (decoder placeholder rows). Output is [H x n_targets],
    /// produced in one pass for every kind.
    Var forward(Tape& t, Var window, const Tensor& horizon_time);

    /// Convenience inference entry.
    Tensor predict(const Tensor& window, const Tensor& horizon_time);

protected:
    virtual Var do_forward(Tape& t, Var window, const Tensor& horizon_time) = 0;

    ModelSpec spec_;
    NamedParams params_;
};

/// Deterministic construction: the same (spec, seed) yields bitwise-identical
/// parameters.
std::unique_ptr<ForecastModel> build_model(const ModelSpec& spec, std::uint64_t seed);

/// trend = centered moving average (edge-replicated padding, odd kernel);
/// seasonal = x - trend; returned so that seasonal + trend reproduces x.
std::pair<Var, Var> series_decompose(Tape& t, Var x, int kernel);

} // namespace tsf

#endif // TSF_MODELS_HPP
