#pragma once

#include "uplift/data.hpp"
#include "uplift/matrix.hpp"
#include "uplift/nn.hpp"
#include "uplift/prediction.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace uplift {

enum class ModelKind {
    M3TN,
    M3TN_NoMMoE,
    M3TN_NoRM,
    SLearner,
    TLearner,
    SharedBottomMultiHead,
    SharedBottomMultiHead_MMD,
};

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct M3TNConfig {
    ModelKind kind = ModelKind::M3TN;
    int num_treatments = 2;                        // K
    std::size_t num_experts = 4;                   // N
    std::vector<std::size_t> expert_hidden = {64, 32};
    std::vector<std::size_t> head_hidden = {16};
    double l2_lambda = 0.0;
    bool l2_squared = true;  // false: penalty is lambda * ||theta||_2 instead of lambda * sum theta^2
    double mmd_alpha = 0.1;  // SharedBottomMultiHead_MMD only
    std::uint64_t seed = 0;
    // per-column embedding widths; absent columns get min(8, ceil(cardinality/2))
    std::map<std::string, std::size_t> embedding_dims;

    void validate() const;
};

// How raw feature columns become the model input vector: numerics pass
// through (already standardized by the data pipeline), categoricals are
// replaced by their embedding rows, concatenated in declared column order.
struct EncoderColumn {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
    double mean = 0.0;   // numeric: standardization stats fitted on train
    double stddev = 1.0;
    std::vector<std::string> categories; // categorical: label -> dense index
    std::size_t embedding_dim = 0;       // categorical only
};

struct EncoderSpec {
    std::vector<EncoderColumn> columns;
    std::string treatment_name = "t";
    std::string response_name = "y";

    static EncoderSpec build(const Dataset& train, const Standardizer& stats,
                             const M3TNConfig& config);

    std::size_t encoded_dim() const;
    std::size_t categorical_count() const;
    DatasetSchema to_schema() const;
    Standardizer to_standardizer() const;
};

// Remap a freshly loaded dataset's category indices onto the encoder's
// training-time mapping. Unseen labels are a data error.
void align_categories(Dataset& dataset, const EncoderSpec& spec);

// Standalone feature encoding; models use the same routine internally.
Matrix encode_features(const Matrix& raw, const EncoderSpec& spec,
                       const std::vector<EmbeddingTable>& tables);

// Common surface of the model zoo: every member exposes K uplift scores per
// sample plus a control response, a masked training loss, and gradients of
// that loss for every trainable parameter. Forward, loss and gradient
// computation never mutate the model, so concurrent inference is safe.
class UpliftModel {
public:
    virtual ~UpliftModel() = default;

    ModelKind kind() const { return config_.kind; }
    const M3TNConfig& config() const { return config_; }
    const EncoderSpec& encoder() const { return encoder_; }
    int num_treatments() const { return config_.num_treatments; }

    std::vector<ParamRef> params();
    std::size_t param_count();

    virtual UpliftPrediction predict(const Matrix& raw_features) const = 0;
    virtual double loss(const Matrix& raw_features, const std::vector<int>& treatment,
                        const std::vector<double>& response) const = 0;
    virtual double loss_and_gradients(const Matrix& raw_features, const std::vector<int>& treatment,
                                      const std::vector<double>& response,
                                      GradientSet& grads) const = 0;

protected:
    UpliftModel(M3TNConfig config, EncoderSpec encoder);

    virtual void collect_params(std::vector<ParamRef>& out) = 0;

    void check_input(const Matrix& raw_features) const;
    void check_batch(const Matrix& raw_features, const std::vector<int>& treatment,
                     const std::vector<double>& response) const;

    // lambda * sum theta^2 (or lambda * ||theta||), plus its gradient
    double regularization(const std::vector<ParamRef>& params) const;
    void add_regularization_grads(const std::vector<ParamRef>& params, GradientSet& grads) const;

    M3TNConfig config_;
    EncoderSpec encoder_;
    std::vector<EmbeddingTable> embeddings_; // one per categorical column

    friend std::unique_ptr<UpliftModel> load_checkpoint(const std::string& path);
};

// M3TN and its structural relatives, selected by ModelKind:
//   M3TN                      mixture-of-experts representation + uplift heads
//   M3TN_NoMMoE               single shared bottom + uplift heads
//   M3TN_NoRM                 mixture-of-experts + per-arm response heads
//   SharedBottomMultiHead     single shared bottom + per-arm response heads
//   SharedBottomMultiHead_MMD same, with a linear-kernel MMD penalty per arm
class CompositeModel : public UpliftModel {
public:
    CompositeModel(M3TNConfig config, EncoderSpec encoder);

    UpliftPrediction predict(const Matrix& raw_features) const override;
    double loss(const Matrix& raw_features, const std::vector<int>& treatment,
                const std::vector<double>& response) const override;
    double loss_and_gradients(const Matrix& raw_features, const std::vector<int>& treatment,
                              const std::vector<double>& response,
                              GradientSet& grads) const override;

    bool uses_mmoe() const;
    bool uses_reparameterization() const;

    // per-head representations phi_0..phi_K for an encoded batch; expert
    // outputs are computed once and reused across all gates
    std::vector<Matrix> mmoe_forward(const Matrix& encoded) const;

    // gate distributions g_0..g_K (each batch x N); M3TN-family models only
    std::vector<Matrix> gate_outputs(const Matrix& encoded) const;

    std::vector<Mlp>& experts() { return experts_; }
    std::vector<DenseLayer>& gates() { return gates_; }
    std::vector<Mlp>& heads() { return heads_; }

protected:
    void collect_params(std::vector<ParamRef>& out) override;

private:
    struct ForwardState;
    void forward(const Matrix& raw, ForwardState& state, bool with_caches) const;
    double masked_loss(const ForwardState& state, const std::vector<int>& treatment,
                       const std::vector<double>& response,
                       std::vector<Matrix>* head_grads) const;
    double mmd_penalty(const Matrix& repr, const std::vector<int>& treatment,
                       Matrix* grad_repr) const;

    std::vector<Mlp> experts_;      // N experts, or the single shared bottom
    std::vector<DenseLayer> gates_; // K+1 softmax gates (empty without MMoE)
    std::vector<Mlp> heads_;        // h_0..h_K
};

// One network over [x, one-hot(t)]; uplift read off by toggling the one-hot.
class SLearnerModel : public UpliftModel {
public:
    SLearnerModel(M3TNConfig config, EncoderSpec encoder);

    UpliftPrediction predict(const Matrix& raw_features) const override;
    double loss(const Matrix& raw_features, const std::vector<int>& treatment,
                const std::vector<double>& response) const override;
    double loss_and_gradients(const Matrix& raw_features, const std::vector<int>& treatment,
                              const std::vector<double>& response,
                              GradientSet& grads) const override;

    Mlp& net() { return net_; }

protected:
    void collect_params(std::vector<ParamRef>& out) override;

private:
    Matrix stacked_input(const Matrix& encoded, const std::vector<int>& treatment) const;
    Mlp net_;
};

// K+1 independent response networks, one per arm; each sample trains only
// the network of its observed arm.
class TLearnerModel : public UpliftModel {
public:
    TLearnerModel(M3TNConfig config, EncoderSpec encoder);

    UpliftPrediction predict(const Matrix& raw_features) const override;
    double loss(const Matrix& raw_features, const std::vector<int>& treatment,
                const std::vector<double>& response) const override;
    double loss_and_gradients(const Matrix& raw_features, const std::vector<int>& treatment,
                              const std::vector<double>& response,
                              GradientSet& grads) const override;

    std::vector<Mlp>& nets() { return nets_; }

protected:
    void collect_params(std::vector<ParamRef>& out) override;

private:
    std::vector<Mlp> nets_;
};

std::unique_ptr<UpliftModel> make_model(const M3TNConfig& config, const EncoderSpec& encoder);

// Self-describing JSON checkpoint: config, encoder spec and every parameter
// by path. save -> load -> predict is bit-identical.
void save_checkpoint(UpliftModel& model, const std::string& path);
std::unique_ptr<UpliftModel> load_checkpoint(const std::string& path);

// squared linear-kernel maximum mean discrepancy: ||mean(a) - mean(b)||^2
double linear_mmd2(const Matrix& a, const Matrix& b);

} // namespace uplift
