#include "uplift/model.hpp"

#include "uplift/errors.hpp"
#include "uplift/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace uplift {

std::string model_kind_name(ModelKind kind) {
    switch (kind) {
    case ModelKind::M3TN: return "M3TN";
    case ModelKind::M3TN_NoMMoE: return "M3TN_NoMMoE";
    case ModelKind::M3TN_NoRM: return "M3TN_NoRM";
    case ModelKind::SLearner: return "SLearner";
    case ModelKind::TLearner: return "TLearner";
    case ModelKind::SharedBottomMultiHead: return "SharedBottomMultiHead";
    case ModelKind::SharedBottomMultiHead_MMD: return "SharedBottomMultiHead_MMD";
    }
    return "unknown";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "M3TN") return ModelKind::M3TN;
    if (name == "M3TN_NoMMoE") return ModelKind::M3TN_NoMMoE;
    if (name == "M3TN_NoRM") return ModelKind::M3TN_NoRM;
    if (name == "SLearner") return ModelKind::SLearner;
    if (name == "TLearner") return ModelKind::TLearner;
    if (name == "SharedBottomMultiHead") return ModelKind::SharedBottomMultiHead;
    if (name == "SharedBottomMultiHead_MMD") return ModelKind::SharedBottomMultiHead_MMD;
    throw ConfigError("unknown model kind '" + name + "'");
}

void M3TNConfig::validate() const {
    if (num_treatments < 2) {
        throw ConfigError("model: num_treatments must be >= 2, got " +
                          std::to_string(num_treatments));
    }
    if (num_experts < 1) throw ConfigError("model: num_experts must be >= 1");
    if (expert_hidden.empty()) throw ConfigError("model: expert_hidden must not be empty");
    for (std::size_t w : expert_hidden) {
        if (w == 0) throw ConfigError("model: expert_hidden widths must be positive");
    }
    for (std::size_t w : head_hidden) {
        if (w == 0) throw ConfigError("model: head_hidden widths must be positive");
    }
    if (l2_lambda < 0.0) throw ConfigError("model: l2_lambda must be >= 0");
}

EncoderSpec EncoderSpec::build(const Dataset& train, const Standardizer& stats,
                               const M3TNConfig& config) {
    EncoderSpec spec;
    for (std::size_t j = 0; j < train.feature_columns.size(); ++j) {
        const auto& col = train.feature_columns[j];
        EncoderColumn ec;
        ec.name = col.name;
        ec.kind = col.kind;
        if (col.kind == ColumnKind::Numeric) {
            ec.mean = stats.mean[j];
            ec.stddev = stats.stddev[j];
        } else {
            ec.categories = col.categories;
            auto it = config.embedding_dims.find(col.name);
            if (it != config.embedding_dims.end()) {
                ec.embedding_dim = it->second;
            } else {
                const std::size_t half = (col.cardinality() + 1) / 2;
                ec.embedding_dim = std::min<std::size_t>(8, std::max<std::size_t>(1, half));
            }
        }
        spec.columns.push_back(std::move(ec));
    }
    return spec;
}

std::size_t EncoderSpec::encoded_dim() const {
    std::size_t d = 0;
    for (const auto& c : columns) {
        d += c.kind == ColumnKind::Categorical ? c.embedding_dim : 1;
    }
    return d;
}

std::size_t EncoderSpec::categorical_count() const {
    std::size_t n = 0;
    for (const auto& c : columns) {
        if (c.kind == ColumnKind::Categorical) ++n;
    }
    return n;
}

DatasetSchema EncoderSpec::to_schema() const {
    DatasetSchema schema;
    for (const auto& c : columns) schema.columns.push_back({c.name, c.kind});
    schema.columns.push_back({treatment_name, ColumnKind::Treatment});
    schema.columns.push_back({response_name, ColumnKind::Response});
    return schema;
}

Standardizer EncoderSpec::to_standardizer() const {
    Standardizer s;
    for (const auto& c : columns) {
        s.mean.push_back(c.mean);
        s.stddev.push_back(c.kind == ColumnKind::Numeric ? c.stddev : 1.0);
    }
    return s;
}

void align_categories(Dataset& dataset, const EncoderSpec& spec) {
    if (dataset.feature_columns.size() != spec.columns.size()) {
        throw DataError("dataset has " + std::to_string(dataset.feature_columns.size()) +
                        " feature columns, model expects " + std::to_string(spec.columns.size()));
    }
    for (std::size_t j = 0; j < spec.columns.size(); ++j) {
        const auto& ec = spec.columns[j];
        auto& dc = dataset.feature_columns[j];
        if (dc.name != ec.name || dc.kind != ec.kind) {
            throw DataError("feature column '" + dc.name + "' does not match model column '" +
                            ec.name + "'");
        }
        if (ec.kind != ColumnKind::Categorical) continue;
        std::vector<double> remap(dc.categories.size());
        for (std::size_t c = 0; c < dc.categories.size(); ++c) {
            const auto it = std::find(ec.categories.begin(), ec.categories.end(), dc.categories[c]);
            if (it == ec.categories.end()) {
                throw DataError("column '" + dc.name + "': category '" + dc.categories[c] +
                                "' was not seen during training");
            }
            remap[c] = static_cast<double>(it - ec.categories.begin());
        }
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            dataset.features(i, j) = remap[static_cast<std::size_t>(dataset.features(i, j))];
        }
        dc.categories = ec.categories;
    }
}

Matrix encode_features(const Matrix& raw, const EncoderSpec& spec,
                       const std::vector<EmbeddingTable>& tables) {
    if (raw.cols != spec.columns.size()) {
        throw DataError("encode: input has " + std::to_string(raw.cols) +
                        " feature columns, expected " + std::to_string(spec.columns.size()));
    }
    Matrix out(raw.rows, spec.encoded_dim());
    for (std::size_t i = 0; i < raw.rows; ++i) {
        std::size_t o = 0;
        std::size_t table_idx = 0;
        for (std::size_t j = 0; j < spec.columns.size(); ++j) {
            const auto& col = spec.columns[j];
            if (col.kind == ColumnKind::Categorical) {
                const auto& table = tables[table_idx];
                const long idx = static_cast<long>(raw(i, j));
                if (idx < 0 || static_cast<std::size_t>(idx) >= table.cardinality()) {
                    throw DataError("column '" + col.name + "': category index " +
                                    std::to_string(idx) + " out of range [0, " +
                                    std::to_string(table.cardinality()) + ")");
                }
                const double* vec = table.vectors.row_ptr(static_cast<std::size_t>(idx));
                for (std::size_t e = 0; e < table.dim(); ++e) out(i, o + e) = vec[e];
                o += table.dim();
                ++table_idx;
            } else {
                out(i, o) = raw(i, j);
                ++o;
            }
        }
    }
    return out;
}

namespace {

// scatter-add the encoded-input gradient back into the embedding tables
void embedding_backward(const Matrix& raw, const EncoderSpec& spec, const Matrix& grad_encoded,
                        GradientSet& grads) {
    std::size_t o = 0;
    for (std::size_t j = 0; j < spec.columns.size(); ++j) {
        const auto& col = spec.columns[j];
        if (col.kind != ColumnKind::Categorical) {
            ++o;
            continue;
        }
        Matrix& g = grads.at("embedding." + col.name);
        for (std::size_t i = 0; i < raw.rows; ++i) {
            const auto idx = static_cast<std::size_t>(raw(i, j));
            double* grow = g.row_ptr(idx);
            const double* src = grad_encoded.row_ptr(i) + o;
            for (std::size_t e = 0; e < col.embedding_dim; ++e) grow[e] += src[e];
        }
        o += col.embedding_dim;
    }
}

std::vector<double> column_of(const Matrix& m, std::size_t col) {
    std::vector<double> v(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) v[i] = m(i, col);
    return v;
}

} // namespace

UpliftModel::UpliftModel(M3TNConfig config, EncoderSpec encoder)
    : config_(std::move(config)), encoder_(std::move(encoder)) {
    config_.validate();
    for (const auto& col : encoder_.columns) {
        if (col.kind != ColumnKind::Categorical) continue;
        if (col.embedding_dim == 0) {
            throw ConfigError("column '" + col.name + "': embedding_dim must be positive");
        }
        embeddings_.emplace_back(col.categories.size(), col.embedding_dim);
    }
}

std::vector<ParamRef> UpliftModel::params() {
    std::vector<ParamRef> out;
    std::size_t table_idx = 0;
    for (const auto& col : encoder_.columns) {
        if (col.kind != ColumnKind::Categorical) continue;
        out.push_back({"embedding." + col.name, &embeddings_[table_idx].vectors});
        ++table_idx;
    }
    collect_params(out);
    return out;
}

std::size_t UpliftModel::param_count() { return uplift::param_count(params()); }

void UpliftModel::check_input(const Matrix& raw) const {
    if (raw.cols != encoder_.columns.size()) {
        throw DataError("model expects " + std::to_string(encoder_.columns.size()) +
                        " feature columns, got " + std::to_string(raw.cols));
    }
}

void UpliftModel::check_batch(const Matrix& raw, const std::vector<int>& treatment,
                              const std::vector<double>& response) const {
    check_input(raw);
    if (raw.rows == 0) throw std::invalid_argument("empty batch");
    if (treatment.size() != raw.rows || response.size() != raw.rows) {
        throw DataError("batch fields have inconsistent lengths");
    }
    for (int t : treatment) {
        if (t < 0 || t > config_.num_treatments) {
            throw DataError("treatment label " + std::to_string(t) + " exceeds K=" +
                            std::to_string(config_.num_treatments));
        }
    }
}

double UpliftModel::regularization(const std::vector<ParamRef>& params) const {
    if (config_.l2_lambda == 0.0) return 0.0;
    double sum_sq = 0.0;
    for (const auto& p : params) {
        for (double v : p.value->data) sum_sq += v * v;
    }
    return config_.l2_squared ? config_.l2_lambda * sum_sq
                              : config_.l2_lambda * std::sqrt(sum_sq);
}

void UpliftModel::add_regularization_grads(const std::vector<ParamRef>& params,
                                           GradientSet& grads) const {
    if (config_.l2_lambda == 0.0) return;
    if (config_.l2_squared) {
        for (const auto& p : params) {
            Matrix& g = grads.at(p.path);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                g.data[i] += 2.0 * config_.l2_lambda * p.value->data[i];
            }
        }
    } else {
        double sum_sq = 0.0;
        for (const auto& p : params) {
            for (double v : p.value->data) sum_sq += v * v;
        }
        const double norm = std::sqrt(sum_sq);
        if (norm == 0.0) return; // subgradient 0 at the origin
        for (const auto& p : params) {
            Matrix& g = grads.at(p.path);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                g.data[i] += config_.l2_lambda * p.value->data[i] / norm;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// CompositeModel
// ---------------------------------------------------------------------------

bool CompositeModel::uses_mmoe() const {
    return config_.kind == ModelKind::M3TN || config_.kind == ModelKind::M3TN_NoRM;
}

bool CompositeModel::uses_reparameterization() const {
    return config_.kind == ModelKind::M3TN || config_.kind == ModelKind::M3TN_NoMMoE;
}

CompositeModel::CompositeModel(M3TNConfig config, EncoderSpec encoder)
    : UpliftModel(std::move(config), std::move(encoder)) {
    const std::size_t d_enc = encoder_.encoded_dim();
    const auto K = static_cast<std::size_t>(config_.num_treatments);

    std::vector<std::size_t> expert_dims;
    expert_dims.push_back(d_enc);
    expert_dims.insert(expert_dims.end(), config_.expert_hidden.begin(),
                       config_.expert_hidden.end());
    const std::size_t repr_dim = expert_dims.back();

    std::vector<std::size_t> head_dims;
    head_dims.push_back(repr_dim);
    head_dims.insert(head_dims.end(), config_.head_hidden.begin(), config_.head_hidden.end());
    head_dims.push_back(1);

    const std::size_t num_experts = uses_mmoe() ? config_.num_experts : 1;
    for (std::size_t n = 0; n < num_experts; ++n) {
        experts_.push_back(Mlp::make(expert_dims, Activation::ReLU, Activation::ReLU));
    }
    if (uses_mmoe()) {
        for (std::size_t k = 0; k <= K; ++k) {
            gates_.emplace_back(d_enc, config_.num_experts, Activation::Softmax,
                                /*with_bias=*/false);
        }
    }
    for (std::size_t k = 0; k <= K; ++k) {
        heads_.push_back(Mlp::make(head_dims, Activation::ReLU, Activation::Identity));
    }

    Rng rng(config_.seed);
    for (auto& t : embeddings_) init_embedding(t, rng);
    for (auto& e : experts_) init_mlp(e, rng);
    for (auto& g : gates_) init_dense(g, rng);
    for (auto& h : heads_) init_mlp(h, rng);
}

void CompositeModel::collect_params(std::vector<ParamRef>& out) {
    if (uses_mmoe()) {
        for (std::size_t n = 0; n < experts_.size(); ++n) {
            experts_[n].collect_params("expert." + std::to_string(n), out);
        }
        for (std::size_t k = 0; k < gates_.size(); ++k) {
            out.push_back({"gate." + std::to_string(k) + ".w", &gates_[k].weights});
        }
    } else {
        experts_[0].collect_params("bottom", out);
    }
    for (std::size_t k = 0; k < heads_.size(); ++k) {
        heads_[k].collect_params("head." + std::to_string(k), out);
    }
}

struct CompositeModel::ForwardState {
    Matrix encoded;
    std::vector<Matrix> expert_out; // per expert, batch x repr
    std::vector<Matrix> gate_out;   // per gate, batch x N
    std::vector<Matrix> phi;        // per head (single entry without MMoE)
    std::vector<Matrix> head_out;   // per head, batch x 1

    std::vector<MlpCache> expert_caches;
    std::vector<DenseCache> gate_caches;
    std::vector<MlpCache> head_caches;

    const Matrix& phi_for(std::size_t k) const { return phi.size() == 1 ? phi[0] : phi[k]; }
};

std::vector<Matrix> CompositeModel::mmoe_forward(const Matrix& encoded) const {
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    std::vector<Matrix> phi;
    if (!uses_mmoe()) {
        const Matrix bottom = mlp_forward(experts_[0], encoded);
        phi.assign(K + 1, bottom);
        return phi;
    }
    std::vector<Matrix> expert_out;
    expert_out.reserve(experts_.size());
    for (const auto& e : experts_) expert_out.push_back(mlp_forward(e, encoded));
    const std::size_t repr = expert_out[0].cols;
    for (std::size_t k = 0; k <= K; ++k) {
        const Matrix g = dense_forward(gates_[k], encoded);
        Matrix p(encoded.rows, repr, 0.0);
        for (std::size_t n = 0; n < experts_.size(); ++n) {
            for (std::size_t i = 0; i < p.rows; ++i) {
                const double w = g(i, n);
                const double* src = expert_out[n].row_ptr(i);
                double* dst = p.row_ptr(i);
                for (std::size_t r = 0; r < repr; ++r) dst[r] += w * src[r];
            }
        }
        phi.push_back(std::move(p));
    }
    return phi;
}

std::vector<Matrix> CompositeModel::gate_outputs(const Matrix& encoded) const {
    if (!uses_mmoe()) throw StateError("gate_outputs: model has no gates");
    std::vector<Matrix> out;
    for (const auto& g : gates_) out.push_back(dense_forward(g, encoded));
    return out;
}

void CompositeModel::forward(const Matrix& raw, ForwardState& state, bool with_caches) const {
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    state.encoded = encode_features(raw, encoder_, embeddings_);

    if (uses_mmoe()) {
        const std::size_t N = experts_.size();
        state.expert_out.resize(N);
        if (with_caches) state.expert_caches.assign(N, MlpCache{});
        for (std::size_t n = 0; n < N; ++n) {
            state.expert_out[n] =
                with_caches ? mlp_forward_cached(experts_[n], state.encoded, state.expert_caches[n])
                            : mlp_forward(experts_[n], state.encoded);
        }
        state.gate_out.resize(K + 1);
        if (with_caches) state.gate_caches.assign(K + 1, DenseCache{});
        const std::size_t repr = state.expert_out[0].cols;
        state.phi.assign(K + 1, Matrix());
        for (std::size_t k = 0; k <= K; ++k) {
            state.gate_out[k] =
                with_caches ? dense_forward_cached(gates_[k], state.encoded, state.gate_caches[k])
                            : dense_forward(gates_[k], state.encoded);
            Matrix p(raw.rows, repr, 0.0);
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t i = 0; i < p.rows; ++i) {
                    const double w = state.gate_out[k](i, n);
                    const double* src = state.expert_out[n].row_ptr(i);
                    double* dst = p.row_ptr(i);
                    for (std::size_t r = 0; r < repr; ++r) dst[r] += w * src[r];
                }
            }
            state.phi[k] = std::move(p);
        }
    } else {
        state.expert_out.resize(1);
        if (with_caches) state.expert_caches.assign(1, MlpCache{});
        state.expert_out[0] =
            with_caches ? mlp_forward_cached(experts_[0], state.encoded, state.expert_caches[0])
                        : mlp_forward(experts_[0], state.encoded);
        state.phi.assign(1, state.expert_out[0]);
    }

    state.head_out.resize(K + 1);
    if (with_caches) state.head_caches.assign(K + 1, MlpCache{});
    for (std::size_t k = 0; k <= K; ++k) {
        state.head_out[k] =
            with_caches ? mlp_forward_cached(heads_[k], state.phi_for(k), state.head_caches[k])
                        : mlp_forward(heads_[k], state.phi_for(k));
    }
}

// Factual masking: head k sees only the samples with t == k, each head's
// term is averaged over its own factual subset, and heads with no samples in
// the batch contribute 0.
double CompositeModel::masked_loss(const ForwardState& state, const std::vector<int>& treatment,
                                   const std::vector<double>& response,
                                   std::vector<Matrix>* head_grads) const {
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    const std::size_t n = treatment.size();
    const bool rm = uses_reparameterization();

    std::vector<double> inv_count(K + 1, 0.0);
    for (int t : treatment) inv_count[static_cast<std::size_t>(t)] += 1.0;
    for (auto& c : inv_count) c = c > 0.0 ? 1.0 / c : 0.0;

    if (head_grads) {
        head_grads->assign(K + 1, Matrix(n, 1, 0.0));
    }

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = static_cast<std::size_t>(treatment[i]);
        const double mu0 = state.head_out[0](i, 0);
        double pred;
        if (t == 0) {
            pred = mu0;
        } else if (rm) {
            pred = mu0 + state.head_out[t](i, 0);
        } else {
            pred = state.head_out[t](i, 0);
        }
        const double resid = pred - response[i];
        loss += inv_count[t] * resid * resid;
        if (head_grads) {
            const double g = 2.0 * inv_count[t] * resid;
            if (t == 0) {
                (*head_grads)[0](i, 0) += g;
            } else if (rm) {
                (*head_grads)[0](i, 0) += g; // mu0 participates in every arm's response
                (*head_grads)[t](i, 0) += g;
            } else {
                (*head_grads)[t](i, 0) += g;
            }
        }
    }
    return loss;
}

UpliftPrediction CompositeModel::predict(const Matrix& raw) const {
    check_input(raw);
    ForwardState state;
    forward(raw, state, /*with_caches=*/false);
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    UpliftPrediction pred;
    pred.mu0 = column_of(state.head_out[0], 0);
    pred.tau = Matrix(raw.rows, K);
    const bool rm = uses_reparameterization();
    for (std::size_t k = 1; k <= K; ++k) {
        for (std::size_t i = 0; i < raw.rows; ++i) {
            // with the reparameterization heads the uplift is the head output
            // itself; response heads recover it as mu_k - mu0
            pred.tau(i, k - 1) = rm ? state.head_out[k](i, 0)
                                    : state.head_out[k](i, 0) - pred.mu0[i];
        }
    }
    return pred;
}

double CompositeModel::loss(const Matrix& raw, const std::vector<int>& treatment,
                            const std::vector<double>& response) const {
    check_batch(raw, treatment, response);
    ForwardState state;
    forward(raw, state, /*with_caches=*/false);
    double total = masked_loss(state, treatment, response, nullptr);

    if (config_.kind == ModelKind::SharedBottomMultiHead_MMD && config_.mmd_alpha > 0.0) {
        total += config_.mmd_alpha * mmd_penalty(state.phi[0], treatment, nullptr);
    }
    auto mutable_this = const_cast<CompositeModel*>(this);
    total += regularization(mutable_this->params());
    return total;
}

double CompositeModel::loss_and_gradients(const Matrix& raw, const std::vector<int>& treatment,
                                          const std::vector<double>& response,
                                          GradientSet& grads) const {
    check_batch(raw, treatment, response);
    auto mutable_this = const_cast<CompositeModel*>(this);
    const auto param_list = mutable_this->params();
    grads.reset(param_list);

    ForwardState state;
    forward(raw, state, /*with_caches=*/true);

    std::vector<Matrix> head_grads;
    double total = masked_loss(state, treatment, response, &head_grads);

    const auto K = static_cast<std::size_t>(config_.num_treatments);
    Matrix grad_encoded(state.encoded.rows, state.encoded.cols, 0.0);

    if (uses_mmoe()) {
        const std::size_t N = experts_.size();
        const std::size_t repr = state.expert_out[0].cols;
        std::vector<Matrix> expert_grad(N, Matrix(raw.rows, repr, 0.0));
        for (std::size_t k = 0; k <= K; ++k) {
            const Matrix dphi = mlp_backward(heads_[k], state.head_caches[k], head_grads[k],
                                             "head." + std::to_string(k), grads);
            Matrix dgate(raw.rows, N, 0.0);
            for (std::size_t nidx = 0; nidx < N; ++nidx) {
                for (std::size_t i = 0; i < raw.rows; ++i) {
                    const double w = state.gate_out[k](i, nidx);
                    const double* dp = dphi.row_ptr(i);
                    const double* eo = state.expert_out[nidx].row_ptr(i);
                    double* eg = expert_grad[nidx].row_ptr(i);
                    double dot = 0.0;
                    for (std::size_t r = 0; r < repr; ++r) {
                        eg[r] += w * dp[r];
                        dot += dp[r] * eo[r];
                    }
                    dgate(i, nidx) = dot;
                }
            }
            static Matrix no_bias;
            const Matrix dx = dense_backward(gates_[k], state.gate_caches[k], dgate,
                                             grads.at("gate." + std::to_string(k) + ".w"), no_bias);
            for (std::size_t i = 0; i < grad_encoded.data.size(); ++i) {
                grad_encoded.data[i] += dx.data[i];
            }
        }
        for (std::size_t nidx = 0; nidx < N; ++nidx) {
            const Matrix dx = mlp_backward(experts_[nidx], state.expert_caches[nidx],
                                           expert_grad[nidx], "expert." + std::to_string(nidx),
                                           grads);
            for (std::size_t i = 0; i < grad_encoded.data.size(); ++i) {
                grad_encoded.data[i] += dx.data[i];
            }
        }
    } else {
        const std::size_t repr = state.expert_out[0].cols;
        Matrix bottom_grad(raw.rows, repr, 0.0);
        for (std::size_t k = 0; k <= K; ++k) {
            const Matrix dphi = mlp_backward(heads_[k], state.head_caches[k], head_grads[k],
                                             "head." + std::to_string(k), grads);
            for (std::size_t i = 0; i < bottom_grad.data.size(); ++i) {
                bottom_grad.data[i] += dphi.data[i];
            }
        }
        if (config_.kind == ModelKind::SharedBottomMultiHead_MMD && config_.mmd_alpha > 0.0) {
            total += config_.mmd_alpha * mmd_penalty(state.phi[0], treatment, &bottom_grad);
        }
        const Matrix dx =
            mlp_backward(experts_[0], state.expert_caches[0], bottom_grad, "bottom", grads);
        for (std::size_t i = 0; i < grad_encoded.data.size(); ++i) {
            grad_encoded.data[i] += dx.data[i];
        }
    }

    embedding_backward(raw, encoder_, grad_encoded, grads);
    total += regularization(param_list);
    add_regularization_grads(param_list, grads);
    return total;
}

// Linear-kernel MMD^2 between each treated arm's representations and the
// controls, summed over arms present in the batch. The gradient (times the
// caller's alpha) is accumulated into grad_repr when given.
double CompositeModel::mmd_penalty(const Matrix& repr, const std::vector<int>& treatment,
                                   Matrix* grad_repr) const {
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    const std::size_t repr_dim = repr.cols;

    std::vector<std::size_t> counts(K + 1, 0);
    for (int t : treatment) ++counts[static_cast<std::size_t>(t)];
    if (counts[0] == 0) return 0.0;

    std::vector<double> control_mean(repr_dim, 0.0);
    for (std::size_t i = 0; i < repr.rows; ++i) {
        if (treatment[i] != 0) continue;
        const double* row = repr.row_ptr(i);
        for (std::size_t r = 0; r < repr_dim; ++r) control_mean[r] += row[r];
    }
    for (double& v : control_mean) v /= static_cast<double>(counts[0]);

    double penalty = 0.0;
    std::vector<double> control_grad(repr_dim, 0.0);
    for (std::size_t k = 1; k <= K; ++k) {
        if (counts[k] == 0) continue;
        std::vector<double> delta(repr_dim, 0.0);
        for (std::size_t i = 0; i < repr.rows; ++i) {
            if (static_cast<std::size_t>(treatment[i]) != k) continue;
            const double* row = repr.row_ptr(i);
            for (std::size_t r = 0; r < repr_dim; ++r) delta[r] += row[r];
        }
        for (std::size_t r = 0; r < repr_dim; ++r) {
            delta[r] = delta[r] / static_cast<double>(counts[k]) - control_mean[r];
            penalty += delta[r] * delta[r];
        }
        if (grad_repr) {
            const double treated_scale =
                2.0 * config_.mmd_alpha / static_cast<double>(counts[k]);
            for (std::size_t i = 0; i < repr.rows; ++i) {
                if (static_cast<std::size_t>(treatment[i]) != k) continue;
                double* row = grad_repr->row_ptr(i);
                for (std::size_t r = 0; r < repr_dim; ++r) row[r] += treated_scale * delta[r];
            }
            for (std::size_t r = 0; r < repr_dim; ++r) {
                control_grad[r] -= 2.0 * config_.mmd_alpha * delta[r];
            }
        }
    }
    if (grad_repr) {
        const double inv_c = 1.0 / static_cast<double>(counts[0]);
        for (std::size_t i = 0; i < repr.rows; ++i) {
            if (treatment[i] != 0) continue;
            double* row = grad_repr->row_ptr(i);
            for (std::size_t r = 0; r < repr_dim; ++r) row[r] += control_grad[r] * inv_c;
        }
    }
    return penalty;
}

double linear_mmd2(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw ConfigError("linear_mmd2: dimension mismatch");
    if (a.rows == 0 || b.rows == 0) throw std::invalid_argument("linear_mmd2: empty sample set");
    double out = 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < a.rows; ++i) ma += a(i, c);
        for (std::size_t i = 0; i < b.rows; ++i) mb += b(i, c);
        const double d = ma / static_cast<double>(a.rows) - mb / static_cast<double>(b.rows);
        out += d * d;
    }
    return out;
}

// ---------------------------------------------------------------------------
// SLearnerModel
// ---------------------------------------------------------------------------

SLearnerModel::SLearnerModel(M3TNConfig config, EncoderSpec encoder)
    : UpliftModel(std::move(config), std::move(encoder)) {
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    std::vector<std::size_t> dims;
    dims.push_back(encoder_.encoded_dim() + K + 1);
    dims.insert(dims.end(), config_.expert_hidden.begin(), config_.expert_hidden.end());
    dims.insert(dims.end(), config_.head_hidden.begin(), config_.head_hidden.end());
    dims.push_back(1);
    net_ = Mlp::make(dims, Activation::ReLU, Activation::Identity);

    Rng rng(config_.seed);
    for (auto& t : embeddings_) init_embedding(t, rng);
    init_mlp(net_, rng);
}

void SLearnerModel::collect_params(std::vector<ParamRef>& out) {
    net_.collect_params("net", out);
}

Matrix SLearnerModel::stacked_input(const Matrix& encoded, const std::vector<int>& treatment) const {
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    Matrix out(encoded.rows, encoded.cols + K + 1, 0.0);
    for (std::size_t i = 0; i < encoded.rows; ++i) {
        const double* src = encoded.row_ptr(i);
        double* dst = out.row_ptr(i);
        for (std::size_t j = 0; j < encoded.cols; ++j) dst[j] = src[j];
        dst[encoded.cols + static_cast<std::size_t>(treatment[i])] = 1.0;
    }
    return out;
}

UpliftPrediction SLearnerModel::predict(const Matrix& raw) const {
    check_input(raw);
    const Matrix encoded = encode_features(raw, encoder_, embeddings_);
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    UpliftPrediction pred;
    pred.tau = Matrix(raw.rows, K);
    for (std::size_t k = 0; k <= K; ++k) {
        const std::vector<int> t(raw.rows, static_cast<int>(k));
        const Matrix out = mlp_forward(net_, stacked_input(encoded, t));
        if (k == 0) {
            pred.mu0 = column_of(out, 0);
        } else {
            for (std::size_t i = 0; i < raw.rows; ++i) {
                pred.tau(i, k - 1) = out(i, 0) - pred.mu0[i];
            }
        }
    }
    return pred;
}

double SLearnerModel::loss(const Matrix& raw, const std::vector<int>& treatment,
                           const std::vector<double>& response) const {
    check_batch(raw, treatment, response);
    const Matrix encoded = encode_features(raw, encoder_, embeddings_);
    const Matrix out = mlp_forward(net_, stacked_input(encoded, treatment));
    const MseResult mse = mse_loss(column_of(out, 0), response);
    auto mutable_this = const_cast<SLearnerModel*>(this);
    return mse.loss + regularization(mutable_this->params());
}

double SLearnerModel::loss_and_gradients(const Matrix& raw, const std::vector<int>& treatment,
                                         const std::vector<double>& response,
                                         GradientSet& grads) const {
    check_batch(raw, treatment, response);
    auto mutable_this = const_cast<SLearnerModel*>(this);
    const auto param_list = mutable_this->params();
    grads.reset(param_list);

    const Matrix encoded = encode_features(raw, encoder_, embeddings_);
    MlpCache cache;
    const Matrix out = mlp_forward_cached(net_, stacked_input(encoded, treatment), cache);
    const MseResult mse = mse_loss(column_of(out, 0), response);

    Matrix dout(raw.rows, 1);
    for (std::size_t i = 0; i < raw.rows; ++i) dout(i, 0) = mse.grad[i];
    const Matrix dstacked = mlp_backward(net_, cache, dout, "net", grads);

    // embeddings see only the feature block of the stacked input
    Matrix grad_encoded(raw.rows, encoded.cols);
    for (std::size_t i = 0; i < raw.rows; ++i) {
        const double* src = dstacked.row_ptr(i);
        double* dst = grad_encoded.row_ptr(i);
        for (std::size_t j = 0; j < encoded.cols; ++j) dst[j] = src[j];
    }
    embedding_backward(raw, encoder_, grad_encoded, grads);

    double total = mse.loss + regularization(param_list);
    add_regularization_grads(param_list, grads);
    return total;
}

// ---------------------------------------------------------------------------
// TLearnerModel
// ---------------------------------------------------------------------------

TLearnerModel::TLearnerModel(M3TNConfig config, EncoderSpec encoder)
    : UpliftModel(std::move(config), std::move(encoder)) {
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    std::vector<std::size_t> dims;
    dims.push_back(encoder_.encoded_dim());
    dims.insert(dims.end(), config_.expert_hidden.begin(), config_.expert_hidden.end());
    dims.insert(dims.end(), config_.head_hidden.begin(), config_.head_hidden.end());
    dims.push_back(1);
    for (std::size_t k = 0; k <= K; ++k) {
        nets_.push_back(Mlp::make(dims, Activation::ReLU, Activation::Identity));
    }

    Rng rng(config_.seed);
    for (auto& t : embeddings_) init_embedding(t, rng);
    for (auto& n : nets_) init_mlp(n, rng);
}

void TLearnerModel::collect_params(std::vector<ParamRef>& out) {
    for (std::size_t k = 0; k < nets_.size(); ++k) {
        nets_[k].collect_params("net." + std::to_string(k), out);
    }
}

UpliftPrediction TLearnerModel::predict(const Matrix& raw) const {
    check_input(raw);
    const Matrix encoded = encode_features(raw, encoder_, embeddings_);
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    UpliftPrediction pred;
    pred.mu0 = column_of(mlp_forward(nets_[0], encoded), 0);
    pred.tau = Matrix(raw.rows, K);
    for (std::size_t k = 1; k <= K; ++k) {
        const Matrix out = mlp_forward(nets_[k], encoded);
        for (std::size_t i = 0; i < raw.rows; ++i) pred.tau(i, k - 1) = out(i, 0) - pred.mu0[i];
    }
    return pred;
}

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = m.row_ptr(idx[i]);
        double* dst = out.row_ptr(i);
        for (std::size_t j = 0; j < m.cols; ++j) dst[j] = src[j];
    }
    return out;
}

} // namespace

double TLearnerModel::loss(const Matrix& raw, const std::vector<int>& treatment,
                           const std::vector<double>& response) const {
    check_batch(raw, treatment, response);
    const Matrix encoded = encode_features(raw, encoder_, embeddings_);
    const auto K = static_cast<std::size_t>(config_.num_treatments);

    double total = 0.0;
    for (std::size_t k = 0; k <= K; ++k) {
        std::vector<std::size_t> idx;
        std::vector<double> y;
        for (std::size_t i = 0; i < raw.rows; ++i) {
            if (static_cast<std::size_t>(treatment[i]) == k) {
                idx.push_back(i);
                y.push_back(response[i]);
            }
        }
        if (idx.empty()) continue;
        const Matrix out = mlp_forward(nets_[k], gather_rows(encoded, idx));
        total += mse_loss(column_of(out, 0), y).loss;
    }
    auto mutable_this = const_cast<TLearnerModel*>(this);
    return total + regularization(mutable_this->params());
}

double TLearnerModel::loss_and_gradients(const Matrix& raw, const std::vector<int>& treatment,
                                         const std::vector<double>& response,
                                         GradientSet& grads) const {
    check_batch(raw, treatment, response);
    auto mutable_this = const_cast<TLearnerModel*>(this);
    const auto param_list = mutable_this->params();
    grads.reset(param_list);

    const Matrix encoded = encode_features(raw, encoder_, embeddings_);
    const auto K = static_cast<std::size_t>(config_.num_treatments);
    Matrix grad_encoded(raw.rows, encoded.cols, 0.0);

    double total = 0.0;
    for (std::size_t k = 0; k <= K; ++k) {
        std::vector<std::size_t> idx;
        std::vector<double> y;
        for (std::size_t i = 0; i < raw.rows; ++i) {
            if (static_cast<std::size_t>(treatment[i]) == k) {
                idx.push_back(i);
                y.push_back(response[i]);
            }
        }
        if (idx.empty()) continue;
        MlpCache cache;
        const Matrix out = mlp_forward_cached(nets_[k], gather_rows(encoded, idx), cache);
        const MseResult mse = mse_loss(column_of(out, 0), y);
        total += mse.loss;

        Matrix dout(idx.size(), 1);
        for (std::size_t i = 0; i < idx.size(); ++i) dout(i, 0) = mse.grad[i];
        const Matrix dsub = mlp_backward(nets_[k], cache, dout, "net." + std::to_string(k), grads);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* src = dsub.row_ptr(i);
            double* dst = grad_encoded.row_ptr(idx[i]);
            for (std::size_t j = 0; j < encoded.cols; ++j) dst[j] += src[j];
        }
    }

    embedding_backward(raw, encoder_, grad_encoded, grads);
    total += regularization(param_list);
    add_regularization_grads(param_list, grads);
    return total;
}

// ---------------------------------------------------------------------------

std::unique_ptr<UpliftModel> make_model(const M3TNConfig& config, const EncoderSpec& encoder) {
    switch (config.kind) {
    case ModelKind::M3TN:
    case ModelKind::M3TN_NoMMoE:
    case ModelKind::M3TN_NoRM:
    case ModelKind::SharedBottomMultiHead:
    case ModelKind::SharedBottomMultiHead_MMD:
        return std::make_unique<CompositeModel>(config, encoder);
    case ModelKind::SLearner:
        return std::make_unique<SLearnerModel>(config, encoder);
    case ModelKind::TLearner:
        return std::make_unique<TLearnerModel>(config, encoder);
    }
    throw ConfigError("make_model: unknown model kind");
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

namespace {

nlohmann::json config_to_json(const M3TNConfig& c) {
    nlohmann::json j;
    j["kind"] = model_kind_name(c.kind);
    j["num_treatments"] = c.num_treatments;
    j["num_experts"] = c.num_experts;
    j["expert_hidden"] = c.expert_hidden;
    j["head_hidden"] = c.head_hidden;
    j["l2_lambda"] = c.l2_lambda;
    j["l2_squared"] = c.l2_squared;
    j["mmd_alpha"] = c.mmd_alpha;
    j["seed"] = c.seed;
    j["embedding_dims"] = c.embedding_dims;
    return j;
}

M3TNConfig config_from_json(const nlohmann::json& j) {
    M3TNConfig c;
    c.kind = model_kind_from_name(j.at("kind").get<std::string>());
    c.num_treatments = j.at("num_treatments").get<int>();
    c.num_experts = j.at("num_experts").get<std::size_t>();
    c.expert_hidden = j.at("expert_hidden").get<std::vector<std::size_t>>();
    c.head_hidden = j.at("head_hidden").get<std::vector<std::size_t>>();
    c.l2_lambda = j.at("l2_lambda").get<double>();
    c.l2_squared = j.at("l2_squared").get<bool>();
    c.mmd_alpha = j.at("mmd_alpha").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.embedding_dims = j.at("embedding_dims").get<std::map<std::string, std::size_t>>();
    return c;
}

nlohmann::json encoder_to_json(const EncoderSpec& e) {
    nlohmann::json j;
    j["treatment"] = e.treatment_name;
    j["response"] = e.response_name;
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : e.columns) {
        nlohmann::json cj;
        cj["name"] = c.name;
        cj["kind"] = column_kind_name(c.kind);
        if (c.kind == ColumnKind::Numeric) {
            cj["mean"] = c.mean;
            cj["std"] = c.stddev;
        } else {
            cj["categories"] = c.categories;
            cj["embedding_dim"] = c.embedding_dim;
        }
        cols.push_back(std::move(cj));
    }
    j["columns"] = std::move(cols);
    return j;
}

EncoderSpec encoder_from_json(const nlohmann::json& j) {
    EncoderSpec e;
    e.treatment_name = j.at("treatment").get<std::string>();
    e.response_name = j.at("response").get<std::string>();
    for (const auto& cj : j.at("columns")) {
        EncoderColumn c;
        c.name = cj.at("name").get<std::string>();
        c.kind = column_kind_from_name(cj.at("kind").get<std::string>());
        if (c.kind == ColumnKind::Numeric) {
            c.mean = cj.at("mean").get<double>();
            c.stddev = cj.at("std").get<double>();
        } else {
            c.categories = cj.at("categories").get<std::vector<std::string>>();
            c.embedding_dim = cj.at("embedding_dim").get<std::size_t>();
        }
        e.columns.push_back(std::move(c));
    }
    return e;
}

} // namespace

void save_checkpoint(UpliftModel& model, const std::string& path) {
    nlohmann::json doc;
    doc["format"] = "uplift-checkpoint";
    doc["version"] = 1;
    doc["model"] = config_to_json(model.config());
    doc["encoder"] = encoder_to_json(model.encoder());
    nlohmann::json params;
    for (const auto& p : model.params()) {
        nlohmann::json pj;
        pj["rows"] = p.value->rows;
        pj["cols"] = p.value->cols;
        pj["data"] = p.value->data;
        params[p.path] = std::move(pj);
    }
    doc["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    out << doc.dump(2) << "\n";
}

std::unique_ptr<UpliftModel> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: " + path + " is not valid JSON: " + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != "uplift-checkpoint") {
            throw ConfigError("checkpoint: unrecognized format field");
        }
        const M3TNConfig config = config_from_json(doc.at("model"));
        const EncoderSpec encoder = encoder_from_json(doc.at("encoder"));
        auto model = make_model(config, encoder);
        const auto& params = doc.at("params");
        std::size_t used = 0;
        for (const auto& p : model->params()) {
            const auto it = params.find(p.path);
            if (it == params.end()) {
                throw ConfigError("checkpoint: missing parameter " + p.path);
            }
            const auto rows = it->at("rows").get<std::size_t>();
            const auto cols = it->at("cols").get<std::size_t>();
            if (rows != p.value->rows || cols != p.value->cols) {
                throw ConfigError("checkpoint: parameter " + p.path + " has shape " +
                                  std::to_string(rows) + "x" + std::to_string(cols) +
                                  ", expected " + p.value->shape_str());
            }
            p.value->data = it->at("data").get<std::vector<double>>();
            ++used;
        }
        if (used != params.size()) {
            throw ConfigError("checkpoint: file contains parameters the model does not have");
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint: malformed document: ") + e.what());
    }
}

} // namespace uplift
