#include "uplift/nn.hpp"

#include "uplift/errors.hpp"

#include <algorithm>
#include <cmath>

namespace uplift {

std::size_t param_count(const std::vector<ParamRef>& params) {
    std::size_t total = 0;
    for (const auto& p : params) total += p.value->size();
    return total;
}

void GradientSet::reset(const std::vector<ParamRef>& params) {
    buffers_.clear();
    for (const auto& p : params) {
        buffers_.emplace(p.path, Matrix(p.value->rows, p.value->cols, 0.0));
    }
}

Matrix& GradientSet::at(const std::string& path) {
    auto it = buffers_.find(path);
    if (it == buffers_.end()) throw StateError("GradientSet: no buffer for parameter " + path);
    return it->second;
}

const Matrix& GradientSet::at(const std::string& path) const {
    auto it = buffers_.find(path);
    if (it == buffers_.end()) throw StateError("GradientSet: no buffer for parameter " + path);
    return it->second;
}

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act, bool with_bias)
    : weights(out_dim, in_dim), activation(act) {
    if (with_bias) bias = Matrix(1, out_dim);
}

void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* row = m.row_ptr(i);
        double mx = row[0];
        for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < m.cols; ++j) row[j] /= sum;
    }
}

static void apply_activation(Matrix& z, Activation act) {
    switch (act) {
    case Activation::Identity:
        break;
    case Activation::ReLU:
        for (double& v : z.data) v = v > 0.0 ? v : 0.0;
        break;
    case Activation::Softmax:
        softmax_rows(z);
        break;
    }
}

Matrix dense_forward(const DenseLayer& layer, const Matrix& input) {
    if (input.cols != layer.in_dim()) {
        throw ConfigError("dense_forward: input shape " + input.shape_str() +
                          " does not match layer weights " + layer.weights.shape_str());
    }
    Matrix z = matmul_transb(input, layer.weights);
    if (layer.has_bias()) {
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* row = z.row_ptr(i);
            const double* b = layer.bias.row_ptr(0);
            for (std::size_t j = 0; j < z.cols; ++j) row[j] += b[j];
        }
    }
    apply_activation(z, layer.activation);
    return z;
}

Matrix dense_forward_cached(const DenseLayer& layer, const Matrix& input, DenseCache& cache) {
    Matrix out = dense_forward(layer, input);
    cache.input = input;
    cache.output = out;
    cache.valid = true;
    return out;
}

Matrix dense_backward(const DenseLayer& layer, const DenseCache& cache, const Matrix& grad_output,
                      Matrix& grad_weights, Matrix& grad_bias) {
    if (!cache.valid) {
        throw StateError("dense_backward: no cached forward pass");
    }
    if (!grad_output.same_shape(cache.output)) {
        throw ConfigError("dense_backward: grad shape " + grad_output.shape_str() +
                          " does not match output " + cache.output.shape_str());
    }

    // gradient through the activation, using the cached post-activation values
    Matrix dz = grad_output;
    switch (layer.activation) {
    case Activation::Identity:
        break;
    case Activation::ReLU:
        for (std::size_t i = 0; i < dz.data.size(); ++i) {
            if (cache.output.data[i] <= 0.0) dz.data[i] = 0.0;
        }
        break;
    case Activation::Softmax:
        for (std::size_t i = 0; i < dz.rows; ++i) {
            const double* s = cache.output.row_ptr(i);
            double* g = dz.row_ptr(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < dz.cols; ++j) dot += g[j] * s[j];
            for (std::size_t j = 0; j < dz.cols; ++j) g[j] = s[j] * (g[j] - dot);
        }
        break;
    }

    add_atb(dz, cache.input, grad_weights); // out x in
    if (layer.has_bias()) {
        for (std::size_t i = 0; i < dz.rows; ++i) {
            const double* row = dz.row_ptr(i);
            double* gb = grad_bias.row_ptr(0);
            for (std::size_t j = 0; j < dz.cols; ++j) gb[j] += row[j];
        }
    }
    return matmul(dz, layer.weights); // batch x in
}

Mlp Mlp::make(const std::vector<std::size_t>& dims, Activation hidden, Activation output) {
    if (dims.size() < 2) throw ConfigError("Mlp: need at least input and output dims");
    Mlp mlp;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const bool last = (i + 2 == dims.size());
        mlp.layers.emplace_back(dims[i], dims[i + 1], last ? output : hidden);
    }
    return mlp;
}

std::size_t Mlp::param_count() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.param_count();
    return total;
}

void Mlp::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string base = prefix + ".layer." + std::to_string(i);
        out.push_back({base + ".w", &layers[i].weights});
        if (layers[i].has_bias()) out.push_back({base + ".b", &layers[i].bias});
    }
}

Matrix mlp_forward(const Mlp& mlp, const Matrix& input) {
    Matrix x = input;
    for (const auto& layer : mlp.layers) x = dense_forward(layer, x);
    return x;
}

Matrix mlp_forward_cached(const Mlp& mlp, const Matrix& input, MlpCache& cache) {
    cache.layers.assign(mlp.layers.size(), DenseCache{});
    Matrix x = input;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        x = dense_forward_cached(mlp.layers[i], x, cache.layers[i]);
    }
    cache.valid = true;
    return x;
}

Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& grad_output,
                    const std::string& prefix, GradientSet& grads) {
    if (!cache.valid || cache.layers.size() != mlp.layers.size()) {
        throw StateError("mlp_backward: no cached forward pass");
    }
    Matrix g = grad_output;
    for (std::size_t i = mlp.layers.size(); i-- > 0;) {
        const std::string base = prefix + ".layer." + std::to_string(i);
        static Matrix no_bias;
        Matrix& gb = mlp.layers[i].has_bias() ? grads.at(base + ".b") : no_bias;
        g = dense_backward(mlp.layers[i], cache.layers[i], g, grads.at(base + ".w"), gb);
    }
    return g;
}

MseResult mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.empty()) throw std::invalid_argument("mse_loss: empty batch");
    if (pred.size() != target.size()) {
        throw std::invalid_argument("mse_loss: pred size " + std::to_string(pred.size()) +
                                    " != target size " + std::to_string(target.size()));
    }
    MseResult r;
    r.grad.resize(pred.size());
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        r.loss += d * d * inv_n;
        r.grad[i] = 2.0 * d * inv_n;
    }
    return r;
}

void AdamState::step(const std::vector<ParamRef>& params, const GradientSet& grads) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (const auto& p : params) {
        const Matrix& g = grads.at(p.path);
        if (!g.same_shape(*p.value)) {
            throw ConfigError("adam_step: gradient shape " + g.shape_str() +
                              " does not match parameter " + p.path + " " + p.value->shape_str());
        }
        Matrix& mm = m.emplace(p.path, Matrix(g.rows, g.cols, 0.0)).first->second;
        Matrix& vv = v.emplace(p.path, Matrix(g.rows, g.cols, 0.0)).first->second;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            mm.data[i] = beta1 * mm.data[i] + (1.0 - beta1) * g.data[i];
            vv.data[i] = beta2 * vv.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            const double mhat = mm.data[i] / bc1;
            const double vhat = vv.data[i] / bc2;
            p.value->data[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
        }
    }
}

void init_he_uniform(Matrix& mat, Rng& rng, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : mat.data) v = rng.uniform(-bound, bound);
}

void init_xavier_uniform(Matrix& mat, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : mat.data) v = rng.uniform(-bound, bound);
}

void init_dense(DenseLayer& layer, Rng& rng) {
    if (layer.activation == Activation::ReLU) {
        init_he_uniform(layer.weights, rng, layer.in_dim());
    } else {
        init_xavier_uniform(layer.weights, rng, layer.in_dim(), layer.out_dim());
    }
    // nonzero bias draws keep ReLU pre-activations off the exact kink even
    // when a whole previous layer goes dead
    if (layer.has_bias()) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
        for (double& v : layer.bias.data) v = rng.uniform(-bound, bound);
    }
}

void init_mlp(Mlp& mlp, Rng& rng) {
    for (auto& layer : mlp.layers) init_dense(layer, rng);
}

void init_embedding(EmbeddingTable& table, Rng& rng) {
    init_xavier_uniform(table.vectors, rng, 1, table.dim());
}

} // namespace uplift
