#pragma once

#include "uplift/matrix.hpp"
#include "uplift/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace uplift {

enum class Activation { Identity, ReLU, Softmax };

// Named, mutable view onto one trainable matrix of a model. Paths are stable
// across runs ("expert.0.layer.1.w") and key the gradient buffers, the Adam
// moments and the checkpoint format.
struct ParamRef {
    std::string path;
    Matrix* value;
};

std::size_t param_count(const std::vector<ParamRef>& params);

// One gradient buffer per trainable parameter, keyed by parameter path.
class GradientSet {
public:
    // drop everything and allocate exactly one zero buffer per parameter
    void reset(const std::vector<ParamRef>& params);

    Matrix& at(const std::string& path);
    const Matrix& at(const std::string& path) const;
    bool has(const std::string& path) const { return buffers_.count(path) != 0; }
    std::size_t size() const { return buffers_.size(); }
    const std::map<std::string, Matrix>& buffers() const { return buffers_; }

private:
    std::map<std::string, Matrix> buffers_;
};

// y = act(x W^T + b) applied row-wise; W is out_dim x in_dim, bias is
// 1 x out_dim and may be empty for bias-free layers (softmax gates).
struct DenseLayer {
    Matrix weights;
    Matrix bias;
    Activation activation = Activation::Identity;

    DenseLayer() = default;
    DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act, bool with_bias = true);

    std::size_t in_dim() const { return weights.cols; }
    std::size_t out_dim() const { return weights.rows; }
    bool has_bias() const { return !bias.empty(); }
    std::size_t param_count() const { return weights.size() + bias.size(); }
};

// Activations cached by a forward pass; required by the backward rules.
struct DenseCache {
    Matrix input;
    Matrix output;
    bool valid = false;
};

Matrix dense_forward(const DenseLayer& layer, const Matrix& input);
Matrix dense_forward_cached(const DenseLayer& layer, const Matrix& input, DenseCache& cache);

// Accumulates parameter gradients into grad_weights/grad_bias and returns the
// gradient w.r.t. the layer input. Throws StateError when the cache does not
// come from a forward pass.
Matrix dense_backward(const DenseLayer& layer, const DenseCache& cache, const Matrix& grad_output,
                      Matrix& grad_weights, Matrix& grad_bias);

// in-place row-wise softmax with max-subtraction stabilization
void softmax_rows(Matrix& m);

// Plain feed-forward stack; consecutive layer dims chain.
struct Mlp {
    std::vector<DenseLayer> layers;

    // dims = {in, h1, ..., out}; `hidden` used for all but the last layer
    static Mlp make(const std::vector<std::size_t>& dims, Activation hidden, Activation output);

    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }
    std::size_t param_count() const;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

struct MlpCache {
    std::vector<DenseCache> layers;
    bool valid = false;
};

Matrix mlp_forward(const Mlp& mlp, const Matrix& input);
Matrix mlp_forward_cached(const Mlp& mlp, const Matrix& input, MlpCache& cache);
Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& grad_output,
                    const std::string& prefix, GradientSet& grads);

// Row store for one categorical feature; row i is the embedding of index i.
struct EmbeddingTable {
    Matrix vectors; // cardinality x dim

    EmbeddingTable() = default;
    EmbeddingTable(std::size_t cardinality, std::size_t dim) : vectors(cardinality, dim) {}

    std::size_t cardinality() const { return vectors.rows; }
    std::size_t dim() const { return vectors.cols; }
};

struct MseResult {
    double loss = 0.0;
    std::vector<double> grad; // d loss / d pred
};

// loss = (1/n) sum (pred - target)^2
MseResult mse_loss(const std::vector<double>& pred, const std::vector<double>& target);

// Adam with bias correction. Moment buffers mirror parameter shapes and are
// created lazily on the first step; the step counter advances once per call.
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step_count = 0;
    std::map<std::string, Matrix> m;
    std::map<std::string, Matrix> v;

    explicit AdamState(double lr = 1e-3) : learning_rate(lr) {}

    void step(const std::vector<ParamRef>& params, const GradientSet& grads);
};

// Seeded initialization. He-uniform feeds ReLU layers, Xavier-uniform the
// identity/softmax ones; biases start at zero. Same seed, same bytes.
void init_he_uniform(Matrix& m, Rng& rng, std::size_t fan_in);
void init_xavier_uniform(Matrix& m, Rng& rng, std::size_t fan_in, std::size_t fan_out);
void init_dense(DenseLayer& layer, Rng& rng);
void init_mlp(Mlp& mlp, Rng& rng);
void init_embedding(EmbeddingTable& table, Rng& rng);

} // namespace uplift
