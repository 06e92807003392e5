#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "heartbert/rng.hpp"
#include "heartbert/tensor.hpp"

namespace heartbert {

struct ModelConfig {
    int n_layers = 6;
    int n_heads = 12;
    int d_model = 768;
    int d_ff = 3072;
    int vocab_size = 52000;
    int max_positions = 514;
    int n_token_types = 1;
    double mask_prob = 0.15;
    double dropout = 0.1;
    bool tie_lm_head = true;

    int max_seq_len() const { return max_positions - 2; }
    int head_dim() const { return d_model / n_heads; }
    void validate() const;

    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Which encoder blocks a fine-tuning run may update. Embeddings and the MLM
// head stay frozen under every variant; only the last `n` blocks (counting
// from the top) train under LastN. AllUnfrozen is LastN(n_layers).
struct FreezePolicy {
    enum class Kind { AllFrozen, LastN, Half, AllUnfrozen };
    Kind kind = Kind::AllFrozen;
    int n = 0;

    static FreezePolicy all_frozen() { return {Kind::AllFrozen, 0}; }
    static FreezePolicy last_n(int n) { return {Kind::LastN, n}; }
    static FreezePolicy half() { return {Kind::Half, 0}; }
    static FreezePolicy all_unfrozen() { return {Kind::AllUnfrozen, 0}; }
    static FreezePolicy parse(const std::string& text);

    std::string name() const;
    int first_trainable_block(int n_layers) const;
};

struct TensorSpec {
    std::string name;
    std::vector<size_t> shape;

    size_t numel() const {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }
};

// Tensor registry: the single source of truth for tensor names and shapes.
std::vector<TensorSpec> encoder_tensor_specs(const ModelConfig& config);
std::vector<TensorSpec> head_tensor_specs(const ModelConfig& config, int n_classes,
                                          int lstm_hidden = 128);
long long total_parameters(const std::vector<TensorSpec>& specs);

// Trainable-parameter count for a fine-tuning setup (encoder under the policy
// plus the classification head), matching the published per-variant totals.
long long count_trainable(const ModelConfig& config, const FreezePolicy& freeze, int n_classes,
                          int lstm_hidden = 128);

// Ordered name -> tensor storage shared by the model, gradients, and the
// optimizer state. Iteration order is the registry order, which also fixes
// the checkpoint manifest order.
template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, std::vector<size_t> shape);
    Tensor<T>& get(const std::string& name);
    const Tensor<T>& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    Tensor<T>& value(size_t i) { return values_[i]; }
    const Tensor<T>& value(size_t i) const { return values_[i]; }

    long long total_parameters() const;
    void zero_all();

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> values_;
    std::unordered_map<std::string, size_t> index_;
};

// Zero-filled store covering a registry; gradient and optimizer-state buffers
// start from this.
template <typename T>
ParamStore<T> make_store(const std::vector<TensorSpec>& specs);

// One padded batch of token ids, row-major [batch, seq].
struct BatchIds {
    size_t batch = 0;
    size_t seq = 0;
    std::vector<int> ids;
    std::vector<int> attention_mask;

    size_t rows() const { return batch * seq; }
};

template <typename T>
struct ForwardCache;  // defined in the translation unit

template <typename T>
struct ForwardOutput {
    Tensor<T> hidden;  // [batch*seq, d_model]
    std::shared_ptr<ForwardCache<T>> cache;
};

struct ForwardOptions {
    bool training = false;    // enables dropout
    bool want_cache = false;  // keep activations for a backward pass
    Rng* dropout_rng = nullptr;
};

template <typename T>
struct MlmLossResult {
    double loss = 0.0;
    long long masked_positions = 0;
    long long correct_predictions = 0;  // argmax over the vocabulary, ties to the lowest id
    bool no_masked_positions = false;
};

template <typename T>
class EncoderModel {
public:
    ModelConfig config;
    ParamStore<T> params;

    static EncoderModel build(const ModelConfig& config, uint64_t seed);
    static EncoderModel from_params(const ModelConfig& config, ParamStore<T> params);

    ForwardOutput<T> forward(const BatchIds& batch, const ForwardOptions& opts = {}) const;

    // Full-vocabulary logits for every position. skip_transform bypasses the
    // dense+GELU+layer-norm transform so logits reduce to hidden · Eᵀ + bias.
    Tensor<T> mlm_logits(const Tensor<T>& hidden, bool skip_transform = false) const;

    // Masked-LM loss over labels (sentinel -100 = ignore) with gradients for
    // every tensor at or above `first_trainable_block`; embeddings train only
    // when train_embeddings is set (pretraining).
    MlmLossResult<T> mlm_loss_and_grads(const BatchIds& batch, const std::vector<int>& labels,
                                        const ForwardOutput<T>& fwd, ParamStore<T>& grads,
                                        int first_trainable_block = 0,
                                        bool train_embeddings = true) const;

    // Backpropagates d_hidden ([batch*seq, d_model]) through the encoder
    // stack. Used by classification heads sitting on top of `forward`.
    void backward_from_hidden(const BatchIds& batch, const ForwardOutput<T>& fwd,
                              const Tensor<T>& d_hidden, ParamStore<T>& grads,
                              int first_trainable_block, bool train_embeddings) const;

    // Pre-dropout attention weights for one layer, [batch*heads*seq, seq].
    // Requires a forward pass run with want_cache.
    static const Tensor<T>& attention_probs(const ForwardOutput<T>& fwd, int layer);

    long long parameter_total() const { return params.total_parameters(); }

private:
    EncoderModel() = default;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class EncoderModel<float>;
extern template class EncoderModel<double>;

}  // namespace heartbert
