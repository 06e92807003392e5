#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "heartbert/model.hpp"
#include "heartbert/tensor.hpp"

namespace heartbert {

template <typename T>
struct HybridCache;  // defined in the translation unit

template <typename T>
struct HybridOutput {
    Tensor<T> logits;  // [batch, n_classes]
    ForwardOutput<T> encoder_out;
    std::shared_ptr<HybridCache<T>> cache;
};

struct ClassLossResult {
    double loss = 0.0;
    long long correct = 0;
};

// Encoder -> dense projection -> bidirectional LSTM -> linear classifier.
// The two LSTM directions read the projected sequence forwards and backwards
// (padding skipped via the attention mask); their final hidden states are
// concatenated and classified.
template <typename T>
class HybridModel {
public:
    ModelConfig config;
    int n_classes = 0;
    int lstm_hidden = 128;
    FreezePolicy freeze;
    EncoderModel<T> encoder;
    ParamStore<T> head;

    static HybridModel build(EncoderModel<T> encoder, int n_classes, const FreezePolicy& freeze,
                             uint64_t seed, int lstm_hidden = 128);
    static HybridModel from_parts(EncoderModel<T> encoder, ParamStore<T> head, int n_classes,
                                  const FreezePolicy& freeze, int lstm_hidden = 128);

    HybridOutput<T> forward(const BatchIds& batch, const ForwardOptions& opts = {}) const;

    // Softmax cross-entropy against integer labels, mean over the batch.
    // Head gradients always accumulate; encoder gradients only for blocks the
    // freeze policy leaves trainable (embeddings never train here).
    ClassLossResult loss_and_grads(const BatchIds& batch, const std::vector<int>& labels,
                                   const HybridOutput<T>& fwd, ParamStore<T>& encoder_grads,
                                   ParamStore<T>& head_grads) const;

    std::vector<int> predict(const BatchIds& batch) const;

    long long trainable_parameters() const;
    long long total_parameters() const;
    int first_trainable_block() const { return freeze.first_trainable_block(config.n_layers); }

private:
    explicit HybridModel(EncoderModel<T> enc) : encoder(std::move(enc)) {}
};

// Hybrid checkpoints reuse the encoder container with the head tensors
// appended; the sidecar adds head.* metadata next to the model.* entries.
void save_hybrid_checkpoint(const HybridModel<float>& model, const std::string& path,
                            const std::map<std::string, std::string>& extra_meta = {});
HybridModel<float> load_hybrid_checkpoint(const std::string& path);

extern template class HybridModel<float>;
extern template class HybridModel<double>;

}  // namespace heartbert
