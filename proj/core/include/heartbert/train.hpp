#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "heartbert/hybrid.hpp"
#include "heartbert/model.hpp"
#include "heartbert/rng.hpp"
#include "heartbert/tensor.hpp"
#include "heartbert/tokenizer.hpp"

namespace heartbert {

// How selected positions are rewritten. The default is the 80/10/10 split
// (MASK / random in-alphabet id / unchanged); AlwaysMask exists for tests.
enum class MaskStrategy { Standard801010, AlwaysMask };

struct MlmBatch {
    std::vector<int> input_ids;  // after masking
    std::vector<int> labels;     // original id where masked, -100 elsewhere
    long long eligible = 0;
    long long masked = 0;
};

// Dynamic masking: every real non-special position is selected independently
// with probability p. Specials (ids 0..4) and padding are never touched.
MlmBatch mask_tokens(const std::vector<int>& ids, const std::vector<int>& attention_mask,
                     int vocab_size, double p, Rng& rng,
                     MaskStrategy strategy = MaskStrategy::Standard801010);

struct LossValue {
    double loss = 0.0;
    long long positions = 0;
    bool no_masked_positions = false;
};

// Mean cross-entropy over positions whose label is not the -100 sentinel;
// logits rows at sentinel positions are never read.
template <typename T>
LossValue mlm_loss(const Tensor<T>& logits, const std::vector<int>& labels);

// Decoupled-weight-decay Adam over a fixed list of tensor names. With
// weight_decay = 0 this is plain Adam (the fine-tuning optimizer).
template <typename T>
class AdamW {
public:
    struct Options {
        double lr = 5e-5;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    AdamW(std::vector<std::string> trainable, Options opts);

    // One update; `grads` must hold every trainable name. Gradients are not
    // cleared here.
    void step(ParamStore<T>& params, const ParamStore<T>& grads);

    long long step_count() const { return t_; }
    const std::vector<std::string>& trainable() const { return names_; }

private:
    std::vector<std::string> names_;
    Options opts_;
    long long t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

struct TrainLogEntry {
    int epoch = 0;
    double loss = 0.0;
    double val_acc = 0.0;
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;
    uint64_t seed = 0;
    std::map<std::string, std::string> config;  // snapshot of the run's settings
    double wall_seconds = 0.0;                  // reported, never persisted
};

// Writes `epoch=<i> loss=<f> val_acc=<f>` records to `path` and a JSON
// summary to `path`.json. Provenance strings become `#> ` comment lines.
void save_train_log(const TrainLog& log, const std::string& path,
                    const std::vector<std::string>& provenance = {});
TrainLog load_train_log(const std::string& path);

struct PretrainOptions {
    int epochs = 1000;
    int batch_size = 64;
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    MaskStrategy strategy = MaskStrategy::Standard801010;
    uint64_t seed = 0;
};

struct PretrainResult {
    EncoderModel<float> model;
    TrainLog log;
};

// Masked-language-model training from scratch. Deterministic in
// (corpus, config, options): shuffling, masking, and dropout each draw from
// named sub-streams of the seed. NaN loss aborts with a numerical error.
PretrainResult pretrain(const std::vector<TokenizedSequence>& corpus, const ModelConfig& config,
                        const PretrainOptions& opts);

struct LabeledDataset {
    std::vector<TokenizedSequence> sequences;
    std::vector<int> labels;

    size_t size() const { return sequences.size(); }
};

struct FinetuneOptions {
    std::vector<double> lrs = {3e-5, 4e-3, 5e-3};
    int batch_size = 8;
    int epochs = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;
};

struct FinetuneResult {
    HybridModel<float> model;  // snapshot of the best (lr, epoch) by validation accuracy
    TrainLog log;              // the winning rate's series
    double best_lr = 0.0;
    double best_val_acc = 0.0;
    int best_epoch = -1;
    std::vector<TrainLog> sweep_logs;  // one per candidate rate, in option order
};

// Cross-entropy fine-tuning with the learning-rate sweep: each candidate rate
// trains a fresh copy of `initial`; the (rate, epoch) with the highest
// validation accuracy wins (earliest on ties). Frozen tensors are never
// passed to the optimizer.
FinetuneResult finetune(const HybridModel<float>& initial, const LabeledDataset& train,
                        const LabeledDataset& val, const FinetuneOptions& opts);

// Accuracy of the model's predictions over a dataset (batched, eval mode).
double classification_accuracy(const HybridModel<float>& model, const LabeledDataset& data,
                               int batch_size = 8);

// The tensor names a fine-tuning policy trains: the whole head plus encoder
// blocks at or above the policy's first trainable block.
std::vector<std::string> trainable_tensor_names(const HybridModel<float>& model);

extern template LossValue mlm_loss<float>(const Tensor<float>&, const std::vector<int>&);
extern template LossValue mlm_loss<double>(const Tensor<double>&, const std::vector<int>&);
extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace heartbert
