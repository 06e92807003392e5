#include "heartbert/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "heartbert/errors.hpp"
#include "heartbert/tokenizer.hpp"
#include "json.hpp"

namespace heartbert {

namespace {

constexpr int kIgnoreLabel = -100;

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Pads a set of tokenized sequences to the longest member and stacks them.
BatchIds assemble_batch(const std::vector<TokenizedSequence>& sequences,
                        const std::vector<size_t>& order, size_t begin, size_t end) {
    size_t max_len = 0;
    for (size_t i = begin; i < end; ++i) {
        max_len = std::max(max_len, sequences[order[i]].ids.size());
    }
    BatchIds batch;
    batch.batch = end - begin;
    batch.seq = max_len;
    batch.ids.reserve(batch.rows());
    batch.attention_mask.reserve(batch.rows());
    for (size_t i = begin; i < end; ++i) {
        const auto& seq = sequences[order[i]];
        batch.ids.insert(batch.ids.end(), seq.ids.begin(), seq.ids.end());
        batch.attention_mask.insert(batch.attention_mask.end(), seq.attention_mask.begin(),
                                    seq.attention_mask.end());
        for (size_t pad = seq.ids.size(); pad < max_len; ++pad) {
            batch.ids.push_back(BpeTokenizer::kPadId);
            batch.attention_mask.push_back(0);
        }
    }
    return batch;
}

void validate_corpus(const std::vector<TokenizedSequence>& corpus, int vocab_size) {
    if (corpus.empty()) fail(ErrorKind::Data, "training corpus is empty");
    for (const auto& seq : corpus) {
        if (seq.ids.empty() || seq.ids.size() != seq.attention_mask.size()) {
            fail(ErrorKind::Data, "training corpus holds a malformed sequence");
        }
        for (int id : seq.ids) {
            if (id < 0 || id >= vocab_size) fail(ErrorKind::Data, "token id outside the vocabulary");
        }
    }
}

}  // namespace

MlmBatch mask_tokens(const std::vector<int>& ids, const std::vector<int>& attention_mask,
                     int vocab_size, double p, Rng& rng, MaskStrategy strategy) {
    if (ids.size() != attention_mask.size()) fail(ErrorKind::Data, "mask_tokens: size mismatch");
    if (p < 0.0 || p > 1.0) fail(ErrorKind::Parameter, "mask_tokens: p must be in [0,1]");
    if (vocab_size <= BpeTokenizer::kFirstAlphabetId) {
        fail(ErrorKind::Parameter, "mask_tokens: vocabulary holds no maskable ids");
    }

    MlmBatch out;
    out.input_ids = ids;
    out.labels.assign(ids.size(), kIgnoreLabel);
    const int alphabet_span = vocab_size - BpeTokenizer::kFirstAlphabetId;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (attention_mask[i] != 1) continue;
        if (ids[i] < BpeTokenizer::kFirstAlphabetId) continue;  // specials stay untouched
        ++out.eligible;
        if (rng.uniform() >= p) continue;
        ++out.masked;
        out.labels[i] = ids[i];
        if (strategy == MaskStrategy::AlwaysMask) {
            out.input_ids[i] = BpeTokenizer::kMaskId;
            continue;
        }
        const double r = rng.uniform();
        if (r < 0.8) {
            out.input_ids[i] = BpeTokenizer::kMaskId;
        } else if (r < 0.9) {
            out.input_ids[i] = BpeTokenizer::kFirstAlphabetId +
                               static_cast<int>(rng.uniform_index(static_cast<uint64_t>(alphabet_span)));
        }  // else: keep the original token
    }
    return out;
}

template <typename T>
LossValue mlm_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2 || logits.dim(0) != labels.size()) {
        fail(ErrorKind::Data, "mlm_loss: logits/labels shapes disagree");
    }
    const size_t V = logits.dim(1);
    LossValue out;
    double total = 0.0;
    for (size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] == kIgnoreLabel) continue;
        if (labels[r] < 0 || static_cast<size_t>(labels[r]) >= V) {
            fail(ErrorKind::Data, "mlm_loss: label id out of range");
        }
        const T* row = logits.data() + r * V;
        double mx = static_cast<double>(row[0]);
        for (size_t j = 1; j < V; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (size_t j = 0; j < V; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        total += mx + std::log(denom) - static_cast<double>(row[static_cast<size_t>(labels[r])]);
        ++out.positions;
    }
    if (out.positions == 0) {
        out.no_masked_positions = true;
        return out;
    }
    out.loss = total / static_cast<double>(out.positions);
    return out;
}

template <typename T>
AdamW<T>::AdamW(std::vector<std::string> trainable, Options opts)
    : names_(std::move(trainable)), opts_(opts) {
    if (opts_.lr <= 0.0) fail(ErrorKind::Parameter, "optimizer learning rate must be positive");
    m_.resize(names_.size());
    v_.resize(names_.size());
}

template <typename T>
void AdamW<T>::step(ParamStore<T>& params, const ParamStore<T>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (size_t ni = 0; ni < names_.size(); ++ni) {
        auto& p = params.get(names_[ni]);
        const auto& g = grads.get(names_[ni]);
        if (m_[ni].numel() == 0) {
            m_[ni] = Tensor<T>(p.shape());
            v_[ni] = Tensor<T>(p.shape());
        }
        auto& m = m_[ni];
        auto& v = v_[ni];
        for (size_t i = 0; i < p.numel(); ++i) {
            double pe = static_cast<double>(p[i]);
            const double ge = static_cast<double>(g[i]);
            pe *= 1.0 - opts_.lr * opts_.weight_decay;  // decoupled decay
            const double me = opts_.beta1 * static_cast<double>(m[i]) + (1.0 - opts_.beta1) * ge;
            const double ve =
                opts_.beta2 * static_cast<double>(v[i]) + (1.0 - opts_.beta2) * ge * ge;
            m[i] = static_cast<T>(me);
            v[i] = static_cast<T>(ve);
            pe -= opts_.lr * (me / bc1) / (std::sqrt(ve / bc2) + opts_.eps);
            p[i] = static_cast<T>(pe);
        }
    }
}

void save_train_log(const TrainLog& log, const std::string& path,
                    const std::vector<std::string>& provenance) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Parameter, "cannot open " + path + " for writing");
    for (const auto& line : provenance) out << "#> " << line << "\n";
    out << "#> seed=" << log.seed << "\n";
    for (const auto& e : log.entries) {
        out << "epoch=" << e.epoch << " loss=" << fmt_double(e.loss) << " val_acc="
            << fmt_double(e.val_acc) << "\n";
    }
    if (!out) fail(ErrorKind::Parameter, "write failed for " + path);

    nlohmann::json j;
    j["seed"] = log.seed;
    j["epochs"] = log.entries.size();
    j["config"] = log.config;
    j["provenance"] = provenance;
    double best_acc = 0.0;
    for (const auto& e : log.entries) best_acc = std::max(best_acc, e.val_acc);
    j["best_val_acc"] = best_acc;
    j["final_loss"] = log.entries.empty() ? 0.0 : log.entries.back().loss;
    auto& entries = j["entries"] = nlohmann::json::array();
    for (const auto& e : log.entries) {
        entries.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"val_acc", e.val_acc}});
    }
    std::ofstream js(path + ".json", std::ios::trunc);
    if (!js) fail(ErrorKind::Parameter, "cannot open " + path + ".json for writing");
    js << j.dump(2) << "\n";
    if (!js) fail(ErrorKind::Parameter, "write failed for " + path + ".json");
}

TrainLog load_train_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::MissingArtifact, "training log not found: " + path);
    TrainLog log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("#>", 0) == 0) {
            auto seed_pos = line.find("seed=");
            if (seed_pos != std::string::npos) {
                try {
                    log.seed = std::stoull(line.substr(seed_pos + 5));
                } catch (const std::exception&) {
                    fail(ErrorKind::Format, path + ": bad seed in provenance");
                }
            }
            continue;
        }
        TrainLogEntry e;
        if (std::sscanf(line.c_str(), "epoch=%d loss=%lf val_acc=%lf", &e.epoch, &e.loss,
                        &e.val_acc) != 3) {
            fail(ErrorKind::Format, path + ": expected 'epoch=<i> loss=<f> val_acc=<f>'");
        }
        log.entries.push_back(e);
    }
    return log;
}

PretrainResult pretrain(const std::vector<TokenizedSequence>& corpus, const ModelConfig& config,
                        const PretrainOptions& opts) {
    config.validate();
    validate_corpus(corpus, config.vocab_size);
    if (opts.epochs < 0) fail(ErrorKind::Parameter, "pretrain: epochs must be >= 0");
    if (opts.batch_size < 1) fail(ErrorKind::Parameter, "pretrain: batch size must be >= 1");

    auto model = EncoderModel<float>::build(config, opts.seed);
    std::vector<std::string> all_names = model.params.names();
    AdamW<float> optimizer(all_names, {opts.lr, opts.beta1, opts.beta2, opts.eps,
                                       opts.weight_decay});
    auto grads = make_store<float>(encoder_tensor_specs(config));

    TrainLog log;
    log.seed = opts.seed;
    log.config = config.to_kv();
    log.config["optimizer"] = "adamw";
    log.config["lr"] = fmt_double(opts.lr);
    log.config["batch_size"] = std::to_string(opts.batch_size);
    log.config["epochs"] = std::to_string(opts.epochs);
    log.config["weight_decay"] = fmt_double(opts.weight_decay);

    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), size_t{0});
    uint64_t step = 0;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        auto shuffle_rng = Rng::substream(opts.seed, "pretrain-shuffle", static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double loss_weighted = 0.0;
        long long masked_total = 0, correct_total = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(opts.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(opts.batch_size));
            BatchIds batch = assemble_batch(corpus, order, begin, end);

            auto mask_rng = Rng::substream(opts.seed, "masking", step);
            MlmBatch masked = mask_tokens(batch.ids, batch.attention_mask, config.vocab_size,
                                          config.mask_prob, mask_rng, opts.strategy);
            BatchIds inputs = batch;
            inputs.ids = masked.input_ids;

            auto dropout_rng = Rng::substream(opts.seed, "dropout", step);
            ForwardOptions fwd_opts;
            fwd_opts.training = true;
            fwd_opts.want_cache = true;
            fwd_opts.dropout_rng = &dropout_rng;
            auto fwd = model.forward(inputs, fwd_opts);

            grads.zero_all();
            auto result = model.mlm_loss_and_grads(inputs, masked.labels, fwd, grads, 0, true);
            if (!std::isfinite(result.loss)) {
                fail(ErrorKind::Numeric, "pretrain diverged (non-finite loss) at epoch " +
                                             std::to_string(epoch) + ", step " +
                                             std::to_string(step));
            }
            optimizer.step(model.params, grads);
            loss_weighted += result.loss * static_cast<double>(result.masked_positions);
            masked_total += result.masked_positions;
            correct_total += result.correct_predictions;
            ++step;
        }
        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.loss = masked_total > 0 ? loss_weighted / static_cast<double>(masked_total) : 0.0;
        entry.val_acc = masked_total > 0
                            ? static_cast<double>(correct_total) / static_cast<double>(masked_total)
                            : 0.0;
        log.entries.push_back(entry);
    }
    return PretrainResult{std::move(model), std::move(log)};
}

std::vector<std::string> trainable_tensor_names(const HybridModel<float>& model) {
    std::vector<std::string> names;
    const int first = model.first_trainable_block();
    for (const auto& name : model.encoder.params.names()) {
        constexpr const char* prefix = "encoder.layer.";
        if (name.rfind(prefix, 0) != 0) continue;
        const size_t start = std::string(prefix).size();
        const int layer = std::stoi(name.substr(start, name.find('.', start) - start));
        if (layer >= first) names.push_back(name);
    }
    for (const auto& name : model.head.names()) names.push_back(name);
    return names;
}

double classification_accuracy(const HybridModel<float>& model, const LabeledDataset& data,
                               int batch_size) {
    if (data.size() == 0) fail(ErrorKind::Data, "accuracy over an empty dataset");
    if (data.labels.size() != data.sequences.size()) {
        fail(ErrorKind::Data, "dataset labels/sequences size mismatch");
    }
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    long long correct = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), begin + static_cast<size_t>(batch_size));
        BatchIds batch = assemble_batch(data.sequences, order, begin, end);
        auto preds = model.predict(batch);
        for (size_t i = begin; i < end; ++i) {
            if (preds[i - begin] == data.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

void validate_labeled(const LabeledDataset& data, int n_classes, const char* which) {
    if (data.size() == 0) fail(ErrorKind::Data, std::string(which) + " dataset is empty");
    if (data.labels.size() != data.sequences.size()) {
        fail(ErrorKind::Data, std::string(which) + " dataset labels/sequences size mismatch");
    }
    for (int label : data.labels) {
        if (label < 0 || label >= n_classes) {
            fail(ErrorKind::Data, std::string(which) + " dataset holds an out-of-range label");
        }
    }
}

}  // namespace

FinetuneResult finetune(const HybridModel<float>& initial, const LabeledDataset& train,
                        const LabeledDataset& val, const FinetuneOptions& opts) {
    validate_labeled(train, initial.n_classes, "train");
    validate_labeled(val, initial.n_classes, "validation");
    validate_corpus(train.sequences, initial.config.vocab_size);
    if (opts.lrs.empty()) fail(ErrorKind::Parameter, "finetune: no learning rates to sweep");
    if (opts.batch_size < 1) fail(ErrorKind::Parameter, "finetune: batch size must be >= 1");
    if (opts.epochs < 0) fail(ErrorKind::Parameter, "finetune: epochs must be >= 0");

    std::vector<long long> class_counts(static_cast<size_t>(initial.n_classes), 0);
    for (int label : train.labels) ++class_counts[static_cast<size_t>(label)];
    for (size_t c = 0; c < class_counts.size(); ++c) {
        if (class_counts[c] == 0) {
            std::fprintf(stderr, "warning: class %zu has no training examples\n", c);
        }
    }

    const int first = initial.first_trainable_block();
    std::vector<std::string> encoder_trainable, head_trainable;
    for (const auto& name : trainable_tensor_names(initial)) {
        (name.rfind("head.", 0) == 0 ? head_trainable : encoder_trainable).push_back(name);
    }

    FinetuneResult result{initial, TrainLog{}, 0.0, -1.0, -1, {}};
    for (size_t li = 0; li < opts.lrs.size(); ++li) {
        const double lr = opts.lrs[li];
        const std::string lr_tag = std::to_string(li);
        HybridModel<float> model = initial;
        typename AdamW<float>::Options adam;
        adam.lr = lr;
        adam.beta1 = opts.beta1;
        adam.beta2 = opts.beta2;
        adam.eps = opts.eps;
        adam.weight_decay = 0.0;  // plain Adam for fine-tuning
        AdamW<float> encoder_opt(encoder_trainable, adam);
        AdamW<float> head_opt(head_trainable, adam);
        auto encoder_grads = make_store<float>(encoder_tensor_specs(model.config));
        auto head_grads =
            make_store<float>(head_tensor_specs(model.config, model.n_classes, model.lstm_hidden));

        TrainLog log;
        log.seed = opts.seed;
        log.config["optimizer"] = "adam";
        log.config["lr"] = fmt_double(lr);
        log.config["batch_size"] = std::to_string(opts.batch_size);
        log.config["epochs"] = std::to_string(opts.epochs);
        log.config["freeze"] = model.freeze.name();
        log.config["n_classes"] = std::to_string(model.n_classes);

        double lr_best_acc = -1.0;
        int lr_best_epoch = -1;
        HybridModel<float> lr_best = model;

        std::vector<size_t> order(train.size());
        std::iota(order.begin(), order.end(), size_t{0});
        uint64_t step = 0;
        for (int epoch = 0; epoch < opts.epochs; ++epoch) {
            auto shuffle_rng = Rng::substream(opts.seed, "finetune-shuffle:" + lr_tag,
                                              static_cast<uint64_t>(epoch));
            shuffle_rng.shuffle(order);
            double loss_sum = 0.0;
            long long examples = 0;
            for (size_t begin = 0; begin < order.size();
                 begin += static_cast<size_t>(opts.batch_size)) {
                const size_t end =
                    std::min(order.size(), begin + static_cast<size_t>(opts.batch_size));
                BatchIds batch = assemble_batch(train.sequences, order, begin, end);
                std::vector<int> labels;
                labels.reserve(end - begin);
                for (size_t i = begin; i < end; ++i) labels.push_back(train.labels[order[i]]);

                auto dropout_rng =
                    Rng::substream(opts.seed, "finetune-dropout:" + lr_tag, step);
                ForwardOptions fwd_opts;
                fwd_opts.training = true;
                fwd_opts.want_cache = true;
                fwd_opts.dropout_rng = &dropout_rng;
                auto fwd = model.forward(batch, fwd_opts);

                encoder_grads.zero_all();
                head_grads.zero_all();
                auto loss = model.loss_and_grads(batch, labels, fwd, encoder_grads, head_grads);
                if (!std::isfinite(loss.loss)) {
                    fail(ErrorKind::Numeric, "finetune diverged (non-finite loss) at lr " +
                                                 fmt_double(lr) + ", epoch " +
                                                 std::to_string(epoch));
                }
                if (first < model.config.n_layers) encoder_opt.step(model.encoder.params, encoder_grads);
                head_opt.step(model.head, head_grads);
                loss_sum += loss.loss * static_cast<double>(end - begin);
                examples += static_cast<long long>(end - begin);
                ++step;
            }
            const double val_acc = classification_accuracy(model, val, opts.batch_size);
            TrainLogEntry entry;
            entry.epoch = epoch;
            entry.loss = examples > 0 ? loss_sum / static_cast<double>(examples) : 0.0;
            entry.val_acc = val_acc;
            log.entries.push_back(entry);
            if (val_acc > lr_best_acc) {
                lr_best_acc = val_acc;
                lr_best_epoch = epoch;
                lr_best = model;
            }
        }
        if (opts.epochs == 0) {
            lr_best_acc = classification_accuracy(model, val, opts.batch_size);
            lr_best_epoch = -1;
        }
        result.sweep_logs.push_back(log);
        if (lr_best_acc > result.best_val_acc) {
            result.best_val_acc = lr_best_acc;
            result.best_lr = lr;
            result.best_epoch = lr_best_epoch;
            result.model = std::move(lr_best);
            result.log = std::move(log);
        }
    }
    return result;
}

template LossValue mlm_loss<float>(const Tensor<float>&, const std::vector<int>&);
template LossValue mlm_loss<double>(const Tensor<double>&, const std::vector<int>&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace heartbert
