#include "heartbert/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "heartbert/checkpoint.hpp"
#include "heartbert/errors.hpp"
#include "linalg.hpp"
#include "model_detail.hpp"

namespace heartbert {

using detail::add_bias_rows;
using detail::accumulate_colsum;
using detail::gemm_nn;
using detail::gemm_nt;
using detail::gemm_tn;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Step index into the projected sequence for a given direction: forward reads
// the row order, backward reads each sequence reversed (clamped to row 0 once
// past its real length; those steps are masked out anyway).
size_t input_row(bool reverse, size_t b, size_t t, size_t seq, int len) {
    if (!reverse) return b * seq + t;
    long idx = static_cast<long>(len) - 1 - static_cast<long>(t);
    if (idx < 0) idx = 0;
    return b * seq + static_cast<size_t>(idx);
}

}  // namespace

template <typename T>
struct LstmStepCache {
    Tensor<T> h_prev, c_prev;  // [B, L]
    Tensor<T> gates;           // [B, 4L], activated, gate order i,f,g,o
    Tensor<T> tanh_c;          // [B, L]
};

template <typename T>
struct HybridCache {
    Tensor<T> proj;            // [N, H]
    std::vector<int> lengths;  // real tokens per sequence
    std::vector<LstmStepCache<T>> fwd_steps, bwd_steps;
    Tensor<T> readout;         // [B, 2L]
};

template <typename T>
HybridModel<T> HybridModel<T>::build(EncoderModel<T> encoder, int n_classes,
                                     const FreezePolicy& freeze, uint64_t seed, int lstm_hidden) {
    freeze.first_trainable_block(encoder.config.n_layers);  // validates the policy
    HybridModel<T> model(std::move(encoder));
    model.config = model.encoder.config;
    model.n_classes = n_classes;
    model.lstm_hidden = lstm_hidden;
    model.freeze = freeze;
    for (const auto& spec : head_tensor_specs(model.config, n_classes, lstm_hidden)) {
        auto& t = model.head.add(spec.name, spec.shape);
        detail::init_named_tensor(t, spec.name, seed, lstm_hidden);
    }
    return model;
}

template <typename T>
HybridModel<T> HybridModel<T>::from_parts(EncoderModel<T> encoder, ParamStore<T> head,
                                          int n_classes, const FreezePolicy& freeze,
                                          int lstm_hidden) {
    freeze.first_trainable_block(encoder.config.n_layers);
    auto specs = head_tensor_specs(encoder.config, n_classes, lstm_hidden);
    if (head.size() != specs.size()) {
        fail(ErrorKind::Format, "classifier head does not match the tensor registry");
    }
    for (const auto& spec : specs) {
        if (!head.has(spec.name)) fail(ErrorKind::Format, "classifier head missing tensor " + spec.name);
        if (head.get(spec.name).shape() != spec.shape) {
            fail(ErrorKind::Format, "classifier head tensor " + spec.name + " has the wrong shape");
        }
    }
    HybridModel<T> model(std::move(encoder));
    model.config = model.encoder.config;
    model.n_classes = n_classes;
    model.lstm_hidden = lstm_hidden;
    model.freeze = freeze;
    model.head = std::move(head);
    return model;
}

template <typename T>
HybridOutput<T> HybridModel<T>::forward(const BatchIds& batch, const ForwardOptions& opts) const {
    HybridOutput<T> out;
    out.encoder_out = encoder.forward(batch, opts);

    const size_t B = batch.batch;
    const size_t S = batch.seq;
    const size_t N = batch.rows();
    const size_t H = static_cast<size_t>(config.d_model);
    const size_t L = static_cast<size_t>(lstm_hidden);
    const size_t C = static_cast<size_t>(n_classes);

    auto cache = std::make_shared<HybridCache<T>>();
    cache->lengths.resize(B);
    for (size_t b = 0; b < B; ++b) {
        int len = 0;
        bool ended = false;
        for (size_t t = 0; t < S; ++t) {
            int m = batch.attention_mask[b * S + t];
            if (m == 1) {
                if (ended) fail(ErrorKind::Data, "classifier input must be left-aligned (mask 1s then 0s)");
                ++len;
            } else {
                ended = true;
            }
        }
        if (len == 0) fail(ErrorKind::Data, "classifier input has an empty sequence");
        cache->lengths[b] = len;
    }

    cache->proj = Tensor<T>({N, H});
    gemm_nn(out.encoder_out.hidden.data(), head.get("head.projection.weight").data(),
            cache->proj.data(), N, H, H);
    add_bias_rows(cache->proj.data(), head.get("head.projection.bias").data(), N, H);

    cache->readout = Tensor<T>({B, 2 * L});
    Tensor<T> x_t({B, H});
    for (int dir = 0; dir < 2; ++dir) {
        const bool reverse = dir == 1;
        const std::string base = reverse ? "head.lstm.backward." : "head.lstm.forward.";
        const auto& w_ih = head.get(base + "w_ih");
        const auto& w_hh = head.get(base + "w_hh");
        const auto& b_ih = head.get(base + "b_ih");
        const auto& b_hh = head.get(base + "b_hh");
        auto& steps = reverse ? cache->bwd_steps : cache->fwd_steps;
        steps.resize(S);

        Tensor<T> h({B, L}), c({B, L});
        for (size_t t = 0; t < S; ++t) {
            auto& step = steps[t];
            step.h_prev = h;
            step.c_prev = c;
            for (size_t b = 0; b < B; ++b) {
                const T* src = cache->proj.data() + input_row(reverse, b, t, S, cache->lengths[b]) * H;
                std::copy(src, src + H, x_t.data() + b * H);
            }
            step.gates = Tensor<T>({B, 4 * L});
            gemm_nt(x_t.data(), w_ih.data(), step.gates.data(), B, H, 4 * L);
            gemm_nt(h.data(), w_hh.data(), step.gates.data(), B, L, 4 * L, true);
            step.tanh_c = Tensor<T>({B, L});
            for (size_t b = 0; b < B; ++b) {
                T* g = step.gates.data() + b * 4 * L;
                const bool live = t < static_cast<size_t>(cache->lengths[b]);
                for (size_t j = 0; j < L; ++j) {
                    double gi = sigmoid(static_cast<double>(g[j]) + static_cast<double>(b_ih[j]) +
                                        static_cast<double>(b_hh[j]));
                    double gf = sigmoid(static_cast<double>(g[L + j]) + static_cast<double>(b_ih[L + j]) +
                                        static_cast<double>(b_hh[L + j]));
                    double gg = std::tanh(static_cast<double>(g[2 * L + j]) +
                                          static_cast<double>(b_ih[2 * L + j]) +
                                          static_cast<double>(b_hh[2 * L + j]));
                    double go = sigmoid(static_cast<double>(g[3 * L + j]) +
                                        static_cast<double>(b_ih[3 * L + j]) +
                                        static_cast<double>(b_hh[3 * L + j]));
                    g[j] = static_cast<T>(gi);
                    g[L + j] = static_cast<T>(gf);
                    g[2 * L + j] = static_cast<T>(gg);
                    g[3 * L + j] = static_cast<T>(go);
                    double c_new = gf * static_cast<double>(c.at(b, j)) + gi * gg;
                    double th = std::tanh(c_new);
                    step.tanh_c.at(b, j) = static_cast<T>(th);
                    if (live) {
                        c.at(b, j) = static_cast<T>(c_new);
                        h.at(b, j) = static_cast<T>(go * th);
                    }
                }
            }
        }
        for (size_t b = 0; b < B; ++b) {
            T* dst = cache->readout.data() + b * 2 * L + (reverse ? L : 0);
            std::copy(h.data() + b * L, h.data() + (b + 1) * L, dst);
        }
    }

    out.logits = Tensor<T>({B, C});
    gemm_nn(cache->readout.data(), head.get("head.classifier.weight").data(), out.logits.data(), B,
            2 * L, C);
    add_bias_rows(out.logits.data(), head.get("head.classifier.bias").data(), B, C);
    if (opts.want_cache) out.cache = std::move(cache);
    return out;
}

template <typename T>
ClassLossResult HybridModel<T>::loss_and_grads(const BatchIds& batch,
                                               const std::vector<int>& labels,
                                               const HybridOutput<T>& fwd,
                                               ParamStore<T>& encoder_grads,
                                               ParamStore<T>& head_grads) const {
    if (!fwd.cache) fail(ErrorKind::Parameter, "loss_and_grads: forward pass must keep its cache");
    const auto& cache = *fwd.cache;
    const size_t B = batch.batch;
    const size_t S = batch.seq;
    const size_t N = batch.rows();
    const size_t H = static_cast<size_t>(config.d_model);
    const size_t L = static_cast<size_t>(lstm_hidden);
    const size_t C = static_cast<size_t>(n_classes);
    if (labels.size() != B) fail(ErrorKind::Data, "loss_and_grads: labels size mismatch");
    for (int label : labels) {
        if (label < 0 || label >= n_classes) fail(ErrorKind::Data, "loss_and_grads: label out of range");
    }

    // Cross-entropy and dlogits = (softmax - onehot) / B.
    ClassLossResult result;
    Tensor<T> dlogits({B, C});
    const double inv_b = 1.0 / static_cast<double>(B);
    double loss = 0.0;
    for (size_t b = 0; b < B; ++b) {
        const T* row = fwd.logits.data() + b * C;
        double mx = static_cast<double>(row[0]);
        size_t arg = 0;
        for (size_t j = 1; j < C; ++j) {
            if (static_cast<double>(row[j]) > mx) {
                mx = static_cast<double>(row[j]);
                arg = j;
            }
        }
        if (arg == static_cast<size_t>(labels[b])) result.correct += 1;
        double denom = 0.0;
        for (size_t j = 0; j < C; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        double lse = mx + std::log(denom);
        loss += lse - static_cast<double>(row[static_cast<size_t>(labels[b])]);
        T* drow = dlogits.data() + b * C;
        for (size_t j = 0; j < C; ++j) {
            drow[j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse) * inv_b);
        }
        drow[static_cast<size_t>(labels[b])] -= static_cast<T>(inv_b);
    }
    result.loss = loss * inv_b;

    // Classifier backward.
    gemm_tn(cache.readout.data(), dlogits.data(), head_grads.get("head.classifier.weight").data(),
            B, 2 * L, C, true);
    accumulate_colsum(dlogits.data(), head_grads.get("head.classifier.bias").data(), B, C);
    Tensor<T> dreadout({B, 2 * L});
    gemm_nt(dlogits.data(), head.get("head.classifier.weight").data(), dreadout.data(), B, C, 2 * L);

    // LSTM backward, each direction from its final hidden state.
    Tensor<T> dproj({N, H});
    Tensor<T> x_t({B, H});
    Tensor<T> da({B, 4 * L});
    for (int dir = 0; dir < 2; ++dir) {
        const bool reverse = dir == 1;
        const std::string base = reverse ? "head.lstm.backward." : "head.lstm.forward.";
        const auto& w_ih = head.get(base + "w_ih");
        const auto& w_hh = head.get(base + "w_hh");
        const auto& steps = reverse ? cache.bwd_steps : cache.fwd_steps;

        Tensor<T> dH({B, L}), dC({B, L});
        for (size_t b = 0; b < B; ++b) {
            const T* src = dreadout.data() + b * 2 * L + (reverse ? L : 0);
            std::copy(src, src + L, dH.data() + b * L);
        }
        for (size_t t = S; t-- > 0;) {
            const auto& step = steps[t];
            for (size_t b = 0; b < B; ++b) {
                const bool live = t < static_cast<size_t>(cache.lengths[b]);
                const T* g = step.gates.data() + b * 4 * L;
                T* dab = da.data() + b * 4 * L;
                for (size_t j = 0; j < L; ++j) {
                    if (!live) {
                        dab[j] = dab[L + j] = dab[2 * L + j] = dab[3 * L + j] = T(0);
                        continue;  // h and c pass through; dH/dC carry back unchanged
                    }
                    double gi = g[j], gf = g[L + j], gg = g[2 * L + j], go = g[3 * L + j];
                    double th = step.tanh_c.at(b, j);
                    double dh = dH.at(b, j);
                    double dcn = static_cast<double>(dC.at(b, j)) + dh * go * (1.0 - th * th);
                    double do_ = dh * th;
                    double di = dcn * gg;
                    double df = dcn * static_cast<double>(step.c_prev.at(b, j));
                    double dg = dcn * gi;
                    dab[j] = static_cast<T>(di * gi * (1.0 - gi));
                    dab[L + j] = static_cast<T>(df * gf * (1.0 - gf));
                    dab[2 * L + j] = static_cast<T>(dg * (1.0 - gg * gg));
                    dab[3 * L + j] = static_cast<T>(do_ * go * (1.0 - go));
                    dC.at(b, j) = static_cast<T>(dcn * gf);
                    dH.at(b, j) = T(0);  // replaced below by the recurrent path
                }
            }
            for (size_t b = 0; b < B; ++b) {
                const T* src = cache.proj.data() + input_row(reverse, b, t, S, cache.lengths[b]) * H;
                std::copy(src, src + H, x_t.data() + b * H);
            }
            gemm_tn(da.data(), x_t.data(), head_grads.get(base + "w_ih").data(), B, 4 * L, H, true);
            gemm_tn(da.data(), step.h_prev.data(), head_grads.get(base + "w_hh").data(), B, 4 * L, L, true);
            accumulate_colsum(da.data(), head_grads.get(base + "b_ih").data(), B, 4 * L);
            accumulate_colsum(da.data(), head_grads.get(base + "b_hh").data(), B, 4 * L);

            Tensor<T> dx({B, H});
            gemm_nn(da.data(), w_ih.data(), dx.data(), B, 4 * L, H);
            for (size_t b = 0; b < B; ++b) {
                T* dst = dproj.data() + input_row(reverse, b, t, S, cache.lengths[b]) * H;
                const T* src = dx.data() + b * H;
                for (size_t j = 0; j < H; ++j) dst[j] += src[j];
            }
            gemm_nn(da.data(), w_hh.data(), dH.data(), B, 4 * L, L, true);
        }
    }

    // Projection backward, then into the encoder when any block trains.
    gemm_tn(fwd.encoder_out.hidden.data(), dproj.data(),
            head_grads.get("head.projection.weight").data(), N, H, H, true);
    accumulate_colsum(dproj.data(), head_grads.get("head.projection.bias").data(), N, H);
    const int first = first_trainable_block();
    if (first < config.n_layers) {
        Tensor<T> dhidden({N, H});
        gemm_nt(dproj.data(), head.get("head.projection.weight").data(), dhidden.data(), N, H, H);
        encoder.backward_from_hidden(batch, fwd.encoder_out, dhidden, encoder_grads, first,
                                     /*train_embeddings=*/false);
    }
    return result;
}

template <typename T>
std::vector<int> HybridModel<T>::predict(const BatchIds& batch) const {
    auto out = forward(batch);
    const size_t C = static_cast<size_t>(n_classes);
    std::vector<int> preds(batch.batch);
    for (size_t b = 0; b < batch.batch; ++b) {
        const T* row = out.logits.data() + b * C;
        size_t arg = 0;
        for (size_t j = 1; j < C; ++j) {
            if (static_cast<double>(row[j]) > static_cast<double>(row[arg])) arg = j;
        }
        preds[b] = static_cast<int>(arg);
    }
    return preds;
}

template <typename T>
long long HybridModel<T>::trainable_parameters() const {
    return count_trainable(config, freeze, n_classes, lstm_hidden);
}

template <typename T>
long long HybridModel<T>::total_parameters() const {
    return encoder.params.total_parameters() + head.total_parameters();
}

void save_hybrid_checkpoint(const HybridModel<float>& model, const std::string& path,
                            const std::map<std::string, std::string>& extra_meta) {
    Checkpoint ckpt;
    for (size_t i = 0; i < model.encoder.params.size(); ++i) {
        ckpt.tensors.emplace_back(model.encoder.params.names()[i], model.encoder.params.value(i));
    }
    for (size_t i = 0; i < model.head.size(); ++i) {
        ckpt.tensors.emplace_back(model.head.names()[i], model.head.value(i));
    }
    for (const auto& [key, value] : model.config.to_kv()) ckpt.meta["model." + key] = value;
    ckpt.meta["head.n_classes"] = std::to_string(model.n_classes);
    ckpt.meta["head.lstm_hidden"] = std::to_string(model.lstm_hidden);
    ckpt.meta["head.freeze"] = model.freeze.name();
    for (const auto& [key, value] : extra_meta) ckpt.meta[key] = value;
    save_checkpoint(ckpt, path);
}

HybridModel<float> load_hybrid_checkpoint(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    auto meta_int = [&](const std::string& key) {
        auto it = ckpt.meta.find(key);
        if (it == ckpt.meta.end()) fail(ErrorKind::Format, path + ": sidecar missing " + key);
        try {
            return std::stoi(it->second);
        } catch (const std::exception&) {
            fail(ErrorKind::Format, path + ": bad integer for " + key);
        }
    };
    auto freeze_it = ckpt.meta.find("head.freeze");
    if (freeze_it == ckpt.meta.end()) fail(ErrorKind::Format, path + ": sidecar missing head.freeze");

    EncoderModel<float> encoder = encoder_from_checkpoint(ckpt);
    ParamStore<float> head;
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (name.rfind("head.", 0) == 0) head.add(name, tensor.shape()) = tensor;
    }
    return HybridModel<float>::from_parts(std::move(encoder), std::move(head),
                                          meta_int("head.n_classes"),
                                          FreezePolicy::parse(freeze_it->second),
                                          meta_int("head.lstm_hidden"));
}

template class HybridModel<float>;
template class HybridModel<double>;

}  // namespace heartbert
