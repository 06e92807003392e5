#include "heartbert/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

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

// Scores at padded key positions get this additive penalty; exp() underflows
// to exactly zero after row-max subtraction, so padding cannot leak.
constexpr double kMaskedScore = -1e9;

constexpr int kIgnoreLabel = -100;

template <typename T>
using StridedMap = Eigen::Map<detail::RowMajorMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using StridedConstMap = Eigen::Map<const detail::RowMajorMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MatMap = detail::MatMap<T>;
template <typename T>
using ConstMatMap = detail::ConstMatMap<T>;

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int kv_int(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorKind::Config, "model config: missing key '" + key + "'");
    try {
        size_t pos = 0;
        int v = std::stoi(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        fail(ErrorKind::Config, "model config: bad integer for '" + key + "'");
    }
}

double kv_double(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorKind::Config, "model config: missing key '" + key + "'");
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        fail(ErrorKind::Config, "model config: bad number for '" + key + "'");
    }
}

bool kv_bool(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorKind::Config, "model config: missing key '" + key + "'");
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    fail(ErrorKind::Config, "model config: bad boolean for '" + key + "'");
}

int layer_index_of(const std::string& name) {
    constexpr const char* prefix = "encoder.layer.";
    if (name.rfind(prefix, 0) != 0) return -1;
    size_t start = std::string(prefix).size();
    size_t dot = name.find('.', start);
    return std::stoi(name.substr(start, dot - start));
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1) fail(ErrorKind::Config, "model.n_layers must be >= 1");
    if (n_heads < 1) fail(ErrorKind::Config, "model.n_heads must be >= 1");
    if (d_model < 1 || d_model % n_heads != 0) {
        fail(ErrorKind::Config, "model.d_model must be a positive multiple of model.n_heads");
    }
    if (d_ff < 1) fail(ErrorKind::Config, "model.d_ff must be >= 1");
    if (vocab_size < 6) fail(ErrorKind::Config, "model.vocab_size must cover specials plus an alphabet");
    if (max_positions < 3) fail(ErrorKind::Config, "model.max_positions must be >= 3");
    if (n_token_types < 1) fail(ErrorKind::Config, "model.n_token_types must be >= 1");
    if (mask_prob < 0.0 || mask_prob > 1.0) fail(ErrorKind::Config, "model.mask_prob must be in [0,1]");
    if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::Config, "model.dropout must be in [0,1)");
    if (!tie_lm_head) fail(ErrorKind::Config, "model.tie_lm_head must be true (untied head unsupported)");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    return {
        {"n_layers", std::to_string(n_layers)},
        {"n_heads", std::to_string(n_heads)},
        {"d_model", std::to_string(d_model)},
        {"d_ff", std::to_string(d_ff)},
        {"vocab_size", std::to_string(vocab_size)},
        {"max_positions", std::to_string(max_positions)},
        {"n_token_types", std::to_string(n_token_types)},
        {"mask_prob", fmt_double(mask_prob)},
        {"dropout", fmt_double(dropout)},
        {"tie_lm_head", tie_lm_head ? "true" : "false"},
    };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    c.n_layers = kv_int(kv, "n_layers");
    c.n_heads = kv_int(kv, "n_heads");
    c.d_model = kv_int(kv, "d_model");
    c.d_ff = kv_int(kv, "d_ff");
    c.vocab_size = kv_int(kv, "vocab_size");
    c.max_positions = kv_int(kv, "max_positions");
    c.n_token_types = kv_int(kv, "n_token_types");
    c.mask_prob = kv_double(kv, "mask_prob");
    c.dropout = kv_double(kv, "dropout");
    c.tie_lm_head = kv_bool(kv, "tie_lm_head");
    c.validate();
    return c;
}

FreezePolicy FreezePolicy::parse(const std::string& text) {
    if (text == "all-frozen") return all_frozen();
    if (text == "all-unfrozen") return all_unfrozen();
    if (text == "half-frozen") return half();
    if (text.rfind("last-", 0) == 0) {
        try {
            size_t pos = 0;
            int n = std::stoi(text.substr(5), &pos);
            if (pos == text.size() - 5 && n >= 1) return last_n(n);
        } catch (const std::exception&) {
        }
    }
    fail(ErrorKind::Config,
         "unknown freeze policy '" + text + "' (expected all-frozen, last-<n>, half-frozen, all-unfrozen)");
}

std::string FreezePolicy::name() const {
    switch (kind) {
        case Kind::AllFrozen: return "all-frozen";
        case Kind::LastN: return "last-" + std::to_string(n);
        case Kind::Half: return "half-frozen";
        case Kind::AllUnfrozen: return "all-unfrozen";
    }
    return "?";
}

int FreezePolicy::first_trainable_block(int n_layers) const {
    switch (kind) {
        case Kind::AllFrozen:
            return n_layers;
        case Kind::LastN:
            if (n < 1 || n > n_layers) {
                fail(ErrorKind::Config, "freeze policy last-" + std::to_string(n) +
                                            " out of range for " + std::to_string(n_layers) + " layers");
            }
            return n_layers - n;
        case Kind::Half:
            return n_layers - n_layers / 2;
        case Kind::AllUnfrozen:
            return 0;
    }
    return n_layers;
}

std::vector<TensorSpec> encoder_tensor_specs(const ModelConfig& config) {
    const auto V = static_cast<size_t>(config.vocab_size);
    const auto P = static_cast<size_t>(config.max_positions);
    const auto Ty = static_cast<size_t>(config.n_token_types);
    const auto H = static_cast<size_t>(config.d_model);
    const auto F = static_cast<size_t>(config.d_ff);

    std::vector<TensorSpec> specs;
    specs.push_back({"embeddings.word", {V, H}});
    specs.push_back({"embeddings.position", {P, H}});
    specs.push_back({"embeddings.token_type", {Ty, H}});
    specs.push_back({"embeddings.layer_norm.gamma", {H}});
    specs.push_back({"embeddings.layer_norm.beta", {H}});
    for (int i = 0; i < config.n_layers; ++i) {
        std::string base = "encoder.layer." + std::to_string(i) + ".";
        for (const char* proj : {"query", "key", "value", "output"}) {
            specs.push_back({base + "attention." + proj + ".weight", {H, H}});
            specs.push_back({base + "attention." + proj + ".bias", {H}});
        }
        specs.push_back({base + "attention.layer_norm.gamma", {H}});
        specs.push_back({base + "attention.layer_norm.beta", {H}});
        specs.push_back({base + "ffn.intermediate.weight", {H, F}});
        specs.push_back({base + "ffn.intermediate.bias", {F}});
        specs.push_back({base + "ffn.output.weight", {F, H}});
        specs.push_back({base + "ffn.output.bias", {H}});
        specs.push_back({base + "ffn.layer_norm.gamma", {H}});
        specs.push_back({base + "ffn.layer_norm.beta", {H}});
    }
    // The decoder projection is tied to embeddings.word; only its bias is a
    // separate tensor.
    specs.push_back({"mlm.transform.weight", {H, H}});
    specs.push_back({"mlm.transform.bias", {H}});
    specs.push_back({"mlm.layer_norm.gamma", {H}});
    specs.push_back({"mlm.layer_norm.beta", {H}});
    specs.push_back({"mlm.decoder.bias", {V}});
    return specs;
}

std::vector<TensorSpec> head_tensor_specs(const ModelConfig& config, int n_classes,
                                          int lstm_hidden) {
    if (n_classes < 2) fail(ErrorKind::Config, "classifier head needs n_classes >= 2");
    if (lstm_hidden < 1) fail(ErrorKind::Config, "classifier head needs lstm_hidden >= 1");
    const auto H = static_cast<size_t>(config.d_model);
    const auto L = static_cast<size_t>(lstm_hidden);
    const auto C = static_cast<size_t>(n_classes);

    std::vector<TensorSpec> specs;
    specs.push_back({"head.projection.weight", {H, H}});
    specs.push_back({"head.projection.bias", {H}});
    for (const char* dir : {"forward", "backward"}) {
        std::string base = std::string("head.lstm.") + dir + ".";
        specs.push_back({base + "w_ih", {4 * L, H}});
        specs.push_back({base + "w_hh", {4 * L, L}});
        specs.push_back({base + "b_ih", {4 * L}});
        specs.push_back({base + "b_hh", {4 * L}});
    }
    specs.push_back({"head.classifier.weight", {2 * L, C}});
    specs.push_back({"head.classifier.bias", {C}});
    return specs;
}

long long total_parameters(const std::vector<TensorSpec>& specs) {
    long long total = 0;
    for (const auto& s : specs) total += static_cast<long long>(s.numel());
    return total;
}

long long count_trainable(const ModelConfig& config, const FreezePolicy& freeze, int n_classes,
                          int lstm_hidden) {
    config.validate();
    const int first = freeze.first_trainable_block(config.n_layers);
    long long total = 0;
    for (const auto& spec : encoder_tensor_specs(config)) {
        int layer = layer_index_of(spec.name);
        if (layer >= 0 && layer >= first) total += static_cast<long long>(spec.numel());
    }
    return total + total_parameters(head_tensor_specs(config, n_classes, lstm_hidden));
}

template <typename T>
ParamStore<T> make_store(const std::vector<TensorSpec>& specs) {
    ParamStore<T> store;
    for (const auto& spec : specs) store.add(spec.name, spec.shape);
    return store;
}

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, std::vector<size_t> shape) {
    if (index_.count(name)) fail(ErrorKind::Parameter, "duplicate tensor name: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    values_.emplace_back(std::move(shape));
    return values_.back();
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Parameter, "unknown tensor name: " + name);
    return values_[it->second];
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::Parameter, "unknown tensor name: " + name);
    return values_[it->second];
}

template <typename T>
long long ParamStore<T>::total_parameters() const {
    long long total = 0;
    for (const auto& v : values_) total += static_cast<long long>(v.numel());
    return total;
}

template <typename T>
void ParamStore<T>::zero_all() {
    for (auto& v : values_) v.fill(T(0));
}

// ---------------------------------------------------------------------------
// Forward/backward caches

template <typename T>
struct LayerCache {
    Tensor<T> x;              // layer input [N, H]
    Tensor<T> q, k, v;        // projections [N, H]
    Tensor<T> probs;          // softmax [B*nh*S, S], pre-dropout
    Tensor<T> probs_used;     // post-dropout probs that produced `context`
    Tensor<uint8_t> attn_drop;
    Tensor<T> context;        // heads re-concatenated [N, H]
    Tensor<uint8_t> out_drop;
    Tensor<T> s1;             // x + attention output [N, H]
    Tensor<T> ln1_mean, ln1_rstd;
    Tensor<T> a;              // post first layer-norm [N, H]
    Tensor<T> z;              // FFN pre-activation [N, F]
    Tensor<T> g;              // FFN post-GELU [N, F]
    Tensor<uint8_t> ffn_drop;
    Tensor<T> s2;             // a + FFN output [N, H]
    Tensor<T> ln2_mean, ln2_rstd;
};

template <typename T>
struct ForwardCache {
    std::vector<int> position_ids;
    Tensor<T> emb_sum;  // word + position + token-type, pre layer-norm
    Tensor<T> emb_mean, emb_rstd;
    Tensor<uint8_t> emb_drop;
    std::vector<LayerCache<T>> layers;
    bool dropout_active = false;
    double dropout_p = 0.0;
};

namespace {

void validate_batch(const BatchIds& batch, const ModelConfig& config) {
    if (batch.batch == 0 || batch.seq == 0) fail(ErrorKind::Data, "forward: empty batch");
    if (batch.seq > static_cast<size_t>(config.max_seq_len())) {
        fail(ErrorKind::Data, "forward: sequence length exceeds the maximum");
    }
    if (batch.ids.size() != batch.rows() || batch.attention_mask.size() != batch.rows()) {
        fail(ErrorKind::Data, "forward: ids/mask sizes disagree with batch x seq");
    }
    for (size_t i = 0; i < batch.ids.size(); ++i) {
        if (batch.ids[i] < 0 || batch.ids[i] >= config.vocab_size) {
            fail(ErrorKind::Data, "forward: token id out of range");
        }
        if (batch.attention_mask[i] != 0 && batch.attention_mask[i] != 1) {
            fail(ErrorKind::Data, "forward: attention mask must be 0/1");
        }
    }
}

// Real tokens take positions 2, 3, ... in row order; padding uses the
// reserved position 1 (row 0 of the table stays unused, as in the 514-row
// convention).
std::vector<int> compute_position_ids(const BatchIds& batch, const ModelConfig& config) {
    std::vector<int> pos(batch.rows(), 1);
    for (size_t b = 0; b < batch.batch; ++b) {
        int running = 0;
        for (size_t t = 0; t < batch.seq; ++t) {
            size_t r = b * batch.seq + t;
            if (batch.attention_mask[r] == 1) {
                running += 1;
                pos[r] = 1 + running;
            }
        }
        if (1 + running >= config.max_positions) {
            fail(ErrorKind::Data, "forward: sequence exhausts the position table");
        }
    }
    return pos;
}

}  // namespace

template <typename T>
EncoderModel<T> EncoderModel<T>::build(const ModelConfig& config, uint64_t seed) {
    config.validate();
    EncoderModel<T> model;
    model.config = config;
    for (const auto& spec : encoder_tensor_specs(config)) {
        auto& t = model.params.add(spec.name, spec.shape);
        detail::init_named_tensor(t, spec.name, seed, /*lstm_hidden=*/128);
    }
    return model;
}

template <typename T>
EncoderModel<T> EncoderModel<T>::from_params(const ModelConfig& config, ParamStore<T> params) {
    config.validate();
    auto specs = encoder_tensor_specs(config);
    if (params.size() != specs.size()) {
        fail(ErrorKind::Format, "checkpoint does not match the encoder tensor registry");
    }
    for (const auto& spec : specs) {
        if (!params.has(spec.name)) fail(ErrorKind::Format, "checkpoint missing tensor " + spec.name);
        if (params.get(spec.name).shape() != spec.shape) {
            fail(ErrorKind::Format, "checkpoint tensor " + spec.name + " has the wrong shape");
        }
    }
    EncoderModel<T> model;
    model.config = config;
    model.params = std::move(params);
    return model;
}

template <typename T>
ForwardOutput<T> EncoderModel<T>::forward(const BatchIds& batch, const ForwardOptions& opts) const {
    validate_batch(batch, config);
    const size_t N = batch.rows();
    const size_t B = batch.batch;
    const size_t S = batch.seq;
    const size_t H = static_cast<size_t>(config.d_model);
    const size_t F = static_cast<size_t>(config.d_ff);
    const size_t nh = static_cast<size_t>(config.n_heads);
    const size_t dh = H / nh;

    const bool drop = opts.training && config.dropout > 0.0;
    if (drop && opts.dropout_rng == nullptr) {
        fail(ErrorKind::Parameter, "forward: training with dropout requires an RNG");
    }
    auto cache = std::make_shared<ForwardCache<T>>();
    cache->dropout_active = drop;
    cache->dropout_p = config.dropout;
    cache->position_ids = compute_position_ids(batch, config);

    const auto& word = params.get("embeddings.word");
    const auto& position = params.get("embeddings.position");
    const auto& token_type = params.get("embeddings.token_type");

    Tensor<T> x({N, H});
    for (size_t r = 0; r < N; ++r) {
        const T* we = word.data() + static_cast<size_t>(batch.ids[r]) * H;
        const T* pe = position.data() + static_cast<size_t>(cache->position_ids[r]) * H;
        const T* te = token_type.data();
        T* xr = x.data() + r * H;
        for (size_t j = 0; j < H; ++j) xr[j] = we[j] + pe[j] + te[j];
    }
    cache->emb_sum = x;
    cache->emb_mean = Tensor<T>({N});
    cache->emb_rstd = Tensor<T>({N});
    detail::layer_norm_forward(cache->emb_sum.data(), params.get("embeddings.layer_norm.gamma").data(),
                               params.get("embeddings.layer_norm.beta").data(), x.data(),
                               cache->emb_mean.data(), cache->emb_rstd.data(), N, H);
    if (drop) detail::dropout_forward(x.data(), N * H, config.dropout, *opts.dropout_rng, cache->emb_drop);

    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    cache->layers.resize(static_cast<size_t>(config.n_layers));

    for (int layer = 0; layer < config.n_layers; ++layer) {
        auto& lc = cache->layers[static_cast<size_t>(layer)];
        const std::string base = "encoder.layer." + std::to_string(layer) + ".";
        lc.x = std::move(x);

        lc.q = Tensor<T>({N, H});
        lc.k = Tensor<T>({N, H});
        lc.v = Tensor<T>({N, H});
        gemm_nn(lc.x.data(), params.get(base + "attention.query.weight").data(), lc.q.data(), N, H, H);
        add_bias_rows(lc.q.data(), params.get(base + "attention.query.bias").data(), N, H);
        gemm_nn(lc.x.data(), params.get(base + "attention.key.weight").data(), lc.k.data(), N, H, H);
        add_bias_rows(lc.k.data(), params.get(base + "attention.key.bias").data(), N, H);
        gemm_nn(lc.x.data(), params.get(base + "attention.value.weight").data(), lc.v.data(), N, H, H);
        add_bias_rows(lc.v.data(), params.get(base + "attention.value.bias").data(), N, H);

        lc.probs = Tensor<T>({B * nh * S, S});
        for (size_t b = 0; b < B; ++b) {
            for (size_t h = 0; h < nh; ++h) {
                StridedConstMap<T> Q(lc.q.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                     static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                StridedConstMap<T> K(lc.k.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                     static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                MatMap<T> Sc(lc.probs.data() + (b * nh + h) * S * S, static_cast<Eigen::Index>(S),
                             static_cast<Eigen::Index>(S));
                Sc.noalias() = Q * K.transpose() * scale;
                // Additive key mask, then a numerically safe softmax per row.
                for (size_t i = 0; i < S; ++i) {
                    T* row = lc.probs.data() + ((b * nh + h) * S + i) * S;
                    for (size_t j = 0; j < S; ++j) {
                        if (batch.attention_mask[b * S + j] == 0) row[j] += static_cast<T>(kMaskedScore);
                    }
                    T mx = row[0];
                    for (size_t j = 1; j < S; ++j) mx = std::max(mx, row[j]);
                    double denom = 0.0;
                    for (size_t j = 0; j < S; ++j) {
                        double e = std::exp(static_cast<double>(row[j] - mx));
                        row[j] = static_cast<T>(e);
                        denom += e;
                    }
                    for (size_t j = 0; j < S; ++j) row[j] = static_cast<T>(static_cast<double>(row[j]) / denom);
                }
            }
        }

        const Tensor<T>* probs_for_context = &lc.probs;
        if (drop) {
            lc.probs_used = lc.probs;
            detail::dropout_forward(lc.probs_used.data(), lc.probs_used.numel(), config.dropout,
                                    *opts.dropout_rng, lc.attn_drop);
            probs_for_context = &lc.probs_used;
        }

        lc.context = Tensor<T>({N, H});
        for (size_t b = 0; b < B; ++b) {
            for (size_t h = 0; h < nh; ++h) {
                ConstMatMap<T> P(probs_for_context->data() + (b * nh + h) * S * S,
                                 static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
                StridedConstMap<T> V(lc.v.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                     static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                StridedMap<T> C(lc.context.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                C.noalias() = P * V;
            }
        }

        Tensor<T> attn_out({N, H});
        gemm_nn(lc.context.data(), params.get(base + "attention.output.weight").data(), attn_out.data(), N, H, H);
        add_bias_rows(attn_out.data(), params.get(base + "attention.output.bias").data(), N, H);
        if (drop) detail::dropout_forward(attn_out.data(), N * H, config.dropout, *opts.dropout_rng, lc.out_drop);

        lc.s1 = Tensor<T>({N, H});
        for (size_t i = 0; i < N * H; ++i) lc.s1[i] = lc.x[i] + attn_out[i];
        lc.ln1_mean = Tensor<T>({N});
        lc.ln1_rstd = Tensor<T>({N});
        lc.a = Tensor<T>({N, H});
        detail::layer_norm_forward(lc.s1.data(), params.get(base + "attention.layer_norm.gamma").data(),
                                   params.get(base + "attention.layer_norm.beta").data(), lc.a.data(),
                                   lc.ln1_mean.data(), lc.ln1_rstd.data(), N, H);

        lc.z = Tensor<T>({N, F});
        gemm_nn(lc.a.data(), params.get(base + "ffn.intermediate.weight").data(), lc.z.data(), N, H, F);
        add_bias_rows(lc.z.data(), params.get(base + "ffn.intermediate.bias").data(), N, F);
        lc.g = Tensor<T>({N, F});
        for (size_t i = 0; i < N * F; ++i) lc.g[i] = detail::gelu(lc.z[i]);

        Tensor<T> ffn_out({N, H});
        gemm_nn(lc.g.data(), params.get(base + "ffn.output.weight").data(), ffn_out.data(), N, F, H);
        add_bias_rows(ffn_out.data(), params.get(base + "ffn.output.bias").data(), N, H);
        if (drop) detail::dropout_forward(ffn_out.data(), N * H, config.dropout, *opts.dropout_rng, lc.ffn_drop);

        lc.s2 = Tensor<T>({N, H});
        for (size_t i = 0; i < N * H; ++i) lc.s2[i] = lc.a[i] + ffn_out[i];
        lc.ln2_mean = Tensor<T>({N});
        lc.ln2_rstd = Tensor<T>({N});
        x = Tensor<T>({N, H});
        detail::layer_norm_forward(lc.s2.data(), params.get(base + "ffn.layer_norm.gamma").data(),
                                   params.get(base + "ffn.layer_norm.beta").data(), x.data(),
                                   lc.ln2_mean.data(), lc.ln2_rstd.data(), N, H);
    }

    ForwardOutput<T> out;
    out.hidden = std::move(x);
    if (opts.want_cache) out.cache = std::move(cache);
    return out;
}

template <typename T>
const Tensor<T>& EncoderModel<T>::attention_probs(const ForwardOutput<T>& fwd, int layer) {
    if (!fwd.cache) fail(ErrorKind::Parameter, "attention_probs: forward pass must keep its cache");
    if (layer < 0 || static_cast<size_t>(layer) >= fwd.cache->layers.size()) {
        fail(ErrorKind::Parameter, "attention_probs: layer index out of range");
    }
    return fwd.cache->layers[static_cast<size_t>(layer)].probs;
}

template <typename T>
Tensor<T> EncoderModel<T>::mlm_logits(const Tensor<T>& hidden, bool skip_transform) const {
    const size_t N = hidden.dim(0);
    const size_t H = static_cast<size_t>(config.d_model);
    const size_t V = static_cast<size_t>(config.vocab_size);

    Tensor<T> t2;
    if (skip_transform) {
        t2 = hidden;
    } else {
        Tensor<T> t0({N, H});
        gemm_nn(hidden.data(), params.get("mlm.transform.weight").data(), t0.data(), N, H, H);
        add_bias_rows(t0.data(), params.get("mlm.transform.bias").data(), N, H);
        for (size_t i = 0; i < N * H; ++i) t0[i] = detail::gelu(t0[i]);
        t2 = Tensor<T>({N, H});
        Tensor<T> mean({N}), rstd({N});
        detail::layer_norm_forward(t0.data(), params.get("mlm.layer_norm.gamma").data(),
                                   params.get("mlm.layer_norm.beta").data(), t2.data(), mean.data(),
                                   rstd.data(), N, H);
    }
    Tensor<T> logits({N, V});
    gemm_nt(t2.data(), params.get("embeddings.word").data(), logits.data(), N, H, V);
    add_bias_rows(logits.data(), params.get("mlm.decoder.bias").data(), N, V);
    return logits;
}

template <typename T>
MlmLossResult<T> EncoderModel<T>::mlm_loss_and_grads(const BatchIds& batch,
                                                     const std::vector<int>& labels,
                                                     const ForwardOutput<T>& fwd,
                                                     ParamStore<T>& grads, int first_trainable_block,
                                                     bool train_embeddings) const {
    if (!fwd.cache) fail(ErrorKind::Parameter, "mlm_loss_and_grads: forward pass must keep its cache");
    if (labels.size() != batch.rows()) fail(ErrorKind::Data, "mlm_loss_and_grads: labels size mismatch");
    const size_t H = static_cast<size_t>(config.d_model);
    const size_t V = static_cast<size_t>(config.vocab_size);

    std::vector<size_t> rows;
    for (size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] == kIgnoreLabel) continue;
        if (labels[r] < 0 || labels[r] >= config.vocab_size) {
            fail(ErrorKind::Data, "mlm_loss_and_grads: label id out of range");
        }
        rows.push_back(r);
    }
    MlmLossResult<T> result;
    result.masked_positions = static_cast<long long>(rows.size());
    if (rows.empty()) {
        result.no_masked_positions = true;
        return result;
    }
    const size_t M = rows.size();

    Tensor<T> hrows({M, H});
    for (size_t m = 0; m < M; ++m) {
        const T* src = fwd.hidden.data() + rows[m] * H;
        std::copy(src, src + H, hrows.data() + m * H);
    }

    // MLM head forward on the gathered rows.
    Tensor<T> t0({M, H});
    gemm_nn(hrows.data(), params.get("mlm.transform.weight").data(), t0.data(), M, H, H);
    add_bias_rows(t0.data(), params.get("mlm.transform.bias").data(), M, H);
    Tensor<T> t1({M, H});
    for (size_t i = 0; i < M * H; ++i) t1[i] = detail::gelu(t0[i]);
    Tensor<T> t2({M, H});
    Tensor<T> mean({M}), rstd({M});
    detail::layer_norm_forward(t1.data(), params.get("mlm.layer_norm.gamma").data(),
                               params.get("mlm.layer_norm.beta").data(), t2.data(), mean.data(),
                               rstd.data(), M, H);
    Tensor<T> logits({M, V});
    gemm_nt(t2.data(), params.get("embeddings.word").data(), logits.data(), M, H, V);
    add_bias_rows(logits.data(), params.get("mlm.decoder.bias").data(), M, V);

    // Cross-entropy and dlogits = (softmax - onehot) / M.
    double loss = 0.0;
    Tensor<T> dlogits({M, V});
    const double inv_m = 1.0 / static_cast<double>(M);
    for (size_t m = 0; m < M; ++m) {
        T* row = logits.data() + m * V;
        int label = labels[rows[m]];
        double mx = static_cast<double>(row[0]);
        size_t arg = 0;
        for (size_t j = 1; j < V; ++j) {
            if (static_cast<double>(row[j]) > mx) {
                mx = static_cast<double>(row[j]);
                arg = j;
            }
        }
        if (arg == static_cast<size_t>(label)) result.correct_predictions += 1;
        double denom = 0.0;
        for (size_t j = 0; j < V; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        double lse = mx + std::log(denom);
        loss += lse - static_cast<double>(row[static_cast<size_t>(label)]);
        T* drow = dlogits.data() + m * V;
        for (size_t j = 0; j < V; ++j) {
            double p = std::exp(static_cast<double>(row[j]) - lse);
            drow[j] = static_cast<T>(p * inv_m);
        }
        drow[static_cast<size_t>(label)] -= static_cast<T>(inv_m);
    }
    result.loss = loss * inv_m;

    // Head backward. The decoder weight is the word-embedding table, so its
    // gradient lands on embeddings.word (when embeddings train at all).
    accumulate_colsum(dlogits.data(), grads.get("mlm.decoder.bias").data(), M, V);
    if (train_embeddings) {
        gemm_tn(dlogits.data(), t2.data(), grads.get("embeddings.word").data(), M, V, H, true);
    }
    Tensor<T> dt2({M, H});
    gemm_nn(dlogits.data(), params.get("embeddings.word").data(), dt2.data(), M, V, H);

    Tensor<T> dt1({M, H});
    detail::layer_norm_backward(t1.data(), params.get("mlm.layer_norm.gamma").data(), mean.data(),
                                rstd.data(), dt2.data(), dt1.data(),
                                grads.get("mlm.layer_norm.gamma").data(),
                                grads.get("mlm.layer_norm.beta").data(), M, H);
    for (size_t i = 0; i < M * H; ++i) dt1[i] *= detail::gelu_grad(t0[i]);
    gemm_tn(hrows.data(), dt1.data(), grads.get("mlm.transform.weight").data(), M, H, H, true);
    accumulate_colsum(dt1.data(), grads.get("mlm.transform.bias").data(), M, H);

    Tensor<T> d_hidden({batch.rows(), H});
    Tensor<T> dhrows({M, H});
    gemm_nt(dt1.data(), params.get("mlm.transform.weight").data(), dhrows.data(), M, H, H);
    for (size_t m = 0; m < M; ++m) {
        T* dst = d_hidden.data() + rows[m] * H;
        const T* src = dhrows.data() + m * H;
        for (size_t j = 0; j < H; ++j) dst[j] += src[j];
    }

    backward_from_hidden(batch, fwd, d_hidden, grads, first_trainable_block, train_embeddings);
    return result;
}

template <typename T>
void EncoderModel<T>::backward_from_hidden(const BatchIds& batch, const ForwardOutput<T>& fwd,
                                           const Tensor<T>& d_hidden, ParamStore<T>& grads,
                                           int first_trainable_block, bool train_embeddings) const {
    if (!fwd.cache) fail(ErrorKind::Parameter, "backward_from_hidden: forward pass must keep its cache");
    const auto& cache = *fwd.cache;
    const size_t N = batch.rows();
    const size_t B = batch.batch;
    const size_t S = batch.seq;
    const size_t H = static_cast<size_t>(config.d_model);
    const size_t F = static_cast<size_t>(config.d_ff);
    const size_t nh = static_cast<size_t>(config.n_heads);
    const size_t dh = H / nh;
    const bool drop = cache.dropout_active;
    const double p = cache.dropout_p;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    const int stop_layer = train_embeddings ? 0 : std::min(first_trainable_block, config.n_layers);
    if (stop_layer >= config.n_layers && !train_embeddings) return;

    Tensor<T> dcur = d_hidden;
    for (int layer = config.n_layers - 1; layer >= stop_layer; --layer) {
        const auto& lc = cache.layers[static_cast<size_t>(layer)];
        const std::string base = "encoder.layer." + std::to_string(layer) + ".";
        const bool want = layer >= first_trainable_block;

        // LN2 backward.
        Tensor<T> ds2({N, H});
        detail::layer_norm_backward(lc.s2.data(), params.get(base + "ffn.layer_norm.gamma").data(),
                                    lc.ln2_mean.data(), lc.ln2_rstd.data(), dcur.data(), ds2.data(),
                                    want ? grads.get(base + "ffn.layer_norm.gamma").data() : nullptr,
                                    want ? grads.get(base + "ffn.layer_norm.beta").data() : nullptr, N, H);

        // FFN backward; ds2 doubles as the residual gradient into `a`.
        Tensor<T> df = ds2;
        if (drop) detail::dropout_backward(df.data(), lc.ffn_drop, p, N * H);
        Tensor<T> dg({N, F});
        gemm_nt(df.data(), params.get(base + "ffn.output.weight").data(), dg.data(), N, H, F);
        if (want) {
            gemm_tn(lc.g.data(), df.data(), grads.get(base + "ffn.output.weight").data(), N, F, H, true);
            accumulate_colsum(df.data(), grads.get(base + "ffn.output.bias").data(), N, H);
        }
        for (size_t i = 0; i < N * F; ++i) dg[i] *= detail::gelu_grad(lc.z[i]);
        Tensor<T> da = ds2;
        gemm_nt(dg.data(), params.get(base + "ffn.intermediate.weight").data(), da.data(), N, F, H, true);
        if (want) {
            gemm_tn(lc.a.data(), dg.data(), grads.get(base + "ffn.intermediate.weight").data(), N, H, F, true);
            accumulate_colsum(dg.data(), grads.get(base + "ffn.intermediate.bias").data(), N, F);
        }

        // LN1 backward.
        Tensor<T> ds1({N, H});
        detail::layer_norm_backward(lc.s1.data(), params.get(base + "attention.layer_norm.gamma").data(),
                                    lc.ln1_mean.data(), lc.ln1_rstd.data(), da.data(), ds1.data(),
                                    want ? grads.get(base + "attention.layer_norm.gamma").data() : nullptr,
                                    want ? grads.get(base + "attention.layer_norm.beta").data() : nullptr, N, H);

        // Attention output projection backward; ds1 is also the residual into x.
        Tensor<T> dattn = ds1;
        if (drop) detail::dropout_backward(dattn.data(), lc.out_drop, p, N * H);
        Tensor<T> dcontext({N, H});
        gemm_nt(dattn.data(), params.get(base + "attention.output.weight").data(), dcontext.data(), N, H, H);
        if (want) {
            gemm_tn(lc.context.data(), dattn.data(), grads.get(base + "attention.output.weight").data(), N, H, H, true);
            accumulate_colsum(dattn.data(), grads.get(base + "attention.output.bias").data(), N, H);
        }

        // Attention core backward.
        Tensor<T> dq({N, H}), dk({N, H}), dv({N, H});
        Tensor<T> dprobs({S, S});
        const Tensor<T>& probs_used = drop ? lc.probs_used : lc.probs;
        for (size_t b = 0; b < B; ++b) {
            for (size_t h = 0; h < nh; ++h) {
                const size_t po = (b * nh + h) * S * S;
                StridedConstMap<T> Vh(lc.v.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                      static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                StridedConstMap<T> dC(dcontext.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                      static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                ConstMatMap<T> Pu(probs_used.data() + po, static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
                StridedMap<T> dVh(dv.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                  static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                dVh.noalias() = Pu.transpose() * dC;

                MatMap<T> dP(dprobs.data(), static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
                dP.noalias() = dC * Vh.transpose();
                if (drop) detail::dropout_backward(dprobs.data(), lc.attn_drop, p, S * S, po);

                // Softmax backward on the pre-dropout probabilities.
                for (size_t i = 0; i < S; ++i) {
                    const T* prow = lc.probs.data() + po + i * S;
                    T* dpr = dprobs.data() + i * S;
                    double dot = 0.0;
                    for (size_t j = 0; j < S; ++j) dot += static_cast<double>(dpr[j]) * static_cast<double>(prow[j]);
                    for (size_t j = 0; j < S; ++j) {
                        dpr[j] = static_cast<T>(static_cast<double>(prow[j]) *
                                                (static_cast<double>(dpr[j]) - dot));
                    }
                }

                StridedConstMap<T> Qh(lc.q.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                      static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                StridedConstMap<T> Kh(lc.k.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                      static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                StridedMap<T> dQh(dq.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                  static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                StridedMap<T> dKh(dk.data() + b * S * H + h * dh, static_cast<Eigen::Index>(S),
                                  static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(H)));
                ConstMatMap<T> dS(dprobs.data(), static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
                dQh.noalias() = dS * Kh * scale;
                dKh.noalias() = dS.transpose() * Qh * scale;
            }
        }

        // Q/K/V projection backward; dx collects the residual plus all three.
        Tensor<T> dx = ds1;
        gemm_nt(dq.data(), params.get(base + "attention.query.weight").data(), dx.data(), N, H, H, true);
        gemm_nt(dk.data(), params.get(base + "attention.key.weight").data(), dx.data(), N, H, H, true);
        gemm_nt(dv.data(), params.get(base + "attention.value.weight").data(), dx.data(), N, H, H, true);
        if (want) {
            gemm_tn(lc.x.data(), dq.data(), grads.get(base + "attention.query.weight").data(), N, H, H, true);
            accumulate_colsum(dq.data(), grads.get(base + "attention.query.bias").data(), N, H);
            gemm_tn(lc.x.data(), dk.data(), grads.get(base + "attention.key.weight").data(), N, H, H, true);
            accumulate_colsum(dk.data(), grads.get(base + "attention.key.bias").data(), N, H);
            gemm_tn(lc.x.data(), dv.data(), grads.get(base + "attention.value.weight").data(), N, H, H, true);
            accumulate_colsum(dv.data(), grads.get(base + "attention.value.bias").data(), N, H);
        }
        dcur = std::move(dx);
    }

    if (!train_embeddings) return;

    if (drop) detail::dropout_backward(dcur.data(), cache.emb_drop, p, N * H);
    Tensor<T> dsum({N, H});
    detail::layer_norm_backward(cache.emb_sum.data(), params.get("embeddings.layer_norm.gamma").data(),
                                cache.emb_mean.data(), cache.emb_rstd.data(), dcur.data(), dsum.data(),
                                grads.get("embeddings.layer_norm.gamma").data(),
                                grads.get("embeddings.layer_norm.beta").data(), N, H);
    auto& dword = grads.get("embeddings.word");
    auto& dpos = grads.get("embeddings.position");
    auto& dtype = grads.get("embeddings.token_type");
    for (size_t r = 0; r < N; ++r) {
        const T* src = dsum.data() + r * H;
        T* wrow = dword.data() + static_cast<size_t>(batch.ids[r]) * H;
        T* prow = dpos.data() + static_cast<size_t>(cache.position_ids[r]) * H;
        for (size_t j = 0; j < H; ++j) {
            wrow[j] += src[j];
            prow[j] += src[j];
            dtype[j] += src[j];
        }
    }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class EncoderModel<float>;
template class EncoderModel<double>;
template ParamStore<float> make_store<float>(const std::vector<TensorSpec>&);
template ParamStore<double> make_store<double>(const std::vector<TensorSpec>&);

}  // namespace heartbert
