#include <benchmark/benchmark.h>

#include "heartbert/model.hpp"
#include "heartbert/quantizer.hpp"
#include "heartbert/rng.hpp"
#include "heartbert/signal.hpp"
#include "heartbert/tokenizer.hpp"
#include "heartbert/utf8.hpp"

namespace {

std::vector<double> random_samples(size_t n, uint64_t seed) {
    auto rng = heartbert::Rng::substream(seed, "bench-samples");
    std::vector<double> s(n);
    for (auto& v : s) v = rng.uniform();
    return s;
}

void BM_Resample(benchmark::State& state) {
    heartbert::EcgRecord rec;
    rec.sampling_rate_hz = 250.0;
    rec.record_id = "bench";
    rec.samples = random_samples(static_cast<size_t>(state.range(0)), 7);
    for (auto _ : state) {
        auto out = heartbert::resample(rec, 360.0);
        benchmark::DoNotOptimize(out.samples.data());
    }
}
BENCHMARK(BM_Resample)->Arg(4096)->Arg(65536);

void BM_QuantizerTrain(benchmark::State& state) {
    auto samples = random_samples(static_cast<size_t>(state.range(0)), 11);
    heartbert::QuantizerOptions opt;
    opt.levels = 100;
    for (auto _ : state) {
        auto cb = heartbert::train_codebook(samples, opt);
        benchmark::DoNotOptimize(cb.training_distortion);
    }
}
BENCHMARK(BM_QuantizerTrain)->Arg(20000);

void BM_Encode(benchmark::State& state) {
    auto alphabet = heartbert::default_alphabet(100);
    auto rng = heartbert::Rng::substream(3, "bench-corpus");
    std::vector<std::string> corpus;
    for (int i = 0; i < 64; ++i) {
        std::string line;
        for (int j = 0; j < 512; ++j) {
            heartbert::utf8_append(line, alphabet[rng.uniform_index(alphabet.size())]);
        }
        corpus.push_back(std::move(line));
    }
    auto tok = heartbert::train_bpe(corpus, alphabet, 400);
    const std::string& text = corpus[0];
    for (auto _ : state) {
        auto seq = tok.encode(text);
        benchmark::DoNotOptimize(seq.ids.data());
    }
}
BENCHMARK(BM_Encode);

heartbert::ModelConfig bench_model_config() {
    heartbert::ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_model = 64;
    c.d_ff = 256;
    c.vocab_size = 256;
    c.max_positions = 130;
    c.dropout = 0.0;
    return c;
}

heartbert::BatchIds bench_batch(size_t batch, size_t seq, uint64_t seed) {
    auto rng = heartbert::Rng::substream(seed, "bench-batch");
    heartbert::BatchIds b;
    b.batch = batch;
    b.seq = seq;
    b.ids.resize(batch * seq);
    b.attention_mask.assign(batch * seq, 1);
    for (auto& id : b.ids) id = 5 + static_cast<int>(rng.uniform_index(251));
    return b;
}

void BM_EncoderForward(benchmark::State& state) {
    const auto cfg = bench_model_config();
    auto model = heartbert::EncoderModel<float>::build(cfg, 17);
    const auto batch = bench_batch(4, static_cast<size_t>(state.range(0)), 19);
    for (auto _ : state) {
        auto out = model.forward(batch);
        benchmark::DoNotOptimize(out.hidden.data());
    }
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(128);

void BM_MlmLossAndGrads(benchmark::State& state) {
    const auto cfg = bench_model_config();
    auto model = heartbert::EncoderModel<float>::build(cfg, 17);
    const auto batch = bench_batch(4, 64, 19);
    std::vector<int> labels(batch.rows(), -100);
    auto rng = heartbert::Rng::substream(23, "bench-labels");
    for (auto& l : labels) {
        if (rng.uniform() < 0.15) l = 5 + static_cast<int>(rng.uniform_index(251));
    }
    heartbert::ForwardOptions opts;
    opts.want_cache = true;
    auto grads = heartbert::make_store<float>(heartbert::encoder_tensor_specs(cfg));
    for (auto _ : state) {
        auto fwd = model.forward(batch, opts);
        auto result = model.mlm_loss_and_grads(batch, labels, fwd, grads);
        benchmark::DoNotOptimize(result.loss);
    }
}
BENCHMARK(BM_MlmLossAndGrads);

}  // namespace

BENCHMARK_MAIN();
