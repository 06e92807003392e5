#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "heartbert/errors.hpp"
#include "heartbert/quantizer.hpp"
#include "heartbert/rng.hpp"
#include "heartbert/signal.hpp"
#include "heartbert/utf8.hpp"

using namespace heartbert;

namespace {

// Exhaustive 2-level oracle: every split of the sorted sample into a left and
// right cell, each reproduced by its conditional mean.
double best_two_level_mse(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const size_t n = samples.size();
    std::vector<double> prefix(n + 1, 0.0), prefix_sq(n + 1, 0.0);
    for (size_t i = 0; i < n; ++i) {
        prefix[i + 1] = prefix[i] + samples[i];
        prefix_sq[i + 1] = prefix_sq[i] + samples[i] * samples[i];
    }
    auto sse = [&](size_t lo, size_t hi) {  // [lo, hi)
        double cnt = static_cast<double>(hi - lo);
        double sum = prefix[hi] - prefix[lo];
        double sq = prefix_sq[hi] - prefix_sq[lo];
        return sq - sum * sum / cnt;
    };
    double best = std::numeric_limits<double>::infinity();
    for (size_t split = 1; split < n; ++split) {
        best = std::min(best, sse(0, split) + sse(split, n));
    }
    return best / static_cast<double>(n);
}

std::vector<double> bimodal_samples(size_t n, uint64_t seed) {
    auto rng = Rng::substream(seed, "bimodal");
    std::vector<double> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        double center = (i % 2 == 0) ? 0.25 : 0.75;
        double v = center + 0.05 * rng.normal();
        out.push_back(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

}  // namespace

TEST_CASE("two-level training matches the exhaustive oracle") {
    auto samples = bimodal_samples(2000, 21);
    QuantizerOptions opt;
    opt.levels = 2;
    opt.tol = 1e-12;
    opt.max_iter = 500;
    auto cb = train_codebook(samples, opt);
    double oracle = best_two_level_mse(samples);
    CHECK(cb.training_distortion == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(cb.centroids[0] < 0.5);
    CHECK(cb.centroids[1] > 0.5);
}

TEST_CASE("distortion is non-increasing across iterations") {
    auto rng = Rng::substream(22, "distortion-series");
    std::vector<double> samples;
    for (int i = 0; i < 5000; ++i) samples.push_back(rng.uniform());
    QuantizerOptions opt;
    opt.levels = 16;
    std::vector<double> series;
    auto cb = train_codebook(samples, opt, &series);
    REQUIRE(series.size() >= 2);
    for (size_t i = 1; i < series.size(); ++i) {
        CHECK(series[i] <= series[i - 1] + 1e-12);
    }
    CHECK(cb.training_distortion == doctest::Approx(series.back()));
}

TEST_CASE("uniform data at 100 levels approaches the uniform-quantizer bound") {
    auto rng = Rng::substream(23, "uniform-100");
    std::vector<double> samples;
    for (int i = 0; i < 50000; ++i) samples.push_back(rng.uniform());
    QuantizerOptions opt;
    opt.levels = 100;
    auto cb = train_codebook(samples, opt);
    // MSE of an optimal 100-level quantizer on U[0,1] is 1/(12 * 100^2).
    double bound = 1.0 / (12.0 * 100.0 * 100.0);
    CHECK(cb.training_distortion < 2.0 * bound);
    CHECK(cb.training_distortion > 0.5 * bound);
}

TEST_CASE("cell_of picks the nearest centroid with ties to the lower cell") {
    QuantizerCodebook cb;
    cb.levels = 3;
    cb.centroids = {0.1, 0.5, 0.9};
    cb.boundaries = {0.3, 0.7};
    cb.alphabet = {'A', 'B', 'C'};
    cb.validate();

    CHECK(cb.cell_of(0.0) == 0);
    CHECK(cb.cell_of(0.2999) == 0);
    CHECK(cb.cell_of(0.3) == 0);  // boundary tie -> lower
    CHECK(cb.cell_of(0.3001) == 1);
    CHECK(cb.cell_of(0.7) == 1);
    CHECK(cb.cell_of(1.0) == 2);
}

TEST_CASE("encode/decode equals snapping to the nearest centroid") {
    auto samples = bimodal_samples(3000, 24);
    QuantizerOptions opt;
    opt.levels = 10;
    auto cb = train_codebook(samples, opt);

    NormalizedWindow win;
    win.record_id = "w";
    win.offset = 40;
    auto rng = Rng::substream(25, "encode-roundtrip");
    for (int i = 0; i < 500; ++i) win.samples.push_back(rng.uniform());

    auto seq = encode_symbols(win, cb);
    CHECK(seq.record_id == "w");
    CHECK(seq.offset == 40);
    CHECK(utf8_length(seq.text) == win.samples.size());

    auto decoded = decode_symbols(seq, cb);
    REQUIRE(decoded.size() == win.samples.size());
    for (size_t i = 0; i < decoded.size(); ++i) {
        int cell = cb.cell_of(win.samples[i]);
        CHECK(decoded[i] == cb.centroids[static_cast<size_t>(cell)]);
        // Nearest-centroid property.
        for (int k = 0; k < cb.levels; ++k) {
            CHECK(std::abs(win.samples[i] - decoded[i]) <=
                  std::abs(win.samples[i] - cb.centroids[static_cast<size_t>(k)]) + 1e-15);
        }
    }
}

TEST_CASE("quantizing a quantized window is idempotent") {
    auto samples = bimodal_samples(3000, 26);
    QuantizerOptions opt;
    opt.levels = 8;
    auto cb = train_codebook(samples, opt);

    NormalizedWindow win;
    win.record_id = "idem";
    auto rng = Rng::substream(27, "idempotent");
    for (int i = 0; i < 200; ++i) win.samples.push_back(rng.uniform());

    auto once = encode_symbols(win, cb);
    NormalizedWindow snapped;
    snapped.record_id = "idem";
    snapped.samples = decode_symbols(once, cb);
    auto twice = encode_symbols(snapped, cb);
    CHECK(once.text == twice.text);
}

TEST_CASE("codebook files round-trip exactly") {
    auto samples = bimodal_samples(2000, 28);
    QuantizerOptions opt;
    opt.levels = 100;
    auto cb = train_codebook(samples, opt);

    const std::string path = "quantizer_test_tmp.hbq";
    save_codebook(cb, path, {"origin=unit-test", "seed=28"});
    auto back = load_codebook(path);
    std::remove(path.c_str());

    CHECK(back.levels == cb.levels);
    CHECK(back.centroids == cb.centroids);
    CHECK(back.boundaries == cb.boundaries);
    CHECK(back.alphabet == cb.alphabet);
}

TEST_CASE("default alphabet has 100 unique code points") {
    auto alphabet = default_alphabet(100);
    REQUIRE(alphabet.size() == 100);
    std::set<uint32_t> uniq(alphabet.begin(), alphabet.end());
    CHECK(uniq.size() == 100);
    // 26 + 26 + 10 alphanumerics first, punctuation and Latin-1 afterwards.
    CHECK(alphabet[0] == 'A');
    CHECK(alphabet[26] == 'a');
    CHECK(alphabet[52] == '0');
    for (uint32_t cp : alphabet) {
        CHECK(cp > 0x20);      // no spaces or controls
        CHECK(cp != 0x7f);
        CHECK(cp <= 0x00a6);   // ASCII + a short Latin-1 tail
    }

    auto small = default_alphabet(10);
    CHECK(small.size() == 10);
    CHECK(std::equal(small.begin(), small.end(), alphabet.begin()));
}

TEST_CASE("degenerate inputs are rejected") {
    QuantizerOptions opt;
    opt.levels = 4;
    CHECK_THROWS_AS(train_codebook({0.1, 0.2, 0.3}, opt), Error);  // too few samples
    CHECK_THROWS_AS(train_codebook({0.5, 0.5, 0.5, 0.5, 0.5}, opt), Error);  // too few distinct
    CHECK_THROWS_AS(train_codebook({0.1, 0.2, 0.3, 1.5}, opt), Error);  // out of range

    QuantizerOptions bad;
    bad.levels = 0;
    CHECK_THROWS_AS(train_codebook({0.1, 0.2}, bad), Error);

    auto cb = train_codebook({0.1, 0.2, 0.3, 0.4, 0.55, 0.7, 0.8, 0.9}, opt);
    NormalizedWindow win;
    win.samples = {0.5, 1.5};
    CHECK_THROWS_AS(encode_symbols(win, cb), Error);

    SymbolSequence seq;
    seq.text = "\xc3\xbf";  // U+00FF, outside the alphabet
    CHECK_THROWS_AS(decode_symbols(seq, cb), Error);
}

TEST_CASE("training is deterministic") {
    auto samples = bimodal_samples(4000, 29);
    QuantizerOptions opt;
    opt.levels = 32;
    auto a = train_codebook(samples, opt);
    auto b = train_codebook(samples, opt);
    CHECK(a.centroids == b.centroids);
    CHECK(a.boundaries == b.boundaries);
}
