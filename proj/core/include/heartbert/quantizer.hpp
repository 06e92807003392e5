#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heartbert/signal.hpp"

namespace heartbert {

// The 100-symbol default alphabet: A-Z, a-z, 0-9, the 32 ASCII punctuation
// characters, then six Latin-1 code points to reach exactly 100 symbols.
std::vector<uint32_t> default_alphabet(int levels = 100);

// Lloyd-Max scalar codebook plus the symbol alphabet it maps onto.
struct QuantizerCodebook {
    int levels = 100;
    std::vector<double> centroids;    // strictly increasing, size = levels
    std::vector<double> boundaries;   // midpoints, size = levels - 1
    std::vector<uint32_t> alphabet;   // unique code points, size = levels
    double training_distortion = 0.0; // final MSE on the training sample

    void validate() const;
    int cell_of(double value) const;          // nearest centroid, ties to lower index
    int symbol_index(uint32_t codepoint) const;  // -1 if not in the alphabet
};

// Character stream produced by quantizing one normalized window.
struct SymbolSequence {
    std::string text;  // UTF-8 over the codebook alphabet
    std::string record_id;
    size_t offset = 0;
};

struct QuantizerOptions {
    int levels = 100;
    double tol = 1e-7;   // relative distortion change threshold
    int max_iter = 200;
    uint64_t seed = 0;   // reserved for subsampling decisions upstream
};

// Alternates the centroid condition (cell means) and the boundary condition
// (adjacent-centroid midpoints) until the distortion change drops below tol.
// Per-iteration distortion is appended to *distortion_series when given.
QuantizerCodebook train_codebook(const std::vector<double>& samples,
                                 const QuantizerOptions& options,
                                 std::vector<double>* distortion_series = nullptr);

SymbolSequence encode_symbols(const NormalizedWindow& window, const QuantizerCodebook& codebook);
std::vector<double> decode_symbols(const SymbolSequence& sequence, const QuantizerCodebook& codebook);

// Codebook file: "HBQ v1" / "levels=<n>" / alphabet line / centroid lines /
// boundary lines. Lines starting with "#>" carry provenance and are skipped.
void save_codebook(const QuantizerCodebook& codebook, const std::string& path,
                   const std::vector<std::string>& provenance = {});
QuantizerCodebook load_codebook(const std::string& path);

}  // namespace heartbert
