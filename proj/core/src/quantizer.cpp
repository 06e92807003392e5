#include "heartbert/quantizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "heartbert/errors.hpp"
#include "heartbert/utf8.hpp"

namespace heartbert {

std::vector<uint32_t> default_alphabet(int levels) {
    std::string base;
    for (char c = 'A'; c <= 'Z'; ++c) base.push_back(c);
    for (char c = 'a'; c <= 'z'; ++c) base.push_back(c);
    for (char c = '0'; c <= '9'; ++c) base.push_back(c);
    base += "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
    std::vector<uint32_t> symbols(base.begin(), base.end());
    // 94 printable non-space ASCII characters exist; the remaining slots come
    // from the Latin-1 supplement so the default reaches 100 symbols.
    for (uint32_t cp = 0x00a1; cp <= 0x00a6; ++cp) symbols.push_back(cp);
    if (levels > static_cast<int>(symbols.size())) {
        fail(ErrorKind::Parameter, "default alphabet supports at most 100 levels");
    }
    symbols.resize(static_cast<size_t>(levels));
    return symbols;
}

void QuantizerCodebook::validate() const {
    if (levels < 1) fail(ErrorKind::Data, "codebook: levels must be >= 1");
    if (static_cast<int>(centroids.size()) != levels) {
        fail(ErrorKind::Data, "codebook: centroid count != levels");
    }
    if (static_cast<int>(boundaries.size()) != levels - 1) {
        fail(ErrorKind::Data, "codebook: boundary count != levels - 1");
    }
    if (static_cast<int>(alphabet.size()) != levels) {
        fail(ErrorKind::Data, "codebook: alphabet size != levels");
    }
    for (int i = 0; i + 1 < levels; ++i) {
        if (!(centroids[i] < centroids[i + 1])) {
            fail(ErrorKind::Data, "codebook: centroids not strictly increasing");
        }
        double mid = 0.5 * (centroids[i] + centroids[i + 1]);
        if (std::abs(boundaries[i] - mid) > 1e-9) {
            fail(ErrorKind::Data, "codebook: boundary is not the centroid midpoint");
        }
    }
    std::set<uint32_t> uniq(alphabet.begin(), alphabet.end());
    if (uniq.size() != alphabet.size()) fail(ErrorKind::Data, "codebook: alphabet characters not unique");
}

int QuantizerCodebook::cell_of(double value) const {
    // First boundary >= value gives the cell; equality lands on the lower cell.
    auto it = std::lower_bound(boundaries.begin(), boundaries.end(), value);
    return static_cast<int>(it - boundaries.begin());
}

int QuantizerCodebook::symbol_index(uint32_t codepoint) const {
    for (size_t i = 0; i < alphabet.size(); ++i) {
        if (alphabet[i] == codepoint) return static_cast<int>(i);
    }
    return -1;
}

namespace {

double distortion_of(const std::vector<double>& samples, const QuantizerCodebook& cb) {
    double sum = 0.0;
    for (double v : samples) {
        double d = v - cb.centroids[static_cast<size_t>(cb.cell_of(v))];
        sum += d * d;
    }
    return sum / static_cast<double>(samples.size());
}

void recompute_boundaries(QuantizerCodebook& cb) {
    cb.boundaries.resize(static_cast<size_t>(cb.levels - 1));
    for (int i = 0; i + 1 < cb.levels; ++i) {
        cb.boundaries[static_cast<size_t>(i)] = 0.5 * (cb.centroids[i] + cb.centroids[i + 1]);
    }
}

}  // namespace

QuantizerCodebook train_codebook(const std::vector<double>& samples,
                                 const QuantizerOptions& options,
                                 std::vector<double>* distortion_series) {
    if (options.levels < 1) fail(ErrorKind::Parameter, "train_codebook: levels must be >= 1");
    if (static_cast<int>(samples.size()) < options.levels) {
        fail(ErrorKind::Data, "train_codebook: need at least `levels` samples");
    }
    for (double v : samples) {
        if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::Data, "train_codebook: samples must lie in [0,1]");
    }

    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct = sorted;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<int>(distinct.size()) < options.levels) {
        fail(ErrorKind::Data, "train_codebook: fewer distinct samples than levels");
    }

    QuantizerCodebook cb;
    cb.levels = options.levels;
    cb.alphabet = default_alphabet(options.levels);
    cb.centroids.resize(static_cast<size_t>(options.levels));

    // Quantile initialization over the distinct values keeps every starting
    // cell non-empty and the centroids strictly increasing.
    const size_t d = distinct.size();
    if (options.levels == 1) {
        double mean = 0.0;
        for (double v : samples) mean += v;
        cb.centroids[0] = mean / static_cast<double>(samples.size());
        cb.boundaries.clear();
        cb.training_distortion = distortion_of(samples, cb);
        if (distortion_series) distortion_series->push_back(cb.training_distortion);
        return cb;
    }
    for (int i = 0; i < options.levels; ++i) {
        size_t idx = (static_cast<size_t>(i) * (d - 1)) / static_cast<size_t>(options.levels - 1);
        cb.centroids[static_cast<size_t>(i)] = distinct[idx];
    }
    recompute_boundaries(cb);

    const size_t n = sorted.size();
    double prev_distortion = -1.0;
    for (int iter = 0; iter < options.max_iter; ++iter) {
        // Assignment over the sorted sample is a single sweep per cell.
        std::vector<double> cell_sum(static_cast<size_t>(options.levels), 0.0);
        std::vector<size_t> cell_count(static_cast<size_t>(options.levels), 0);
        std::vector<double> cell_sq(static_cast<size_t>(options.levels), 0.0);
        {
            size_t cell = 0;
            for (size_t i = 0; i < n; ++i) {
                double v = sorted[i];
                while (cell + 1 < static_cast<size_t>(options.levels) && v > cb.boundaries[cell]) ++cell;
                cell_sum[cell] += v;
                cell_sq[cell] += v * v;
                cell_count[cell] += 1;
            }
        }

        // Centroid condition; empty cells are repaired by splitting the cell
        // with the largest within-cell distortion at its mean.
        for (int i = 0; i < options.levels; ++i) {
            if (cell_count[static_cast<size_t>(i)] == 0) {
                int worst = -1;
                double worst_dist = -1.0;
                for (int j = 0; j < options.levels; ++j) {
                    size_t cnt = cell_count[static_cast<size_t>(j)];
                    if (cnt < 2) continue;
                    double mean = cell_sum[static_cast<size_t>(j)] / static_cast<double>(cnt);
                    double dist = cell_sq[static_cast<size_t>(j)] - mean * mean * static_cast<double>(cnt);
                    if (dist > worst_dist) {
                        worst_dist = dist;
                        worst = j;
                    }
                }
                if (worst < 0) fail(ErrorKind::Data, "train_codebook: degenerate data, cannot repair empty cell");

                // Split the worst cell at its mean: lower/upper halves get
                // their own conditional means.
                double bound_lo = (worst == 0) ? -1.0 : cb.boundaries[static_cast<size_t>(worst - 1)];
                double bound_hi = (worst == options.levels - 1) ? 2.0 : cb.boundaries[static_cast<size_t>(worst)];
                auto lo_it = std::upper_bound(sorted.begin(), sorted.end(), bound_lo);
                auto hi_it = std::upper_bound(sorted.begin(), sorted.end(), bound_hi);
                double mean = cell_sum[static_cast<size_t>(worst)] / static_cast<double>(cell_count[static_cast<size_t>(worst)]);
                double lo_sum = 0.0, hi_sum = 0.0;
                size_t lo_cnt = 0, hi_cnt = 0;
                for (auto it = lo_it; it != hi_it; ++it) {
                    if (*it <= mean) {
                        lo_sum += *it;
                        ++lo_cnt;
                    } else {
                        hi_sum += *it;
                        ++hi_cnt;
                    }
                }
                if (lo_cnt == 0 || hi_cnt == 0) fail(ErrorKind::Data, "train_codebook: cannot split degenerate cell");
                cell_sum[static_cast<size_t>(worst)] = lo_sum;
                cell_count[static_cast<size_t>(worst)] = lo_cnt;
                cell_sum[static_cast<size_t>(i)] = hi_sum;
                cell_count[static_cast<size_t>(i)] = hi_cnt;
                // cell_sq entries are only used to pick the worst cell; after a
                // split the loop continues with counts/sums that stay valid for
                // the centroid update below.
                cell_sq[static_cast<size_t>(worst)] = 0.0;
                cell_sq[static_cast<size_t>(i)] = 0.0;
            }
        }
        for (int i = 0; i < options.levels; ++i) {
            cb.centroids[static_cast<size_t>(i)] =
                cell_sum[static_cast<size_t>(i)] / static_cast<double>(cell_count[static_cast<size_t>(i)]);
        }
        std::sort(cb.centroids.begin(), cb.centroids.end());
        recompute_boundaries(cb);

        double dist = distortion_of(sorted, cb);
        if (distortion_series) distortion_series->push_back(dist);
        if (prev_distortion >= 0.0) {
            double rel_change = std::abs(prev_distortion - dist) / std::max(prev_distortion, 1e-300);
            if (rel_change < options.tol) {
                cb.training_distortion = dist;
                cb.validate();
                return cb;
            }
        }
        prev_distortion = dist;
    }

    cb.training_distortion = prev_distortion;
    cb.validate();
    return cb;
}

SymbolSequence encode_symbols(const NormalizedWindow& window, const QuantizerCodebook& codebook) {
    SymbolSequence seq;
    seq.record_id = window.record_id;
    seq.offset = window.offset;
    seq.text.reserve(window.samples.size());
    for (double v : window.samples) {
        if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::Data, "encode_symbols: sample outside [0,1]");
        int cell = codebook.cell_of(v);
        utf8_append(seq.text, codebook.alphabet[static_cast<size_t>(cell)]);
    }
    return seq;
}

std::vector<double> decode_symbols(const SymbolSequence& sequence, const QuantizerCodebook& codebook) {
    std::vector<double> out;
    auto codepoints = utf8_decode(sequence.text);
    out.reserve(codepoints.size());
    for (uint32_t cp : codepoints) {
        int idx = codebook.symbol_index(cp);
        if (idx < 0) fail(ErrorKind::Symbol, "decode_symbols: character not in the codebook alphabet");
        out.push_back(codebook.centroids[static_cast<size_t>(idx)]);
    }
    return out;
}

void save_codebook(const QuantizerCodebook& codebook, const std::string& path,
                   const std::vector<std::string>& provenance) {
    codebook.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::MissingArtifact, "cannot write codebook: " + path);
    out << "HBQ v1\n";
    out << "levels=" << codebook.levels << "\n";
    std::string alphabet_line;
    for (uint32_t cp : codebook.alphabet) utf8_append(alphabet_line, cp);
    out << alphabet_line << "\n";
    char buf[96];
    for (int i = 0; i < codebook.levels; ++i) {
        std::snprintf(buf, sizeof(buf), "centroid %d %.17g\n", i, codebook.centroids[static_cast<size_t>(i)]);
        out << buf;
    }
    for (int i = 0; i + 1 < codebook.levels; ++i) {
        std::snprintf(buf, sizeof(buf), "boundary %d %.17g\n", i, codebook.boundaries[static_cast<size_t>(i)]);
        out << buf;
    }
    for (const auto& line : provenance) out << "#> " << line << "\n";
}

QuantizerCodebook load_codebook(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::MissingArtifact, "codebook not found: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "HBQ v1") {
        fail(ErrorKind::Format, "codebook: bad header in " + path);
    }
    if (!std::getline(in, line) || line.rfind("levels=", 0) != 0) {
        fail(ErrorKind::Format, "codebook: missing levels line in " + path);
    }
    QuantizerCodebook cb;
    try {
        cb.levels = std::stoi(line.substr(7));
    } catch (const std::exception&) {
        fail(ErrorKind::Format, "codebook: bad levels value in " + path);
    }
    if (!std::getline(in, line)) fail(ErrorKind::Format, "codebook: missing alphabet line in " + path);
    cb.alphabet = utf8_decode(line);
    cb.centroids.assign(static_cast<size_t>(cb.levels), 0.0);
    cb.boundaries.assign(static_cast<size_t>(std::max(0, cb.levels - 1)), 0.0);
    std::vector<bool> seen_centroid(static_cast<size_t>(cb.levels), false);
    std::vector<bool> seen_boundary(static_cast<size_t>(std::max(0, cb.levels - 1)), false);
    while (std::getline(in, line)) {
        if (line.empty() || line.rfind("#>", 0) == 0) continue;
        char kind[16];
        int idx = 0;
        double value = 0.0;
        if (std::sscanf(line.c_str(), "%15s %d %lg", kind, &idx, &value) != 3) {
            fail(ErrorKind::Format, "codebook: bad entry line '" + line + "'");
        }
        if (std::string(kind) == "centroid") {
            if (idx < 0 || idx >= cb.levels) fail(ErrorKind::Format, "codebook: centroid index out of range");
            cb.centroids[static_cast<size_t>(idx)] = value;
            seen_centroid[static_cast<size_t>(idx)] = true;
        } else if (std::string(kind) == "boundary") {
            if (idx < 0 || idx >= cb.levels - 1) fail(ErrorKind::Format, "codebook: boundary index out of range");
            cb.boundaries[static_cast<size_t>(idx)] = value;
            seen_boundary[static_cast<size_t>(idx)] = true;
        } else {
            fail(ErrorKind::Format, "codebook: unknown entry kind '" + std::string(kind) + "'");
        }
    }
    for (bool b : seen_centroid) {
        if (!b) fail(ErrorKind::Format, "codebook: missing centroid entries in " + path);
    }
    for (bool b : seen_boundary) {
        if (!b) fail(ErrorKind::Format, "codebook: missing boundary entries in " + path);
    }
    cb.validate();
    return cb;
}

}  // namespace heartbert
