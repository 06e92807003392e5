#pragma once

#include <string>
#include <vector>

namespace heartbert {

// Raw single-channel ECG trace plus provenance metadata.
struct EcgRecord {
    std::vector<double> samples;  // millivolts
    double sampling_rate_hz = 0.0;
    std::string record_id;
    std::string channel = "ECG";

    void validate() const;  // non-empty, finite samples, positive rate
};

// A contiguous slice of a normalized record, at most 4000 samples long.
struct NormalizedWindow {
    std::vector<double> samples;  // each in [0, 1]
    std::string record_id;
    size_t offset = 0;  // sample index of the window start in the record
};

enum class SignalFormat { Csv, RawF32 };

inline constexpr int kDefaultWindowLen = 4000;
inline constexpr double kDefaultTargetHz = 360.0;

// CSV: first line "rate=<float>", one sample per line; "#> " lines after the
// header carry provenance and are skipped on load (CSV only — the raw format
// has no comment channel).
// Raw: 8-byte magic "HBSIG01\0", little-endian float64 rate, float32 samples.
EcgRecord load_record(const std::string& path, SignalFormat format);
void save_record(const EcgRecord& record, const std::string& path, SignalFormat format,
                 const std::vector<std::string>& provenance = {});

// Infers the format from the extension (.csv vs anything else).
EcgRecord load_record_auto(const std::string& path);

// Fourier-method rate conversion: the spectrum is zero-padded or truncated
// symmetrically (Hermitian symmetry preserved) and inverse-transformed.
// Output length is round(n * target_hz / source_hz).
EcgRecord resample(const EcgRecord& record, double target_hz = kDefaultTargetHz);

// Per-record min-max scaling to [0, 1]; a constant record maps to all 0.5.
EcgRecord normalize(const EcgRecord& record);

// Contiguous non-overlapping windows covering the whole record in order; all
// but the last have length max_len. The record must already be normalized.
std::vector<NormalizedWindow> window(const EcgRecord& record, int max_len = kDefaultWindowLen);

}  // namespace heartbert
