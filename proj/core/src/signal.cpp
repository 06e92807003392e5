#include "heartbert/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "heartbert/errors.hpp"

namespace heartbert {

namespace {

constexpr char kRawMagic[8] = {'H', 'B', 'S', 'I', 'G', '0', '1', '\0'};

double parse_double_strict(const std::string& text, const char* what) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        fail(ErrorKind::Format, std::string("cannot parse ") + what + ": '" + text + "'");
    }
    return value;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void EcgRecord::validate() const {
    if (samples.empty()) fail(ErrorKind::Data, "record '" + record_id + "' has no samples");
    if (!(sampling_rate_hz > 0.0)) {
        fail(ErrorKind::Data, "record '" + record_id + "' has non-positive sampling rate");
    }
    for (double v : samples) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::Data, "record '" + record_id + "' contains a non-finite sample");
        }
    }
}

EcgRecord load_record(const std::string& path, SignalFormat format) {
    if (!std::filesystem::exists(path)) {
        fail(ErrorKind::MissingArtifact, "signal file not found: " + path);
    }
    EcgRecord record;
    record.record_id = std::filesystem::path(path).stem().string();

    if (format == SignalFormat::Csv) {
        std::ifstream in(path);
        if (!in) fail(ErrorKind::MissingArtifact, "cannot open: " + path);
        std::string line;
        if (!std::getline(in, line)) fail(ErrorKind::Format, "empty CSV file: " + path);
        line = trim(line);
        if (line.rfind("rate=", 0) != 0) {
            fail(ErrorKind::Format, "CSV header must be 'rate=<float>', got '" + line + "' in " + path);
        }
        record.sampling_rate_hz = parse_double_strict(line.substr(5), "sampling rate");
        while (std::getline(in, line)) {
            line = trim(line);
            if (line.empty() || line.rfind("#>", 0) == 0) continue;
            record.samples.push_back(parse_double_strict(line, "sample"));
        }
    } else {
        std::ifstream in(path, std::ios::binary);
        if (!in) fail(ErrorKind::MissingArtifact, "cannot open: " + path);
        char magic[8];
        if (!in.read(magic, 8) || std::memcmp(magic, kRawMagic, 8) != 0) {
            fail(ErrorKind::Format, "bad raw-signal magic in " + path);
        }
        double rate = 0.0;
        if (!in.read(reinterpret_cast<char*>(&rate), 8)) {
            fail(ErrorKind::Format, "truncated raw-signal header in " + path);
        }
        record.sampling_rate_hz = rate;
        float buf[4096];
        for (;;) {
            in.read(reinterpret_cast<char*>(buf), sizeof(buf));
            std::streamsize got = in.gcount();
            if (got % 4 != 0) fail(ErrorKind::Format, "truncated float32 payload in " + path);
            for (std::streamsize i = 0; i < got / 4; ++i) record.samples.push_back(buf[i]);
            if (!in) break;
        }
    }

    if (record.samples.empty()) fail(ErrorKind::Data, "signal file has no samples: " + path);
    if (!(record.sampling_rate_hz > 0.0)) {
        fail(ErrorKind::Format, "declared sampling rate must be positive in " + path);
    }
    record.validate();
    return record;
}

EcgRecord load_record_auto(const std::string& path) {
    auto ext = std::filesystem::path(path).extension().string();
    return load_record(path, ext == ".csv" ? SignalFormat::Csv : SignalFormat::RawF32);
}

void save_record(const EcgRecord& record, const std::string& path, SignalFormat format,
                 const std::vector<std::string>& provenance) {
    record.validate();
    if (format == SignalFormat::Csv) {
        std::ofstream out(path);
        if (!out) fail(ErrorKind::MissingArtifact, "cannot write: " + path);
        char buf[64];
        int n = std::snprintf(buf, sizeof(buf), "rate=%.17g\n", record.sampling_rate_hz);
        out.write(buf, n);
        for (const auto& line : provenance) out << "#> " << line << "\n";
        for (double v : record.samples) {
            n = std::snprintf(buf, sizeof(buf), "%.9g\n", v);
            out.write(buf, n);
        }
    } else {
        std::ofstream out(path, std::ios::binary);
        if (!out) fail(ErrorKind::MissingArtifact, "cannot write: " + path);
        out.write(kRawMagic, 8);
        double rate = record.sampling_rate_hz;
        out.write(reinterpret_cast<const char*>(&rate), 8);
        for (double v : record.samples) {
            float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
}

namespace {

std::vector<std::complex<double>> fft_forward(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<std::complex<double>> in(n), out(n);
    for (size_t i = 0; i < n; ++i) in[i] = x[i];
    fftw_plan plan = fftw_plan_dft_1d(
        static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()),
        reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
    return out;
}

std::vector<std::complex<double>> fft_inverse(std::vector<std::complex<double>>& spectrum) {
    const size_t n = spectrum.size();
    std::vector<std::complex<double>> out(n);
    fftw_plan plan = fftw_plan_dft_1d(
        static_cast<int>(n), reinterpret_cast<fftw_complex*>(spectrum.data()),
        reinterpret_cast<fftw_complex*>(out.data()), FFTW_BACKWARD, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
    return out;
}

}  // namespace

EcgRecord resample(const EcgRecord& record, double target_hz) {
    record.validate();
    if (!(target_hz > 0.0)) fail(ErrorKind::Parameter, "resample: target_hz must be positive");

    const long n = static_cast<long>(record.samples.size());
    const long m = std::llround(static_cast<double>(n) * target_hz / record.sampling_rate_hz);
    if (m < 1) fail(ErrorKind::Parameter, "resample: target rate collapses the record to zero samples");

    EcgRecord out;
    out.sampling_rate_hz = target_hz;
    out.record_id = record.record_id;
    out.channel = record.channel;

    if (n == 1) {
        out.samples.assign(static_cast<size_t>(m), record.samples[0]);
        return out;
    }

    auto spectrum = fft_forward(record.samples);
    std::vector<std::complex<double>> target(static_cast<size_t>(m), std::complex<double>(0.0, 0.0));

    const long keep = std::min(n, m);
    const long pos_bins = keep / 2 + 1;        // DC .. (shared Nyquist when keep even)
    const long neg_bins = keep - pos_bins;     // strictly negative frequencies
    for (long k = 0; k < pos_bins; ++k) target[static_cast<size_t>(k)] = spectrum[static_cast<size_t>(k)];
    for (long k = 0; k < neg_bins; ++k) {
        target[static_cast<size_t>(m - neg_bins + k)] = spectrum[static_cast<size_t>(n - neg_bins + k)];
    }
    if (keep % 2 == 0) {
        const long nyq = keep / 2;
        if (m < n) {
            // Both input bins +/-Nyquist alias onto the output Nyquist bin.
            target[static_cast<size_t>(nyq)] += spectrum[static_cast<size_t>(n - nyq)];
        } else if (m > n) {
            // The input Nyquist energy splits across the two output bins.
            target[static_cast<size_t>(nyq)] *= 0.5;
            target[static_cast<size_t>(m - nyq)] = target[static_cast<size_t>(nyq)];
        }
    }

    auto time_domain = fft_inverse(target);
    out.samples.resize(static_cast<size_t>(m));
    // Unnormalized FFTW transforms: dividing by n both normalizes the inverse
    // (1/m) and applies the m/n amplitude rescale.
    const double scale = 1.0 / static_cast<double>(n);
    for (long i = 0; i < m; ++i) out.samples[static_cast<size_t>(i)] = time_domain[static_cast<size_t>(i)].real() * scale;
    return out;
}

EcgRecord normalize(const EcgRecord& record) {
    record.validate();
    auto [lo_it, hi_it] = std::minmax_element(record.samples.begin(), record.samples.end());
    const double lo = *lo_it, hi = *hi_it;

    EcgRecord out = record;
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        for (double& v : out.samples) v = (v - lo) * inv;
    } else {
        for (double& v : out.samples) v = 0.5;
    }
    return out;
}

std::vector<NormalizedWindow> window(const EcgRecord& record, int max_len) {
    if (max_len < 1) fail(ErrorKind::Parameter, "window: max_len must be >= 1");
    if (record.samples.empty()) fail(ErrorKind::Data, "window: empty record");
    for (double v : record.samples) {
        if (v < 0.0 || v > 1.0) {
            fail(ErrorKind::Data, "window: record '" + record.record_id + "' is not normalized to [0,1]");
        }
    }

    std::vector<NormalizedWindow> out;
    const size_t n = record.samples.size();
    out.reserve((n + max_len - 1) / max_len);
    for (size_t start = 0; start < n; start += static_cast<size_t>(max_len)) {
        size_t end = std::min(n, start + static_cast<size_t>(max_len));
        NormalizedWindow w;
        w.samples.assign(record.samples.begin() + static_cast<long>(start),
                         record.samples.begin() + static_cast<long>(end));
        w.record_id = record.record_id;
        w.offset = start;
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace heartbert
