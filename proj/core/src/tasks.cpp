#include "heartbert/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "heartbert/errors.hpp"
#include "heartbert/rng.hpp"

namespace heartbert {

std::string stage_name(SleepStage stage) {
    switch (stage) {
        case SleepStage::Wake: return "Wake";
        case SleepStage::REM: return "REM";
        case SleepStage::S1: return "S1";
        case SleepStage::S2: return "S2";
        case SleepStage::S3: return "S3";
        case SleepStage::S4: return "S4";
    }
    fail(ErrorKind::Parameter, "unknown sleep stage");
}

SleepStage stage_from_name(const std::string& name) {
    if (name == "Wake") return SleepStage::Wake;
    if (name == "REM") return SleepStage::REM;
    if (name == "S1") return SleepStage::S1;
    if (name == "S2") return SleepStage::S2;
    if (name == "S3") return SleepStage::S3;
    if (name == "S4") return SleepStage::S4;
    fail(ErrorKind::Format, "unknown sleep stage name: " + name);
}

int sleep_n_classes(SleepMode mode) { return mode == SleepMode::Three ? 3 : 5; }

const std::vector<std::string>& sleep_class_names(SleepMode mode) {
    static const std::vector<std::string> three = {"Wake", "REM", "NREM"};
    static const std::vector<std::string> five = {"Wake", "REM", "S1", "S2", "S3"};
    return mode == SleepMode::Three ? three : five;
}

int sleep_label(SleepStage stage, SleepMode mode) {
    if (stage == SleepStage::S4) stage = SleepStage::S3;
    if (stage == SleepStage::Wake) return 0;
    if (stage == SleepStage::REM) return 1;
    if (mode == SleepMode::Three) return 2;  // S1-S3 merge into NREM
    switch (stage) {
        case SleepStage::S1: return 2;
        case SleepStage::S2: return 3;
        case SleepStage::S3: return 4;
        default: break;
    }
    fail(ErrorKind::Parameter, "unknown sleep stage");
}

SleepPrepResult prepare_sleep(const std::vector<SleepEpoch>& epochs, SleepMode mode) {
    SleepPrepResult result;
    for (const auto& epoch : epochs) {
        if (epoch.samples.size() != static_cast<size_t>(kEpochSamples)) {
            ++result.rejected_epochs;
            continue;
        }
        const int label = sleep_label(epoch.stage, mode);
        for (int s = 0; s < kEpochSamples / kSegmentSamples; ++s) {
            LabeledSegment seg;
            seg.label = label;
            const auto begin = epoch.samples.begin() + s * kSegmentSamples;
            seg.samples.assign(begin, begin + kSegmentSamples);
            result.segments.push_back(std::move(seg));
        }
    }
    return result;
}

const std::vector<std::string>& heartbeat_class_names() {
    static const std::vector<std::string> names = {"N", "S", "V", "Q"};
    return names;
}

std::vector<LabeledSegment> prepare_heartbeat(const std::vector<double>& samples,
                                              const BeatAnnotation& ann) {
    if (ann.r_peaks.size() < 3) {
        fail(ErrorKind::Data, "heartbeat segmentation needs at least three R-peaks");
    }
    if (ann.labels.size() != ann.r_peaks.size()) {
        fail(ErrorKind::Data, "beat labels are not aligned with the R-peaks");
    }
    const long long n = static_cast<long long>(samples.size());
    for (size_t i = 0; i < ann.r_peaks.size(); ++i) {
        if (ann.r_peaks[i] < 0 || ann.r_peaks[i] >= n) {
            fail(ErrorKind::Data, "R-peak index outside the record");
        }
        if (i > 0 && ann.r_peaks[i] <= ann.r_peaks[i - 1]) {
            fail(ErrorKind::Data, "R-peaks must be strictly increasing");
        }
    }

    std::vector<LabeledSegment> beats;
    for (size_t i = 1; i + 1 < ann.r_peaks.size(); ++i) {
        const long long start = (ann.r_peaks[i - 1] + ann.r_peaks[i]) / 2;
        const long long end = (ann.r_peaks[i] + ann.r_peaks[i + 1]) / 2;
        LabeledSegment seg;
        seg.label = ann.labels[i];
        seg.samples.assign(samples.begin() + start, samples.begin() + end);
        beats.push_back(std::move(seg));
    }
    return beats;
}

BalancedSplit balance_and_split(const std::vector<LabeledSegment>& segments, int n_classes,
                                long long per_class, uint64_t seed, const SplitRatios& ratios) {
    if (n_classes < 2) fail(ErrorKind::Parameter, "balancing needs at least two classes");
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        fail(ErrorKind::Parameter, "split ratios must be non-negative and sum to 1");
    }

    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < segments.size(); ++i) {
        const int label = segments[i].label;
        if (label < 0 || label >= n_classes) {
            fail(ErrorKind::Data, "segment label out of range: " + std::to_string(label));
        }
        by_class[static_cast<size_t>(label)].push_back(i);
    }
    long long min_count = -1;
    for (int c = 0; c < n_classes; ++c) {
        const long long count = static_cast<long long>(by_class[c].size());
        if (count == 0) {
            fail(ErrorKind::Data, "class " + std::to_string(c) + " has no segments to balance");
        }
        min_count = min_count < 0 ? count : std::min(min_count, count);
    }
    if (per_class <= 0) per_class = min_count;
    if (per_class > min_count) {
        fail(ErrorKind::Parameter,
             "per-class target " + std::to_string(per_class) + " exceeds the smallest class (" +
                 std::to_string(min_count) + ")");
    }

    BalancedSplit out;
    out.per_class = per_class;
    const long long n_train = std::llround(ratios.train * static_cast<double>(per_class));
    const long long n_val = std::llround(ratios.val * static_cast<double>(per_class));
    const long long n_test = per_class - n_train - n_val;
    if (n_test < 0) fail(ErrorKind::Parameter, "split ratios round past the class size");

    for (int c = 0; c < n_classes; ++c) {
        auto rng = Rng::substream(seed, "balance", static_cast<uint64_t>(c));
        auto& pool = by_class[static_cast<size_t>(c)];
        rng.shuffle(pool);
        for (long long k = 0; k < per_class; ++k) {
            const auto& seg = segments[pool[static_cast<size_t>(k)]];
            if (k < n_train) {
                out.train.push_back(seg);
            } else if (k < n_train + n_val) {
                out.val.push_back(seg);
            } else {
                out.test.push_back(seg);
            }
        }
    }
    // Interleave the classes so mini-batches are mixed from the start.
    auto mix = [&](std::vector<LabeledSegment>& split, std::string_view name) {
        auto rng = Rng::substream(seed, name);
        rng.shuffle(split);
    };
    mix(out.train, "split:train");
    mix(out.val, "split:val");
    mix(out.test, "split:test");
    return out;
}

namespace {

struct Bump {
    double amplitude;  // relative to the profile amplitude
    double offset_s;   // from the R-peak
    double sigma_s;
};

// P, Q, R, S, T as Gaussian bumps around each R-peak.
constexpr Bump kTemplate[5] = {
    {0.12, -0.20, 0.040},
    {-0.15, -0.035, 0.012},
    {1.00, 0.00, 0.020},
    {-0.20, 0.04, 0.015},
    {0.30, 0.25, 0.070},
};

}  // namespace

std::vector<SynthRecord> synth_corpus(const SynthProfile& profile) {
    if (profile.n_records < 1) fail(ErrorKind::Parameter, "n_records must be >= 1");
    if (profile.rate <= 0 || profile.duration_s <= 0 || profile.base_freq <= 0) {
        fail(ErrorKind::Parameter, "rate, duration, and base frequency must be positive");
    }
    if (profile.noise < 0 || profile.amplitude <= 0 || profile.width_scale <= 0) {
        fail(ErrorKind::Parameter, "noise must be >= 0; amplitude and width positive");
    }

    const long long n_samples = std::llround(profile.duration_s * profile.rate);
    const double period = 1.0 / profile.base_freq;

    std::vector<SynthRecord> records;
    for (int r = 0; r < profile.n_records; ++r) {
        SynthRecord rec;
        rec.record.sampling_rate_hz = profile.rate;
        rec.record.record_id = "synth-" + std::to_string(profile.seed) + "-" + std::to_string(r);
        rec.record.samples.assign(static_cast<size_t>(n_samples), 0.0);

        // Beats sit at (k + 1/2) periods so the first and last templates fit.
        for (int k = 0;; ++k) {
            const double t_peak = (k + 0.5) * period;
            if (t_peak >= profile.duration_s) break;
            rec.r_peaks.push_back(std::llround(t_peak * profile.rate));
            for (const auto& bump : kTemplate) {
                const double sigma = bump.sigma_s * profile.width_scale;
                const double center = t_peak + bump.offset_s * profile.width_scale;
                const long long lo =
                    std::max<long long>(0, std::llround((center - 5 * sigma) * profile.rate));
                const long long hi = std::min<long long>(
                    n_samples, std::llround((center + 5 * sigma) * profile.rate) + 1);
                for (long long i = lo; i < hi; ++i) {
                    const double dt = (static_cast<double>(i) / profile.rate - center) / sigma;
                    rec.record.samples[static_cast<size_t>(i)] +=
                        profile.amplitude * bump.amplitude * std::exp(-0.5 * dt * dt);
                }
            }
        }
        if (!rec.r_peaks.empty() && rec.r_peaks.back() >= n_samples) {
            rec.r_peaks.back() = n_samples - 1;
        }
        if (profile.noise > 0) {
            auto rng = Rng::substream(profile.seed, "synth-noise", static_cast<uint64_t>(r));
            for (auto& s : rec.record.samples) s += rng.normal(0.0, profile.noise);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

SynthProfile profile_for_class(const SynthProfile& base, int class_index) {
    if (class_index < 0) fail(ErrorKind::Parameter, "class index must be >= 0");
    SynthProfile p = base;
    const double c = static_cast<double>(class_index);
    p.amplitude = base.amplitude * (0.6 + 0.35 * c);
    p.width_scale = base.width_scale * (1.0 + 0.12 * c);
    p.base_freq = base.base_freq * (1.0 + 0.08 * c);
    p.seed = base.seed + 1000003ULL * static_cast<uint64_t>(class_index + 1);
    return p;
}

LabeledDataset encode_segments(const std::vector<LabeledSegment>& segments,
                               const QuantizerCodebook& codebook, const BpeTokenizer& tokenizer) {
    LabeledDataset data;
    for (const auto& seg : segments) {
        NormalizedWindow window;
        window.samples = seg.samples;
        auto symbols = encode_symbols(window, codebook);
        data.sequences.push_back(tokenizer.encode(symbols.text));
        data.labels.push_back(seg.label);
    }
    return data;
}

void save_labeled_dataset(const LabeledDataset& data, const std::string& task,
                          const std::string& path, const std::vector<std::string>& provenance) {
    if (data.sequences.size() != data.labels.size()) {
        fail(ErrorKind::Data, "dataset labels/sequences size mismatch");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Parameter, "cannot open " + path + " for writing");
    out << "HBDS v1 task=" << task << "\n";
    for (const auto& line : provenance) out << "#> " << line << "\n";
    for (size_t i = 0; i < data.sequences.size(); ++i) {
        out << data.labels[i] << '\t';
        const auto& ids = data.sequences[i].ids;
        for (size_t j = 0; j < ids.size(); ++j) {
            if (j) out << ' ';
            out << ids[j];
        }
        out << '\n';
    }
    if (!out) fail(ErrorKind::Parameter, "write failed for " + path);
}

LoadedDataset load_labeled_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::MissingArtifact, "dataset not found: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("HBDS v1 task=", 0) != 0) {
        fail(ErrorKind::Format, path + ": expected an 'HBDS v1 task=' header");
    }
    LoadedDataset out;
    out.task = line.substr(std::string("HBDS v1 task=").size());
    if (out.task.empty()) fail(ErrorKind::Format, path + ": empty task name");

    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("#>", 0) == 0) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            fail(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": expected <label>\\t<ids>");
        }
        int label = 0;
        try {
            size_t used = 0;
            label = std::stoi(line.substr(0, tab), &used);
            if (used != tab) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            fail(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": bad label");
        }
        if (label < 0) fail(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": negative label");

        TokenizedSequence seq;
        std::istringstream ids(line.substr(tab + 1));
        int id;
        while (ids >> id) {
            if (id < 0) fail(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": negative id");
            seq.ids.push_back(id);
        }
        if (!ids.eof()) {
            fail(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": bad token id");
        }
        if (seq.ids.empty()) {
            fail(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": empty id list");
        }
        seq.attention_mask.assign(seq.ids.size(), 1);
        out.data.sequences.push_back(std::move(seq));
        out.data.labels.push_back(label);
    }
    return out;
}

void save_beat_annotation(const BeatAnnotation& ann, const std::string& path,
                          const std::vector<std::string>& provenance) {
    if (ann.labels.size() != ann.r_peaks.size()) {
        fail(ErrorKind::Data, "beat labels are not aligned with the R-peaks");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Parameter, "cannot open " + path + " for writing");
    out << "HBPK v1\n";
    for (const auto& line : provenance) out << "#> " << line << "\n";
    for (size_t i = 0; i < ann.r_peaks.size(); ++i) {
        out << ann.r_peaks[i] << '\t' << ann.labels[i] << '\n';
    }
    if (!out) fail(ErrorKind::Parameter, "write failed for " + path);
}

BeatAnnotation load_beat_annotation(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::MissingArtifact, "annotation not found: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "HBPK v1") {
        fail(ErrorKind::Format, path + ": expected an 'HBPK v1' header");
    }
    BeatAnnotation ann;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("#>", 0) == 0) continue;
        long long peak;
        int label;
        std::istringstream row(line);
        if (!(row >> peak >> label)) {
            fail(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": expected <peak>\\t<label>");
        }
        ann.r_peaks.push_back(peak);
        ann.labels.push_back(label);
    }
    return ann;
}

void save_sleep_stages(const std::vector<SleepStage>& stages, const std::string& path,
                       const std::vector<std::string>& provenance) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Parameter, "cannot open " + path + " for writing");
    out << "HBST v1\n";
    for (const auto& line : provenance) out << "#> " << line << "\n";
    for (const auto stage : stages) out << stage_name(stage) << '\n';
    if (!out) fail(ErrorKind::Parameter, "write failed for " + path);
}

std::vector<SleepStage> load_sleep_stages(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::MissingArtifact, "stage file not found: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "HBST v1") {
        fail(ErrorKind::Format, path + ": expected an 'HBST v1' header");
    }
    std::vector<SleepStage> stages;
    while (std::getline(in, line)) {
        if (line.empty() || line.rfind("#>", 0) == 0) continue;
        stages.push_back(stage_from_name(line));
    }
    return stages;
}

}  // namespace heartbert
