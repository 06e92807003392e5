#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heartbert/quantizer.hpp"
#include "heartbert/signal.hpp"
#include "heartbert/tokenizer.hpp"
#include "heartbert/train.hpp"

namespace heartbert {

enum class SleepStage { Wake, REM, S1, S2, S3, S4 };
enum class SleepMode { Three, Five };

inline constexpr int kEpochSamples = 10800;   // 30 s at 360 Hz
inline constexpr int kSegmentSamples = 1080;  // 3 s at 360 Hz

struct SleepEpoch {
    std::vector<double> samples;  // resampled to 360 Hz and normalized
    SleepStage stage = SleepStage::Wake;
};

// One downstream example before tokenization: a raw sample window plus its
// class index (3 s sleep segment, or one beat span for the heartbeat task).
struct LabeledSegment {
    std::vector<double> samples;
    int label = 0;
};

std::string stage_name(SleepStage stage);
SleepStage stage_from_name(const std::string& name);

int sleep_n_classes(SleepMode mode);
const std::vector<std::string>& sleep_class_names(SleepMode mode);

// Stage -> class index. S4 always folds into S3 (AASM); three-stage mode
// additionally merges S1-S3 into one NREM class.
int sleep_label(SleepStage stage, SleepMode mode);

struct SleepPrepResult {
    std::vector<LabeledSegment> segments;
    size_t rejected_epochs = 0;  // epochs whose sample count is not 10,800
};

// Each well-formed 30 s epoch yields ten 1,080-sample segments inheriting
// the epoch's (mode-mapped) label. Malformed epochs are counted, not fatal.
SleepPrepResult prepare_sleep(const std::vector<SleepEpoch>& epochs, SleepMode mode);

struct BeatAnnotation {
    std::vector<long long> r_peaks;  // strictly increasing sample indices
    std::vector<int> labels;         // one class index per peak
};

const std::vector<std::string>& heartbeat_class_names();  // N, S, V, Q

// Beat i spans [floor((r[i-1]+r[i])/2), floor((r[i]+r[i+1])/2)) and carries
// peak i's label; the first and last beats lack a midpoint on one side and
// are dropped. Consecutive spans tile the region between the outer midpoints.
std::vector<LabeledSegment> prepare_heartbeat(const std::vector<double>& samples,
                                              const BeatAnnotation& ann);

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct BalancedSplit {
    std::vector<LabeledSegment> train;
    std::vector<LabeledSegment> val;
    std::vector<LabeledSegment> test;
    long long per_class = 0;  // the count every class was undersampled to
};

// Random undersampling to `per_class` examples per class (<= 0 selects the
// minimum class count), then a stratified split. Deterministic under `seed`.
BalancedSplit balance_and_split(const std::vector<LabeledSegment>& segments, int n_classes,
                                long long per_class, uint64_t seed,
                                const SplitRatios& ratios = {});

// ---------------------------------------------------------------------------
// Synthetic ECG. A PQRST template (five Gaussian bumps) repeats at base_freq
// with additive Gaussian noise; R-peak positions are exact by construction.

struct SynthProfile {
    int n_records = 1;
    double rate = 360.0;      // samples per second
    double duration_s = 30.0;
    double base_freq = 1.0;   // beats per second
    double noise = 0.01;      // sample noise standard deviation
    double amplitude = 1.0;
    double width_scale = 1.0;
    uint64_t seed = 0;
};

struct SynthRecord {
    EcgRecord record;
    std::vector<long long> r_peaks;  // ground-truth peak sample indices
};

std::vector<SynthRecord> synth_corpus(const SynthProfile& profile);

// Deterministic per-class variant: distinct amplitude band, slightly wider
// waves, and a faster beat for higher class indices, plus a decorrelated
// noise seed.
SynthProfile profile_for_class(const SynthProfile& base, int class_index);

// Raw segments -> codebook symbols -> token ids, labels carried through.
LabeledDataset encode_segments(const std::vector<LabeledSegment>& segments,
                               const QuantizerCodebook& codebook, const BpeTokenizer& tokenizer);

// Dataset files: "HBDS v1 task=<name>" header, "#>" provenance lines, then
// one "<label>\t<token ids space-separated>" line per example.
void save_labeled_dataset(const LabeledDataset& data, const std::string& task,
                          const std::string& path,
                          const std::vector<std::string>& provenance = {});

struct LoadedDataset {
    LabeledDataset data;
    std::string task;
};
LoadedDataset load_labeled_dataset(const std::string& path);

// Annotation sidecars. Peaks: "HBPK v1" + "<peak>\t<label>" lines.
// Stages: "HBST v1" + one stage name per line.
void save_beat_annotation(const BeatAnnotation& ann, const std::string& path,
                          const std::vector<std::string>& provenance = {});
BeatAnnotation load_beat_annotation(const std::string& path);
void save_sleep_stages(const std::vector<SleepStage>& stages, const std::string& path,
                       const std::vector<std::string>& provenance = {});
std::vector<SleepStage> load_sleep_stages(const std::string& path);

}  // namespace heartbert
