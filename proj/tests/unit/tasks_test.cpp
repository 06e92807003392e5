#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "heartbert/errors.hpp"
#include "heartbert/quantizer.hpp"
#include "heartbert/rng.hpp"
#include "heartbert/tasks.hpp"
#include "heartbert/tokenizer.hpp"

using namespace heartbert;

namespace {

SleepEpoch ramp_epoch(SleepStage stage, double base = 0.0) {
    SleepEpoch e;
    e.stage = stage;
    e.samples.resize(kEpochSamples);
    for (int i = 0; i < kEpochSamples; ++i) {
        e.samples[i] = base + static_cast<double>(i) / kEpochSamples;
    }
    return e;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("sleep stage label mapping") {
    CHECK(sleep_n_classes(SleepMode::Three) == 3);
    CHECK(sleep_n_classes(SleepMode::Five) == 5);
    CHECK(sleep_class_names(SleepMode::Three) == std::vector<std::string>{"Wake", "REM", "NREM"});
    CHECK(sleep_class_names(SleepMode::Five) ==
          std::vector<std::string>{"Wake", "REM", "S1", "S2", "S3"});

    // Three-stage: S1-S4 all collapse into NREM.
    CHECK(sleep_label(SleepStage::Wake, SleepMode::Three) == 0);
    CHECK(sleep_label(SleepStage::REM, SleepMode::Three) == 1);
    for (auto s : {SleepStage::S1, SleepStage::S2, SleepStage::S3, SleepStage::S4}) {
        CHECK(sleep_label(s, SleepMode::Three) == 2);
    }
    // Five-stage: S4 folds into S3, the rest stay distinct.
    CHECK(sleep_label(SleepStage::Wake, SleepMode::Five) == 0);
    CHECK(sleep_label(SleepStage::REM, SleepMode::Five) == 1);
    CHECK(sleep_label(SleepStage::S1, SleepMode::Five) == 2);
    CHECK(sleep_label(SleepStage::S2, SleepMode::Five) == 3);
    CHECK(sleep_label(SleepStage::S3, SleepMode::Five) == 4);
    CHECK(sleep_label(SleepStage::S4, SleepMode::Five) == 4);

    CHECK(stage_from_name("S4") == SleepStage::S4);
    CHECK(stage_name(SleepStage::REM) == "REM");
    CHECK_THROWS_AS(stage_from_name("S9"), Error);
}

TEST_CASE("a 30 s epoch becomes ten 3 s segments that conserve every sample") {
    auto prep = prepare_sleep({ramp_epoch(SleepStage::S2)}, SleepMode::Three);
    CHECK(prep.rejected_epochs == 0);
    REQUIRE(prep.segments.size() == 10);

    std::vector<double> glued;
    for (const auto& seg : prep.segments) {
        REQUIRE(seg.samples.size() == static_cast<size_t>(kSegmentSamples));
        CHECK(seg.label == 2);
        glued.insert(glued.end(), seg.samples.begin(), seg.samples.end());
    }
    CHECK(glued == ramp_epoch(SleepStage::S2).samples);
    // Segment s must start exactly at sample 1080*s — no boundary crossing.
    for (size_t s = 0; s < 10; ++s) {
        CHECK(prep.segments[s].samples.front() ==
              static_cast<double>(s * kSegmentSamples) / kEpochSamples);
    }
}

TEST_CASE("malformed epochs are counted and skipped, not fatal") {
    auto good = ramp_epoch(SleepStage::Wake);
    SleepEpoch shorter;
    shorter.stage = SleepStage::REM;
    shorter.samples.assign(kEpochSamples - 1, 0.5);
    SleepEpoch longer;
    longer.stage = SleepStage::REM;
    longer.samples.assign(kEpochSamples + 360, 0.5);

    auto prep = prepare_sleep({shorter, good, longer}, SleepMode::Five);
    CHECK(prep.rejected_epochs == 2);
    CHECK(prep.segments.size() == 10);
    CHECK(prep.segments.front().label == 0);
}

TEST_CASE("heartbeat segmentation hand cases") {
    std::vector<double> record(1000);
    for (size_t i = 0; i < record.size(); ++i) record[i] = static_cast<double>(i);

    // Three peaks: only the middle beat has midpoints on both sides.
    auto beats = prepare_heartbeat(record, {{100, 300, 500}, {0, 2, 1}});
    REQUIRE(beats.size() == 1);
    CHECK(beats[0].label == 2);
    CHECK(beats[0].samples.size() == 200);
    CHECK(beats[0].samples.front() == 200.0);
    CHECK(beats[0].samples.back() == 399.0);

    // Four peaks: two interior beats, contiguous at sample 400.
    auto two = prepare_heartbeat(record, {{100, 300, 500, 900}, {3, 0, 1, 2}});
    REQUIRE(two.size() == 2);
    CHECK(two[0].samples.front() == 200.0);
    CHECK(two[0].samples.size() == 200);
    CHECK(two[1].samples.front() == 400.0);
    CHECK(two[1].samples.size() == 300);
    CHECK(two[0].label == 0);
    CHECK(two[1].label == 1);
}

TEST_CASE("heartbeat segments partition the span between the outer midpoints") {
    for (uint64_t trial = 0; trial < 200; ++trial) {
        auto rng = Rng::substream(trial, "peaks");
        const size_t n_peaks = 3 + rng.uniform_index(38);
        BeatAnnotation ann;
        long long pos = static_cast<long long>(rng.uniform_index(100));
        for (size_t i = 0; i < n_peaks; ++i) {
            ann.r_peaks.push_back(pos);
            ann.labels.push_back(static_cast<int>(rng.uniform_index(4)));
            pos += 50 + static_cast<long long>(rng.uniform_index(350));
        }
        std::vector<double> record(static_cast<size_t>(ann.r_peaks.back() + 1 +
                                                        rng.uniform_index(100)));
        for (size_t i = 0; i < record.size(); ++i) record[i] = static_cast<double>(i);

        auto beats = prepare_heartbeat(record, ann);
        REQUIRE(beats.size() == n_peaks - 2);

        const long long first_mid = (ann.r_peaks[0] + ann.r_peaks[1]) / 2;
        const long long last_mid = (ann.r_peaks[n_peaks - 2] + ann.r_peaks[n_peaks - 1]) / 2;
        long long cursor = first_mid;
        long long covered = 0;
        for (size_t i = 0; i < beats.size(); ++i) {
            REQUIRE(!beats[i].samples.empty());
            // Samples are their own indices, so coverage is directly visible.
            REQUIRE(beats[i].samples.front() == static_cast<double>(cursor));
            cursor += static_cast<long long>(beats[i].samples.size());
            covered += static_cast<long long>(beats[i].samples.size());
            REQUIRE(beats[i].label == ann.labels[i + 1]);
        }
        REQUIRE(cursor == last_mid);
        REQUIRE(covered == last_mid - first_mid);
    }
}

TEST_CASE("heartbeat segmentation rejects bad annotations") {
    std::vector<double> record(1000, 0.0);
    CHECK_THROWS_AS(prepare_heartbeat(record, {{100, 300}, {0, 1}}), Error);
    CHECK_THROWS_AS(prepare_heartbeat(record, {{100, 300, 200}, {0, 1, 2}}), Error);
    CHECK_THROWS_AS(prepare_heartbeat(record, {{100, 300, 300}, {0, 1, 2}}), Error);
    CHECK_THROWS_AS(prepare_heartbeat(record, {{100, 300, 500}, {0, 1}}), Error);
    CHECK_THROWS_AS(prepare_heartbeat(record, {{100, 300, 1500}, {0, 1, 2}}), Error);
    CHECK_THROWS_AS(prepare_heartbeat(record, {{-5, 300, 500}, {0, 1, 2}}), Error);
}

TEST_CASE("balancing reproduces the published sleep totals") {
    // Three-stage class counts Wake 31,030 / REM 7,000 / NREM 63,600:
    // the minority class pins the balanced total at 3 x 7,000 = 21,000.
    std::vector<LabeledSegment> three;
    auto add = [](std::vector<LabeledSegment>& v, int label, long long count) {
        for (long long i = 0; i < count; ++i) {
            LabeledSegment s;
            s.label = label;
            s.samples = {static_cast<double>(v.size())};  // unique identity tag
            v.push_back(std::move(s));
        }
    };
    add(three, 0, 31030);
    add(three, 1, 7000);
    add(three, 2, 63600);
    auto split3 = balance_and_split(three, 3, 0, 42);
    CHECK(split3.per_class == 7000);
    CHECK(split3.train.size() + split3.val.size() + split3.test.size() == 21000);
    CHECK(split3.train.size() == 14700);  // 3 x 4,900
    CHECK(split3.val.size() == 2100);     // 3 x 700
    CHECK(split3.test.size() == 4200);    // 3 x 1,400

    // Five-stage: the smallest class holds 6,630 segments -> 5 x 6,630.
    std::vector<LabeledSegment> five;
    add(five, 0, 9200);
    add(five, 1, 7100);
    add(five, 2, 8300);
    add(five, 3, 11000);
    add(five, 4, 6630);
    auto split5 = balance_and_split(five, 5, 0, 42);
    CHECK(split5.per_class == 6630);
    CHECK(split5.train.size() + split5.val.size() + split5.test.size() == 33150);

    // Heartbeat target: 5,000 beats from each of the four classes.
    std::vector<LabeledSegment> beats;
    for (int c = 0; c < 4; ++c) add(beats, c, 5000 + 137 * c);
    auto split4 = balance_and_split(beats, 4, 5000, 42);
    CHECK(split4.per_class == 5000);
    CHECK(split4.train.size() + split4.val.size() + split4.test.size() == 20000);
}

TEST_CASE("splits are stratified, disjoint, exhaustive, and seeded") {
    std::vector<LabeledSegment> segments;
    for (int i = 0; i < 2500; ++i) {
        LabeledSegment s;
        s.label = i % 2 == 0 ? (i % 3 == 0 ? 2 : 0) : 1;
        s.samples = {static_cast<double>(i)};
        segments.push_back(std::move(s));
    }
    auto split = balance_and_split(segments, 3, 400, 9);
    CHECK(split.per_class == 400);
    CHECK(split.train.size() == 840);  // 3 x 280
    CHECK(split.val.size() == 120);    // 3 x 40
    CHECK(split.test.size() == 240);   // 3 x 80

    // Per-class histograms are uniform inside every split.
    auto histogram = [](const std::vector<LabeledSegment>& v) {
        std::map<int, long long> h;
        for (const auto& s : v) ++h[s.label];
        return h;
    };
    for (auto& [label, count] : histogram(split.train)) CHECK(count == 280);
    for (auto& [label, count] : histogram(split.val)) CHECK(count == 40);
    for (auto& [label, count] : histogram(split.test)) CHECK(count == 80);

    // The identity tags prove disjointness and exhaustion of the balanced set.
    std::set<double> seen;
    size_t total = 0;
    for (const auto* part : {&split.train, &split.val, &split.test}) {
        for (const auto& s : *part) {
            CHECK(seen.insert(s.samples[0]).second);  // never twice
            ++total;
        }
    }
    CHECK(total == 1200);

    auto again = balance_and_split(segments, 3, 400, 9);
    auto tags = [](const std::vector<LabeledSegment>& v) {
        std::vector<double> t;
        for (const auto& s : v) t.push_back(s.samples[0]);
        return t;
    };
    CHECK(tags(again.train) == tags(split.train));
    CHECK(tags(again.val) == tags(split.val));
    CHECK(tags(again.test) == tags(split.test));

    auto other = balance_and_split(segments, 3, 400, 10);
    CHECK(tags(other.train) != tags(split.train));
}

TEST_CASE("balancing validates classes and targets") {
    std::vector<LabeledSegment> segments;
    for (int i = 0; i < 10; ++i) {
        LabeledSegment s;
        s.label = i % 2;
        s.samples = {0.0};
        segments.push_back(std::move(s));
    }
    CHECK_THROWS_AS(balance_and_split(segments, 3, 0, 1), Error);   // class 2 missing
    CHECK_THROWS_AS(balance_and_split(segments, 2, 6, 1), Error);   // 6 > min count 5
    CHECK_THROWS_AS(balance_and_split(segments, 1, 0, 1), Error);   // degenerate class count
    CHECK_THROWS_AS(balance_and_split({}, 2, 0, 1), Error);
    auto ok = balance_and_split(segments, 2, 5, 1);
    CHECK(ok.train.size() + ok.val.size() + ok.test.size() == 10);
}

TEST_CASE("synthetic ECG: ten peaks at 60 bpm for 10 s, deterministic") {
    SynthProfile profile;
    profile.rate = 250.0;
    profile.duration_s = 10.0;
    profile.base_freq = 1.0;  // 60 bpm
    profile.seed = 77;
    auto records = synth_corpus(profile);
    REQUIRE(records.size() == 1);
    REQUIRE(records[0].r_peaks.size() == 10);
    for (size_t k = 0; k < 10; ++k) {
        CHECK(records[0].r_peaks[k] == std::llround((k + 0.5) * 250.0));
    }
    CHECK(records[0].record.samples.size() == 2500);
    CHECK(records[0].record.sampling_rate_hz == 250.0);

    auto again = synth_corpus(profile);
    CHECK(again[0].record.samples == records[0].record.samples);
    CHECK(again[0].r_peaks == records[0].r_peaks);

    SynthProfile other = profile;
    other.seed = 78;
    CHECK(synth_corpus(other)[0].record.samples != records[0].record.samples);

    // The R bump towers over its neighbours at every ground-truth peak.
    SynthProfile clean = profile;
    clean.noise = 0.0;
    auto pure = synth_corpus(clean);
    for (long long peak : pure[0].r_peaks) {
        CHECK(pure[0].record.samples[static_cast<size_t>(peak)] ==
              doctest::Approx(1.0).epsilon(0.05));
    }

    CHECK_THROWS_AS(synth_corpus(SynthProfile{0}), Error);
}

TEST_CASE("class profiles separate under a nearest-centroid baseline") {
    SynthProfile base;
    base.n_records = 6;
    base.rate = 360.0;
    base.duration_s = 20.0;
    base.base_freq = 1.2;
    base.noise = 0.02;
    base.seed = 5;

    // Collect per-beat peak heights for two class variants.
    std::vector<std::pair<double, int>> features;  // (max |sample|, class)
    for (int c = 0; c < 2; ++c) {
        auto profile = profile_for_class(base, c);
        for (const auto& rec : synth_corpus(profile)) {
            BeatAnnotation ann;
            ann.r_peaks = rec.r_peaks;
            ann.labels.assign(rec.r_peaks.size(), c);
            for (const auto& beat : prepare_heartbeat(rec.record.samples, ann)) {
                double peak = 0.0;
                for (double s : beat.samples) peak = std::max(peak, std::abs(s));
                features.emplace_back(peak, c);
            }
        }
    }
    REQUIRE(features.size() > 100);

    // Train on even beats, score odd beats with a 1-D nearest centroid.
    double centroid[2] = {0.0, 0.0};
    long long count[2] = {0, 0};
    for (size_t i = 0; i < features.size(); i += 2) {
        centroid[features[i].second] += features[i].first;
        ++count[features[i].second];
    }
    REQUIRE(count[0] > 0);
    REQUIRE(count[1] > 0);
    centroid[0] /= static_cast<double>(count[0]);
    centroid[1] /= static_cast<double>(count[1]);

    long long correct = 0, held_out = 0;
    for (size_t i = 1; i < features.size(); i += 2) {
        const int pred = std::abs(features[i].first - centroid[0]) <=
                                 std::abs(features[i].first - centroid[1])
                             ? 0
                             : 1;
        if (pred == features[i].second) ++correct;
        ++held_out;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(held_out) >= 0.95);
}

TEST_CASE("segments encode to labeled token sequences") {
    // A 4-level codebook over uniform data and a merge-free tokenizer.
    auto rng = Rng::substream(4, "uniform");
    std::vector<double> samples(20000);
    for (auto& s : samples) s = rng.uniform();
    QuantizerOptions qopts;
    qopts.levels = 4;
    auto codebook = train_codebook(samples, qopts);

    std::vector<std::string> corpus;
    for (int i = 0; i < 8; ++i) {
        std::string text;
        for (int j = 0; j < 30; ++j) {
            text.push_back(static_cast<char>(codebook.alphabet[(i + j) % 4]));
        }
        corpus.push_back(text);
    }
    auto tokenizer = train_bpe(corpus, codebook.alphabet, 9, 512);  // 5 specials + 4 symbols

    std::vector<LabeledSegment> segments(2);
    segments[0].label = 1;
    segments[0].samples = {0.1, 0.4, 0.6, 0.9, 0.2};
    segments[1].label = 0;
    segments[1].samples = {0.5, 0.5};
    auto data = encode_segments(segments, codebook, tokenizer);
    REQUIRE(data.sequences.size() == 2);
    CHECK(data.labels == std::vector<int>{1, 0});
    CHECK(data.sequences[0].ids.size() == 7);  // BOS + 5 symbols + EOS
    CHECK(data.sequences[0].ids.front() == BpeTokenizer::kBosId);
    CHECK(data.sequences[0].ids.back() == BpeTokenizer::kEosId);
    for (size_t i = 1; i + 1 < data.sequences[0].ids.size(); ++i) {
        CHECK(data.sequences[0].ids[i] >= BpeTokenizer::kFirstAlphabetId);
    }

    const std::string path = "dataset_test.txt";
    save_labeled_dataset(data, "heartbeat4", path, {"codebook_sha=aa", "tokenizer_sha=bb"});
    save_labeled_dataset(data, "heartbeat4", "dataset_test_2.txt",
                         {"codebook_sha=aa", "tokenizer_sha=bb"});
    CHECK(slurp(path) == slurp("dataset_test_2.txt"));

    auto loaded = load_labeled_dataset(path);
    CHECK(loaded.task == "heartbeat4");
    REQUIRE(loaded.data.size() == 2);
    CHECK(loaded.data.labels == data.labels);
    CHECK(loaded.data.sequences[0].ids == data.sequences[0].ids);
    CHECK(loaded.data.sequences[1].ids == data.sequences[1].ids);
    CHECK(loaded.data.sequences[0].attention_mask ==
          std::vector<int>(data.sequences[0].ids.size(), 1));

    std::remove(path.c_str());
    std::remove("dataset_test_2.txt");

    std::ofstream bad("dataset_bad.txt");
    bad << "HBDS v2 task=x\n";
    bad.close();
    CHECK_THROWS_AS(load_labeled_dataset("dataset_bad.txt"), Error);
    std::ofstream bad2("dataset_bad.txt");
    bad2 << "HBDS v1 task=x\n0 5 6\n";  // space instead of tab
    bad2.close();
    CHECK_THROWS_AS(load_labeled_dataset("dataset_bad.txt"), Error);
    std::remove("dataset_bad.txt");
    CHECK_THROWS_AS(load_labeled_dataset("missing_dataset.txt"), Error);
}

TEST_CASE("annotation sidecars round-trip") {
    BeatAnnotation ann;
    ann.r_peaks = {120, 480, 910, 1260};
    ann.labels = {0, 1, 3, 2};
    save_beat_annotation(ann, "ann_test.txt", {"record=synth-0"});
    auto loaded = load_beat_annotation("ann_test.txt");
    CHECK(loaded.r_peaks == ann.r_peaks);
    CHECK(loaded.labels == ann.labels);
    std::remove("ann_test.txt");

    std::vector<SleepStage> stages = {SleepStage::Wake, SleepStage::S4, SleepStage::REM,
                                      SleepStage::S2};
    save_sleep_stages(stages, "stages_test.txt");
    CHECK(load_sleep_stages("stages_test.txt") == stages);
    std::remove("stages_test.txt");

    CHECK_THROWS_AS(load_beat_annotation("missing_ann.txt"), Error);
    CHECK_THROWS_AS(load_sleep_stages("missing_stages.txt"), Error);
}
