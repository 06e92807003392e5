// heartbert — command-line front end for the ECG language pipeline.
//
// Stages communicate only through artifact files. Every artifact embeds the
// sha256 of the configuration it was produced under plus the hashes of its
// direct inputs, so a finished run can be audited end to end. Re-running a
// command with the same inputs and seed rewrites each artifact byte for byte.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "heartbert/checkpoint.hpp"
#include "heartbert/config.hpp"
#include "heartbert/errors.hpp"
#include "heartbert/hybrid.hpp"
#include "heartbert/metrics.hpp"
#include "heartbert/model.hpp"
#include "heartbert/quantizer.hpp"
#include "heartbert/sha256.hpp"
#include "heartbert/signal.hpp"
#include "heartbert/tasks.hpp"
#include "heartbert/tokenizer.hpp"
#include "heartbert/train.hpp"

namespace fs = std::filesystem;
using namespace heartbert;

namespace {

// ---------------------------------------------------------------------------
// Small shared helpers

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string with_commas(long long v) {
    const std::string raw = std::to_string(v);
    std::string out;
    const size_t head = raw.size() % 3 ? raw.size() % 3 : 3;
    for (size_t i = 0; i < raw.size(); ++i) {
        if (i >= head && (i - head) % 3 == 0) out += ',';
        out += raw[i];
    }
    return out;
}

PipelineConfig load_cli_config(const std::string& path) {
    return path.empty() ? parse_config("") : load_config(path);
}

std::string config_sha(const PipelineConfig& config) {
    return Sha256::hex_digest(config_to_text(config));
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) fail(ErrorKind::MissingArtifact, what + " not found: " + path);
}

std::string file_sha(const std::string& path, const std::string& what) {
    require_file(path, what);
    return Sha256::hex_digest_file(path);
}

// Provenance lines for an artifact: the config hash first, then one line per
// upstream artifact as `<label>_sha256=<hex>`.
std::vector<std::string> provenance(const PipelineConfig& config,
                                    const std::vector<std::pair<std::string, std::string>>& inputs) {
    std::vector<std::string> lines;
    lines.push_back("config_sha256=" + config_sha(config));
    for (const auto& [label, path] : inputs) {
        lines.push_back(label + "_sha256=" + file_sha(path, label));
    }
    return lines;
}

// Checkpoint sidecars take a key=value map instead of comment lines.
std::map<std::string, std::string> provenance_meta(
    const PipelineConfig& config,
    const std::vector<std::pair<std::string, std::string>>& inputs) {
    std::map<std::string, std::string> meta;
    for (const auto& line : provenance(config, inputs)) {
        const auto eq = line.find('=');
        meta["provenance." + line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

// ---------------------------------------------------------------------------
// Tool-side artifact formats. Windows and corpora are line-oriented text with
// a magic first line and `#> ` provenance comments, like the core formats.

constexpr const char* kWindowsMagic = "HBWIN v1";
constexpr const char* kCorpusMagic = "HBCORP v1";
constexpr const char* kManifestMagic = "HBMAN v1";

void save_windows(const std::vector<NormalizedWindow>& windows, const std::string& path,
                  const std::vector<std::string>& prov) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::MissingArtifact, "cannot write: " + path);
    out << kWindowsMagic << "\n";
    for (const auto& line : prov) out << "#> " << line << "\n";
    for (const auto& w : windows) {
        out << w.record_id << '\t' << w.offset << '\t';
        for (size_t i = 0; i < w.samples.size(); ++i) {
            if (i) out << ' ';
            out << fmt17(w.samples[i]);
        }
        out << '\n';
    }
}

std::vector<NormalizedWindow> load_windows(const std::string& path) {
    require_file(path, "windows file");
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || line != kWindowsMagic) {
        fail(ErrorKind::Format, "not a windows file (expected '" + std::string(kWindowsMagic) +
                                    "'): " + path);
    }
    std::vector<NormalizedWindow> windows;
    while (std::getline(in, line)) {
        if (line.rfind("#>", 0) == 0) continue;
        if (line.empty()) continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) fail(ErrorKind::Format, "malformed window line in " + path);
        NormalizedWindow w;
        w.record_id = line.substr(0, tab1);
        w.offset = std::stoull(line.substr(tab1 + 1, tab2 - tab1 - 1));
        std::istringstream samples(line.substr(tab2 + 1));
        double v = 0.0;
        while (samples >> v) {
            if (v < 0.0 || v > 1.0) {
                fail(ErrorKind::Data, "window sample outside [0, 1] in " + path);
            }
            w.samples.push_back(v);
        }
        if (w.samples.empty()) fail(ErrorKind::Format, "empty window in " + path);
        windows.push_back(std::move(w));
    }
    return windows;
}

void save_corpus(const std::vector<std::string>& lines, const std::string& path,
                 const std::vector<std::string>& prov) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::MissingArtifact, "cannot write: " + path);
    out << kCorpusMagic << "\n";
    for (const auto& line : prov) out << "#> " << line << "\n";
    for (const auto& line : lines) out << line << '\n';
}

std::vector<std::string> load_corpus(const std::string& path) {
    require_file(path, "corpus file");
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || line != kCorpusMagic) {
        fail(ErrorKind::Format,
             "not a corpus file (expected '" + std::string(kCorpusMagic) + "'): " + path);
    }
    std::vector<std::string> lines;
    while (std::getline(in, line)) {
        if (line.rfind("#>", 0) == 0) continue;
        if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty()) fail(ErrorKind::Data, "corpus has no sequences: " + path);
    return lines;
}

struct ManifestEntry {
    std::string file;  // relative to the manifest's directory
    int class_index = 0;
    std::string sha256;
};

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path,
                   const std::vector<std::string>& prov) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::MissingArtifact, "cannot write: " + path);
    out << kManifestMagic << "\n";
    for (const auto& line : prov) out << "#> " << line << "\n";
    for (const auto& e : entries) {
        out << e.file << '\t' << e.class_index << '\t' << e.sha256 << '\n';
    }
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    require_file(path, "manifest");
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || line != kManifestMagic) {
        fail(ErrorKind::Format,
             "not a manifest (expected '" + std::string(kManifestMagic) + "'): " + path);
    }
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.rfind("#>", 0) == 0 || line.empty()) continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) fail(ErrorKind::Format, "malformed manifest line in " + path);
        ManifestEntry e;
        e.file = line.substr(0, tab1);
        e.class_index = std::stoi(line.substr(tab1 + 1, tab2 - tab1 - 1));
        e.sha256 = line.substr(tab2 + 1);
        entries.push_back(std::move(e));
    }
    if (entries.empty()) fail(ErrorKind::Data, "manifest lists no records: " + path);
    return entries;
}

// ---------------------------------------------------------------------------
// Task plumbing shared by prepare-task and evaluate

SleepStage stage_for_class(int class_index, SleepMode mode) {
    static const std::vector<SleepStage> three = {SleepStage::Wake, SleepStage::REM,
                                                  SleepStage::S2};
    static const std::vector<SleepStage> five = {SleepStage::Wake, SleepStage::REM, SleepStage::S1,
                                                 SleepStage::S2, SleepStage::S3};
    const auto& table = mode == SleepMode::Three ? three : five;
    if (class_index < 0 || class_index >= static_cast<int>(table.size())) {
        fail(ErrorKind::Data, "synthetic class " + std::to_string(class_index) +
                                  " has no sleep-stage mapping in this task");
    }
    return table[static_cast<size_t>(class_index)];
}

std::vector<std::string> class_names_for_task(const std::string& task) {
    if (task == "sleep3") return sleep_class_names(SleepMode::Three);
    if (task == "sleep5") return sleep_class_names(SleepMode::Five);
    if (task == "heartbeat4") return heartbeat_class_names();
    return {};
}

std::vector<int> predict_dataset(const HybridModel<float>& model, const LabeledDataset& data,
                                 int batch_size) {
    std::vector<int> predictions;
    predictions.reserve(data.size());
    for (size_t begin = 0; begin < data.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(data.size(), begin + static_cast<size_t>(batch_size));
        size_t seq = 0;
        for (size_t i = begin; i < end; ++i) seq = std::max(seq, data.sequences[i].ids.size());
        BatchIds batch;
        batch.batch = end - begin;
        batch.seq = seq;
        batch.ids.assign(batch.rows(), BpeTokenizer::kPadId);
        batch.attention_mask.assign(batch.rows(), 0);
        for (size_t i = begin; i < end; ++i) {
            const auto& s = data.sequences[i];
            const size_t row = (i - begin) * seq;
            for (size_t j = 0; j < s.ids.size(); ++j) {
                batch.ids[row + j] = s.ids[j];
                batch.attention_mask[row + j] = s.attention_mask[j];
            }
        }
        for (int p : model.predict(batch)) predictions.push_back(p);
    }
    return predictions;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const PipelineConfig& config, const std::string& out_dir) {
    Timer timer;
    fs::create_directories(out_dir);
    const auto prov = provenance(config, {});
    std::vector<ManifestEntry> entries;
    int written = 0;
    for (int c = 0; c < config.synth_classes; ++c) {
        const SynthProfile profile = profile_for_class(config.synth, c);
        const auto records = synth_corpus(profile);
        for (size_t r = 0; r < records.size(); ++r) {
            const std::string base = "class" + std::to_string(c) + "-rec" + std::to_string(r);
            const std::string rec_path = out_dir + "/" + base + ".csv";
            save_record(records[r].record, rec_path, SignalFormat::Csv, prov);
            BeatAnnotation ann;
            ann.r_peaks = records[r].r_peaks;
            ann.labels.assign(ann.r_peaks.size(), c);
            save_beat_annotation(ann, out_dir + "/" + base + ".peaks", prov);
            entries.push_back({base + ".csv", c, file_sha(rec_path, "record")});
            ++written;
        }
    }
    save_manifest(entries, out_dir + "/manifest.txt", prov);
    std::printf("synth: wrote %d records (%d classes) to %s (%.1f s)\n", written,
                config.synth_classes, out_dir.c_str(), timer.seconds());
    return 0;
}

int cmd_ingest(const PipelineConfig& config, const std::vector<std::string>& inputs,
               const std::string& manifest_path, const std::string& out) {
    Timer timer;
    std::vector<std::string> record_paths;
    std::vector<std::pair<std::string, std::string>> prov_inputs;
    if (!manifest_path.empty()) {
        const fs::path dir = fs::path(manifest_path).parent_path();
        for (const auto& e : load_manifest(manifest_path)) {
            record_paths.push_back((dir / e.file).string());
        }
        prov_inputs.push_back({"manifest", manifest_path});
    }
    for (const auto& p : inputs) {
        record_paths.push_back(p);
        prov_inputs.push_back({"record", p});
    }
    if (record_paths.empty()) {
        fail(ErrorKind::Config, "ingest needs --in files or a --manifest");
    }
    std::vector<NormalizedWindow> windows;
    for (const auto& path : record_paths) {
        require_file(path, "record");
        const EcgRecord raw = load_record_auto(path);
        const EcgRecord resampled = resample(raw, config.signal_target_hz);
        const EcgRecord normalized = normalize(resampled);
        for (auto& w : window(normalized, config.signal_window)) {
            windows.push_back(std::move(w));
        }
    }
    save_windows(windows, out, provenance(config, prov_inputs));
    std::printf("ingest: %zu windows from %zu records -> %s (%.1f s)\n", windows.size(),
                record_paths.size(), out.c_str(), timer.seconds());
    return 0;
}

int cmd_train_quantizer(const PipelineConfig& config, const std::string& windows_path,
                        const std::string& out) {
    Timer timer;
    const auto windows = load_windows(windows_path);
    std::vector<double> samples;
    for (const auto& w : windows) {
        samples.insert(samples.end(), w.samples.begin(), w.samples.end());
    }
    const QuantizerCodebook codebook = train_codebook(samples, config.quantizer);
    ensure_parent_dir(out);
    save_codebook(codebook, out, provenance(config, {{"windows", windows_path}}));
    std::printf("train-quantizer: %d levels on %zu samples, distortion %.6g -> %s (%.1f s)\n",
                codebook.levels, samples.size(), codebook.training_distortion, out.c_str(),
                timer.seconds());
    return 0;
}

int cmd_prepare_corpus(const PipelineConfig& config, const std::string& windows_path,
                       const std::string& codebook_path, const std::string& out) {
    Timer timer;
    const auto windows = load_windows(windows_path);
    const QuantizerCodebook codebook = load_codebook(codebook_path);
    std::vector<std::string> lines;
    lines.reserve(windows.size());
    for (const auto& w : windows) lines.push_back(encode_symbols(w, codebook).text);
    save_corpus(lines, out,
                provenance(config, {{"windows", windows_path}, {"codebook", codebook_path}}));
    std::printf("prepare-corpus: %zu sequences -> %s (%.1f s)\n", lines.size(), out.c_str(),
                timer.seconds());
    return 0;
}

int cmd_train_tokenizer(const PipelineConfig& config, const std::string& corpus_path,
                        const std::string& codebook_path, const std::string& out_vocab,
                        const std::string& out_merges) {
    Timer timer;
    const auto corpus = load_corpus(corpus_path);
    const QuantizerCodebook codebook = load_codebook(codebook_path);
    const BpeTokenizer tokenizer = train_bpe(corpus, codebook.alphabet, config.tokenizer_vocab_size,
                                             config.tokenizer_max_seq_len);
    ensure_parent_dir(out_vocab);
    ensure_parent_dir(out_merges);
    tokenizer.save(out_vocab, out_merges,
                   provenance(config, {{"corpus", corpus_path}, {"codebook", codebook_path}}));
    const auto stats = tokenizer.token_stats();
    std::printf(
        "train-tokenizer: vocab %d (target %d), token length min %d max %d mean %.2f -> %s, %s "
        "(%.1f s)\n",
        tokenizer.vocab_size(), config.tokenizer_vocab_size, stats.min_len, stats.max_len,
        stats.mean_len, out_vocab.c_str(), out_merges.c_str(), timer.seconds());
    return 0;
}

int cmd_pretrain(const PipelineConfig& config, const std::string& corpus_path,
                 const std::string& vocab_path, const std::string& merges_path,
                 const std::string& out, const std::string& log_path) {
    Timer timer;
    const auto corpus_lines = load_corpus(corpus_path);
    const BpeTokenizer tokenizer = BpeTokenizer::load(vocab_path, merges_path);
    if (tokenizer.vocab_size() > config.model.vocab_size) {
        fail(ErrorKind::Config, "tokenizer vocab (" + std::to_string(tokenizer.vocab_size()) +
                                    ") exceeds model.vocab_size (" +
                                    std::to_string(config.model.vocab_size) + ")");
    }
    std::vector<TokenizedSequence> corpus;
    corpus.reserve(corpus_lines.size());
    for (const auto& line : corpus_lines) corpus.push_back(tokenizer.encode(line));
    PretrainResult result = pretrain(corpus, config.model, config.pretrain);
    const std::vector<std::pair<std::string, std::string>> inputs = {
        {"corpus", corpus_path}, {"vocab", vocab_path}, {"merges", merges_path}};
    ensure_parent_dir(out);
    save_encoder_checkpoint(result.model, out, provenance_meta(config, inputs));
    const std::string log_out = log_path.empty() ? out + ".log" : log_path;
    ensure_parent_dir(log_out);
    save_train_log(result.log, log_out, provenance(config, inputs));
    const double final_loss = result.log.entries.empty() ? 0.0 : result.log.entries.back().loss;
    const double final_acc = result.log.entries.empty() ? 0.0 : result.log.entries.back().val_acc;
    std::printf("pretrain: %d epochs on %zu sequences, final loss %.6f, masked acc %.4f -> %s "
                "(%.1f s)\n",
                config.pretrain.epochs, corpus.size(), final_loss, final_acc, out.c_str(),
                timer.seconds());
    return 0;
}

int cmd_prepare_task(const PipelineConfig& config, const std::string& manifest_path,
                     const std::string& codebook_path, const std::string& vocab_path,
                     const std::string& merges_path, const std::string& out_dir) {
    Timer timer;
    const auto entries = load_manifest(manifest_path);
    const fs::path dir = fs::path(manifest_path).parent_path();
    const int n_classes = config.task_n_classes();
    const bool heartbeat = config.task_name == "heartbeat4";

    std::vector<LabeledSegment> segments;
    std::vector<SleepEpoch> epochs;
    size_t rejected = 0;
    for (const auto& e : entries) {
        const std::string rec_path = (dir / e.file).string();
        require_file(rec_path, "record");
        const EcgRecord raw = load_record_auto(rec_path);
        const EcgRecord normalized = normalize(resample(raw, config.signal_target_hz));
        if (heartbeat) {
            if (e.class_index < 0 || e.class_index >= n_classes) {
                fail(ErrorKind::Data, "manifest class " + std::to_string(e.class_index) +
                                          " out of range for task " + config.task_name);
            }
            const std::string peaks_path =
                (dir / (fs::path(e.file).stem().string() + ".peaks")).string();
            BeatAnnotation ann = load_beat_annotation(peaks_path);
            // Peak indices live on the source grid; move them to the target.
            if (raw.sampling_rate_hz != config.signal_target_hz) {
                const double scale = config.signal_target_hz / raw.sampling_rate_hz;
                const long long last =
                    static_cast<long long>(normalized.samples.size()) - 1;
                for (auto& p : ann.r_peaks) {
                    p = std::min(last, static_cast<long long>(std::llround(
                                           static_cast<double>(p) * scale)));
                }
            }
            for (auto& seg : prepare_heartbeat(normalized.samples, ann)) {
                segments.push_back(std::move(seg));
            }
        } else {
            SleepEpoch epoch;
            epoch.samples = normalized.samples;
            epoch.stage = stage_for_class(e.class_index, config.task_sleep_mode());
            epochs.push_back(std::move(epoch));
        }
    }
    if (!heartbeat) {
        SleepPrepResult prep = prepare_sleep(epochs, config.task_sleep_mode());
        segments = std::move(prep.segments);
        rejected = prep.rejected_epochs;
        if (rejected > 0) {
            std::fprintf(stderr, "warning: %zu epochs rejected (not 10800 samples)\n", rejected);
        }
    }
    if (segments.empty()) fail(ErrorKind::Data, "no usable segments in " + manifest_path);

    const BalancedSplit split =
        balance_and_split(segments, n_classes, config.task_per_class, config.seed);
    const QuantizerCodebook codebook = load_codebook(codebook_path);
    const BpeTokenizer tokenizer = BpeTokenizer::load(vocab_path, merges_path);
    const auto prov = provenance(config, {{"manifest", manifest_path},
                                          {"codebook", codebook_path},
                                          {"vocab", vocab_path},
                                          {"merges", merges_path}});
    fs::create_directories(out_dir);
    save_labeled_dataset(encode_segments(split.train, codebook, tokenizer), config.task_name,
                         out_dir + "/train.hbds", prov);
    save_labeled_dataset(encode_segments(split.val, codebook, tokenizer), config.task_name,
                         out_dir + "/val.hbds", prov);
    save_labeled_dataset(encode_segments(split.test, codebook, tokenizer), config.task_name,
                         out_dir + "/test.hbds", prov);
    std::printf(
        "prepare-task %s: %zu train / %zu val / %zu test (per-class %lld) -> %s (%.1f s)\n",
        config.task_name.c_str(), split.train.size(), split.val.size(), split.test.size(),
        split.per_class, out_dir.c_str(), timer.seconds());
    return 0;
}

LabeledDataset load_task_dataset(const std::string& path, const std::string& expected_task) {
    LoadedDataset loaded = load_labeled_dataset(path);
    if (loaded.task != expected_task) {
        fail(ErrorKind::Data, path + " holds task '" + loaded.task + "', config says '" +
                                  expected_task + "'");
    }
    return std::move(loaded.data);
}

int cmd_finetune(const PipelineConfig& config, const std::string& checkpoint_path,
                 const std::string& task_dir, const std::string& out,
                 const std::string& log_path) {
    Timer timer;
    require_file(checkpoint_path, "encoder checkpoint");
    EncoderModel<float> encoder = load_encoder_checkpoint(checkpoint_path);
    if (encoder.config.to_kv() != config.model.to_kv()) {
        fail(ErrorKind::Config,
             "checkpoint model configuration differs from the config's model section");
    }
    const std::string train_path = task_dir + "/train.hbds";
    const std::string val_path = task_dir + "/val.hbds";
    const LabeledDataset train_data = load_task_dataset(train_path, config.task_name);
    const LabeledDataset val_data = load_task_dataset(val_path, config.task_name);

    HybridModel<float> initial =
        HybridModel<float>::build(std::move(encoder), config.task_n_classes(),
                                  config.freeze_policy(), config.seed, config.task_lstm_hidden);
    FinetuneResult result = finetune(initial, train_data, val_data, config.finetune);

    const std::vector<std::pair<std::string, std::string>> inputs = {
        {"checkpoint", checkpoint_path}, {"train", train_path}, {"val", val_path}};
    auto meta = provenance_meta(config, inputs);
    meta["finetune.best_lr"] = fmt17(result.best_lr);
    meta["finetune.best_epoch"] = std::to_string(result.best_epoch);
    meta["finetune.best_val_acc"] = fmt17(result.best_val_acc);
    meta["finetune.task"] = config.task_name;
    ensure_parent_dir(out);
    save_hybrid_checkpoint(result.model, out, meta);
    const std::string log_out = log_path.empty() ? out + ".log" : log_path;
    ensure_parent_dir(log_out);
    save_train_log(result.log, log_out, provenance(config, inputs));
    std::printf("finetune %s/%s: best lr %g epoch %d val acc %.4f -> %s (%.1f s)\n",
                config.task_name.c_str(), config.task_freeze.c_str(), result.best_lr,
                result.best_epoch, result.best_val_acc, out.c_str(), timer.seconds());
    return 0;
}

int cmd_evaluate(const PipelineConfig& config, const std::string& checkpoint_path,
                 const std::string& data_path, const std::string& out) {
    Timer timer;
    require_file(checkpoint_path, "hybrid checkpoint");
    const HybridModel<float> model = load_hybrid_checkpoint(checkpoint_path);
    const LabeledDataset data = load_task_dataset(data_path, config.task_name);
    if (model.n_classes != config.task_n_classes()) {
        fail(ErrorKind::Config, "checkpoint has " + std::to_string(model.n_classes) +
                                    " classes, task " + config.task_name + " needs " +
                                    std::to_string(config.task_n_classes()));
    }
    const std::vector<int> predictions =
        predict_dataset(model, data, config.finetune.batch_size);
    const EvalReport report = evaluate_predictions(data.labels, predictions, model.n_classes);
    ensure_parent_dir(out);
    save_report(report, config.task_name, out, class_names_for_task(config.task_name),
                provenance(config, {{"checkpoint", checkpoint_path}, {"data", data_path}}));
    std::printf("evaluate %s: accuracy %.4f on %lld examples -> %s (%.1f s)\n",
                config.task_name.c_str(), report.accuracy, report.total, out.c_str(),
                timer.seconds());
    return 0;
}

int cmd_inspect_params(const PipelineConfig& config, bool pretrain_count,
                       const std::string& freeze, int classes, int lstm_hidden) {
    if (pretrain_count != freeze.empty()) {
        fail(ErrorKind::Config, "inspect-params needs exactly one of --pretrain or --freeze");
    }
    if (pretrain_count) {
        const long long total = total_parameters(encoder_tensor_specs(config.model));
        std::printf("%s\n", with_commas(total).c_str());
        return 0;
    }
    if (classes < 2) fail(ErrorKind::Config, "--classes must be >= 2");
    const FreezePolicy policy = FreezePolicy::parse(freeze);
    const long long count = count_trainable(config.model, policy, classes, lstm_hidden);
    std::printf("%s\n", with_commas(count).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"heartbert — ECG-as-language pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> in_paths;
    std::string manifest_path, windows_path, codebook_path, corpus_path;
    std::string vocab_path, merges_path, checkpoint_path, task_dir, data_path;
    std::string out, out_dir, out_vocab, out_merges, log_path;
    bool pretrain_count = false;
    std::string freeze;
    int classes = 0;
    int lstm_hidden = 128;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "pipeline config file (defaults when omitted)");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate synthetic labeled ECG records");
    add_config(synth);
    synth->add_option("--out", out_dir, "output directory")->required();

    CLI::App* ingest = app.add_subcommand("ingest", "resample, normalize, and window records");
    add_config(ingest);
    ingest->add_option("--in", in_paths, "record files (csv or raw)");
    ingest->add_option("--manifest", manifest_path, "record manifest from synth");
    ingest->add_option("--out", out, "windows file")->required();

    CLI::App* trainq = app.add_subcommand("train-quantizer", "fit the Lloyd-Max codebook");
    add_config(trainq);
    trainq->add_option("--windows", windows_path, "windows file")->required();
    trainq->add_option("--out", out, "codebook file")->required();

    CLI::App* prepc = app.add_subcommand("prepare-corpus", "quantize windows into symbol text");
    add_config(prepc);
    prepc->add_option("--windows", windows_path, "windows file")->required();
    prepc->add_option("--codebook", codebook_path, "codebook file")->required();
    prepc->add_option("--out", out, "corpus file")->required();

    CLI::App* traint = app.add_subcommand("train-tokenizer", "learn BPE merges over the corpus");
    add_config(traint);
    traint->add_option("--corpus", corpus_path, "corpus file")->required();
    traint->add_option("--codebook", codebook_path, "codebook file (alphabet source)")->required();
    traint->add_option("--out-vocab", out_vocab, "vocab file")->required();
    traint->add_option("--out-merges", out_merges, "merges file")->required();

    CLI::App* pre = app.add_subcommand("pretrain", "masked-language-model pretraining");
    add_config(pre);
    pre->add_option("--corpus", corpus_path, "corpus file")->required();
    pre->add_option("--vocab", vocab_path, "vocab file")->required();
    pre->add_option("--merges", merges_path, "merges file")->required();
    pre->add_option("--out", out, "encoder checkpoint")->required();
    pre->add_option("--log", log_path, "train log (default: <out>.log)");

    CLI::App* prept = app.add_subcommand("prepare-task", "build balanced task datasets");
    add_config(prept);
    prept->add_option("--manifest", manifest_path, "record manifest from synth")->required();
    prept->add_option("--codebook", codebook_path, "codebook file")->required();
    prept->add_option("--vocab", vocab_path, "vocab file")->required();
    prept->add_option("--merges", merges_path, "merges file")->required();
    prept->add_option("--out-dir", out_dir, "dataset directory")->required();

    CLI::App* fine = app.add_subcommand("finetune", "train the hybrid classifier");
    add_config(fine);
    fine->add_option("--checkpoint", checkpoint_path, "encoder checkpoint")->required();
    fine->add_option("--task-dir", task_dir, "dataset directory (train.hbds, val.hbds)")
        ->required();
    fine->add_option("--out", out, "hybrid checkpoint")->required();
    fine->add_option("--log", log_path, "train log (default: <out>.log)");

    CLI::App* eval = app.add_subcommand("evaluate", "score a hybrid checkpoint on a dataset");
    add_config(eval);
    eval->add_option("--checkpoint", checkpoint_path, "hybrid checkpoint")->required();
    eval->add_option("--data", data_path, "labeled dataset file")->required();
    eval->add_option("--out", out, "report file (JSON twin at <out>.json)")->required();

    CLI::App* inspect = app.add_subcommand("inspect-params", "print exact parameter counts");
    add_config(inspect);
    inspect->add_flag("--pretrain", pretrain_count, "count the pretraining encoder's parameters");
    inspect->add_option("--freeze", freeze,
                        "freeze policy (all-frozen, last-<n>, half-frozen, all-unfrozen)");
    inspect->add_option("--classes", classes, "number of task classes");
    inspect->add_option("--lstm-hidden", lstm_hidden, "LSTM hidden size")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const PipelineConfig config = load_cli_config(config_path);
        if (app.got_subcommand(synth)) return cmd_synth(config, out_dir);
        if (app.got_subcommand(ingest)) return cmd_ingest(config, in_paths, manifest_path, out);
        if (app.got_subcommand(trainq)) return cmd_train_quantizer(config, windows_path, out);
        if (app.got_subcommand(prepc)) {
            return cmd_prepare_corpus(config, windows_path, codebook_path, out);
        }
        if (app.got_subcommand(traint)) {
            return cmd_train_tokenizer(config, corpus_path, codebook_path, out_vocab, out_merges);
        }
        if (app.got_subcommand(pre)) {
            return cmd_pretrain(config, corpus_path, vocab_path, merges_path, out, log_path);
        }
        if (app.got_subcommand(prept)) {
            return cmd_prepare_task(config, manifest_path, codebook_path, vocab_path, merges_path,
                                    out_dir);
        }
        if (app.got_subcommand(fine)) {
            return cmd_finetune(config, checkpoint_path, task_dir, out, log_path);
        }
        if (app.got_subcommand(eval)) return cmd_evaluate(config, checkpoint_path, data_path, out);
        if (app.got_subcommand(inspect)) {
            return cmd_inspect_params(config, pretrain_count, freeze, classes, lstm_hidden);
        }
        std::fprintf(stderr, "error: no command\n");
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}
