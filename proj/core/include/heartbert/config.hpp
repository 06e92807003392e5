#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heartbert/model.hpp"
#include "heartbert/quantizer.hpp"
#include "heartbert/tasks.hpp"
#include "heartbert/train.hpp"

namespace heartbert {

// One flat pipeline configuration, filled from `section.key = value` lines.
// Every knob has a published default, so an empty file is a complete config.
struct PipelineConfig {
    uint64_t seed = 0;

    // signal
    double signal_target_hz = 360.0;
    int signal_window = 4000;

    QuantizerOptions quantizer;  // 100 levels

    // tokenizer
    int tokenizer_vocab_size = 52000;
    int tokenizer_max_seq_len = 512;

    ModelConfig model;

    PretrainOptions pretrain;  // 1000 epochs, batch 64, lr 5e-5, AdamW
    FinetuneOptions finetune;  // lr sweep {3e-5, 4e-3, 5e-3}, batch 8

    // task
    std::string task_name = "sleep3";  // sleep3 | sleep5 | heartbeat4
    std::string task_freeze = "all-frozen";
    long long task_per_class = 0;  // 0: undersample to the minimum class
    int task_lstm_hidden = 128;

    SynthProfile synth;
    int synth_classes = 3;

    // The `key = value` pairs that were explicitly set, in file order.
    std::vector<std::string> overrides;

    int task_n_classes() const;             // 3 / 5 / 4 by task name
    SleepMode task_sleep_mode() const;      // valid for the sleep tasks
    FreezePolicy freeze_policy() const;
    void validate() const;
};

// Parses config text; unknown keys and malformed values raise Config errors
// that name the offending key. `origin` labels error messages.
PipelineConfig parse_config(const std::string& text, const std::string& origin = "<config>");

// Missing file is a missing artifact; an empty file yields the defaults.
PipelineConfig load_config(const std::string& path);

// Canonical full dump (every key, fixed order). parse(config_to_text(c))
// reproduces c, and its hash identifies the configuration in provenance.
std::string config_to_text(const PipelineConfig& config);

}  // namespace heartbert
