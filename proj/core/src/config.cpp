#include "heartbert/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "heartbert/errors.hpp"

namespace heartbert {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
    fail(ErrorKind::Config, key + ": expected " + expected + ", got '" + value + "'");
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        bad_value(key, value, "an integer");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        bad_value(key, value, "a non-negative integer");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        bad_value(key, value, "a number");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    bad_value(key, value, "true or false");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) bad_value(key, value, "a comma-separated number list");
        out.push_back(parse_double(key, item));
    }
    if (out.empty()) bad_value(key, value, "a comma-separated number list");
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void apply(PipelineConfig& c, const std::string& key, const std::string& value) {
    if (key == "seed") {
        c.seed = parse_u64(key, value);
    } else if (key == "signal.target_hz") {
        c.signal_target_hz = parse_double(key, value);
    } else if (key == "signal.window") {
        c.signal_window = static_cast<int>(parse_int(key, value));
    } else if (key == "quantizer.levels") {
        c.quantizer.levels = static_cast<int>(parse_int(key, value));
    } else if (key == "quantizer.tol") {
        c.quantizer.tol = parse_double(key, value);
    } else if (key == "quantizer.max_iter") {
        c.quantizer.max_iter = static_cast<int>(parse_int(key, value));
    } else if (key == "tokenizer.vocab_size") {
        c.tokenizer_vocab_size = static_cast<int>(parse_int(key, value));
    } else if (key == "tokenizer.max_seq_len") {
        c.tokenizer_max_seq_len = static_cast<int>(parse_int(key, value));
    } else if (key == "model.n_layers") {
        c.model.n_layers = static_cast<int>(parse_int(key, value));
    } else if (key == "model.n_heads") {
        c.model.n_heads = static_cast<int>(parse_int(key, value));
    } else if (key == "model.d_model") {
        c.model.d_model = static_cast<int>(parse_int(key, value));
    } else if (key == "model.d_ff") {
        c.model.d_ff = static_cast<int>(parse_int(key, value));
    } else if (key == "model.vocab_size") {
        c.model.vocab_size = static_cast<int>(parse_int(key, value));
    } else if (key == "model.max_positions") {
        c.model.max_positions = static_cast<int>(parse_int(key, value));
    } else if (key == "model.n_token_types") {
        c.model.n_token_types = static_cast<int>(parse_int(key, value));
    } else if (key == "model.mask_prob") {
        c.model.mask_prob = parse_double(key, value);
    } else if (key == "model.dropout") {
        c.model.dropout = parse_double(key, value);
    } else if (key == "model.tie_lm_head") {
        c.model.tie_lm_head = parse_bool(key, value);
    } else if (key == "pretrain.epochs") {
        c.pretrain.epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "pretrain.batch_size") {
        c.pretrain.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "pretrain.lr") {
        c.pretrain.lr = parse_double(key, value);
    } else if (key == "pretrain.beta1") {
        c.pretrain.beta1 = parse_double(key, value);
    } else if (key == "pretrain.beta2") {
        c.pretrain.beta2 = parse_double(key, value);
    } else if (key == "pretrain.eps") {
        c.pretrain.eps = parse_double(key, value);
    } else if (key == "pretrain.weight_decay") {
        c.pretrain.weight_decay = parse_double(key, value);
    } else if (key == "finetune.epochs") {
        c.finetune.epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "finetune.batch_size") {
        c.finetune.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "finetune.lrs") {
        c.finetune.lrs = parse_double_list(key, value);
    } else if (key == "finetune.beta1") {
        c.finetune.beta1 = parse_double(key, value);
    } else if (key == "finetune.beta2") {
        c.finetune.beta2 = parse_double(key, value);
    } else if (key == "finetune.eps") {
        c.finetune.eps = parse_double(key, value);
    } else if (key == "task.name") {
        c.task_name = value;
    } else if (key == "task.freeze") {
        c.task_freeze = value;
    } else if (key == "task.per_class") {
        c.task_per_class = parse_int(key, value);
    } else if (key == "task.lstm_hidden") {
        c.task_lstm_hidden = static_cast<int>(parse_int(key, value));
    } else if (key == "synth.n_records") {
        c.synth.n_records = static_cast<int>(parse_int(key, value));
    } else if (key == "synth.rate") {
        c.synth.rate = parse_double(key, value);
    } else if (key == "synth.duration_s") {
        c.synth.duration_s = parse_double(key, value);
    } else if (key == "synth.base_freq") {
        c.synth.base_freq = parse_double(key, value);
    } else if (key == "synth.noise") {
        c.synth.noise = parse_double(key, value);
    } else if (key == "synth.amplitude") {
        c.synth.amplitude = parse_double(key, value);
    } else if (key == "synth.width_scale") {
        c.synth.width_scale = parse_double(key, value);
    } else if (key == "synth.classes") {
        c.synth_classes = static_cast<int>(parse_int(key, value));
    } else {
        fail(ErrorKind::Config, "unknown config key: " + key);
    }
}

}  // namespace

int PipelineConfig::task_n_classes() const {
    if (task_name == "sleep3") return 3;
    if (task_name == "sleep5") return 5;
    if (task_name == "heartbeat4") return 4;
    fail(ErrorKind::Config, "task.name must be sleep3, sleep5, or heartbeat4 (got '" +
                                task_name + "')");
}

SleepMode PipelineConfig::task_sleep_mode() const {
    if (task_name == "sleep3") return SleepMode::Three;
    if (task_name == "sleep5") return SleepMode::Five;
    fail(ErrorKind::Config, "task '" + task_name + "' is not a sleep task");
}

FreezePolicy PipelineConfig::freeze_policy() const { return FreezePolicy::parse(task_freeze); }

void PipelineConfig::validate() const {
    if (signal_target_hz <= 0) fail(ErrorKind::Config, "signal.target_hz must be positive");
    if (signal_window < 1 || signal_window > 4000) {
        fail(ErrorKind::Config, "signal.window must be in [1, 4000]");
    }
    if (quantizer.levels < 2 || quantizer.levels > 100) {
        fail(ErrorKind::Config, "quantizer.levels must be in [2, 100]");
    }
    if (quantizer.tol <= 0) fail(ErrorKind::Config, "quantizer.tol must be positive");
    if (quantizer.max_iter < 1) fail(ErrorKind::Config, "quantizer.max_iter must be >= 1");
    if (tokenizer_vocab_size < 5 + quantizer.levels) {
        fail(ErrorKind::Config,
             "tokenizer.vocab_size must cover the specials plus the alphabet (>= " +
                 std::to_string(5 + quantizer.levels) + ")");
    }
    if (tokenizer_max_seq_len < 3) fail(ErrorKind::Config, "tokenizer.max_seq_len must be >= 3");
    model.validate();
    if (model.vocab_size < tokenizer_vocab_size) {
        fail(ErrorKind::Config, "model.vocab_size must be >= tokenizer.vocab_size");
    }
    if (tokenizer_max_seq_len > model.max_seq_len()) {
        fail(ErrorKind::Config, "tokenizer.max_seq_len exceeds the model's position table");
    }
    if (pretrain.epochs < 0) fail(ErrorKind::Config, "pretrain.epochs must be >= 0");
    if (pretrain.batch_size < 1) fail(ErrorKind::Config, "pretrain.batch_size must be >= 1");
    if (pretrain.lr <= 0) fail(ErrorKind::Config, "pretrain.lr must be positive");
    if (pretrain.weight_decay < 0) fail(ErrorKind::Config, "pretrain.weight_decay must be >= 0");
    if (finetune.epochs < 0) fail(ErrorKind::Config, "finetune.epochs must be >= 0");
    if (finetune.batch_size < 1) fail(ErrorKind::Config, "finetune.batch_size must be >= 1");
    if (finetune.lrs.empty()) fail(ErrorKind::Config, "finetune.lrs must name at least one rate");
    for (double lr : finetune.lrs) {
        if (lr <= 0) fail(ErrorKind::Config, "finetune.lrs entries must be positive");
    }
    task_n_classes();
    freeze_policy();
    if (task_per_class < 0) fail(ErrorKind::Config, "task.per_class must be >= 0");
    if (task_lstm_hidden < 1) fail(ErrorKind::Config, "task.lstm_hidden must be >= 1");
    if (synth.n_records < 1) fail(ErrorKind::Config, "synth.n_records must be >= 1");
    if (synth.rate <= 0 || synth.duration_s <= 0 || synth.base_freq <= 0) {
        fail(ErrorKind::Config, "synth.rate, synth.duration_s, synth.base_freq must be positive");
    }
    if (synth.noise < 0) fail(ErrorKind::Config, "synth.noise must be >= 0");
    if (synth.amplitude <= 0 || synth.width_scale <= 0) {
        fail(ErrorKind::Config, "synth.amplitude and synth.width_scale must be positive");
    }
    if (synth_classes < 2) fail(ErrorKind::Config, "synth.classes must be >= 2");
}

PipelineConfig parse_config(const std::string& text, const std::string& origin) {
    PipelineConfig config;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::Config,
                 origin + ":" + std::to_string(line_no) + ": expected 'section.key = value'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty()) {
            fail(ErrorKind::Config,
                 origin + ":" + std::to_string(line_no) + ": empty key or value");
        }
        apply(config, key, value);
        config.overrides.push_back(key + " = " + value);
    }
    // One root seed feeds every stage's sub-streams.
    config.quantizer.seed = config.seed;
    config.pretrain.seed = config.seed;
    config.finetune.seed = config.seed;
    config.synth.seed = config.seed;
    config.validate();
    return config;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::MissingArtifact, "config file not found: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string config_to_text(const PipelineConfig& c) {
    std::ostringstream out;
    out << "seed = " << c.seed << "\n";
    out << "signal.target_hz = " << fmt(c.signal_target_hz) << "\n";
    out << "signal.window = " << c.signal_window << "\n";
    out << "quantizer.levels = " << c.quantizer.levels << "\n";
    out << "quantizer.tol = " << fmt(c.quantizer.tol) << "\n";
    out << "quantizer.max_iter = " << c.quantizer.max_iter << "\n";
    out << "tokenizer.vocab_size = " << c.tokenizer_vocab_size << "\n";
    out << "tokenizer.max_seq_len = " << c.tokenizer_max_seq_len << "\n";
    out << "model.n_layers = " << c.model.n_layers << "\n";
    out << "model.n_heads = " << c.model.n_heads << "\n";
    out << "model.d_model = " << c.model.d_model << "\n";
    out << "model.d_ff = " << c.model.d_ff << "\n";
    out << "model.vocab_size = " << c.model.vocab_size << "\n";
    out << "model.max_positions = " << c.model.max_positions << "\n";
    out << "model.n_token_types = " << c.model.n_token_types << "\n";
    out << "model.mask_prob = " << fmt(c.model.mask_prob) << "\n";
    out << "model.dropout = " << fmt(c.model.dropout) << "\n";
    out << "model.tie_lm_head = " << (c.model.tie_lm_head ? "true" : "false") << "\n";
    out << "pretrain.epochs = " << c.pretrain.epochs << "\n";
    out << "pretrain.batch_size = " << c.pretrain.batch_size << "\n";
    out << "pretrain.lr = " << fmt(c.pretrain.lr) << "\n";
    out << "pretrain.beta1 = " << fmt(c.pretrain.beta1) << "\n";
    out << "pretrain.beta2 = " << fmt(c.pretrain.beta2) << "\n";
    out << "pretrain.eps = " << fmt(c.pretrain.eps) << "\n";
    out << "pretrain.weight_decay = " << fmt(c.pretrain.weight_decay) << "\n";
    out << "finetune.epochs = " << c.finetune.epochs << "\n";
    out << "finetune.batch_size = " << c.finetune.batch_size << "\n";
    out << "finetune.lrs = ";
    for (size_t i = 0; i < c.finetune.lrs.size(); ++i) {
        if (i) out << ",";
        out << fmt(c.finetune.lrs[i]);
    }
    out << "\n";
    out << "finetune.beta1 = " << fmt(c.finetune.beta1) << "\n";
    out << "finetune.beta2 = " << fmt(c.finetune.beta2) << "\n";
    out << "finetune.eps = " << fmt(c.finetune.eps) << "\n";
    out << "task.name = " << c.task_name << "\n";
    out << "task.freeze = " << c.task_freeze << "\n";
    out << "task.per_class = " << c.task_per_class << "\n";
    out << "task.lstm_hidden = " << c.task_lstm_hidden << "\n";
    out << "synth.n_records = " << c.synth.n_records << "\n";
    out << "synth.rate = " << fmt(c.synth.rate) << "\n";
    out << "synth.duration_s = " << fmt(c.synth.duration_s) << "\n";
    out << "synth.base_freq = " << fmt(c.synth.base_freq) << "\n";
    out << "synth.noise = " << fmt(c.synth.noise) << "\n";
    out << "synth.amplitude = " << fmt(c.synth.amplitude) << "\n";
    out << "synth.width_scale = " << fmt(c.synth.width_scale) << "\n";
    out << "synth.classes = " << c.synth_classes << "\n";
    return out.str();
}

}  // namespace heartbert
