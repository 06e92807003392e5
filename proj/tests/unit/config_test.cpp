#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "doctest.h"
#include "heartbert/config.hpp"
#include "heartbert/errors.hpp"

using namespace heartbert;

namespace {

std::string error_text(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("empty config text yields the full default pipeline") {
    const PipelineConfig c = parse_config("");
    CHECK(c.seed == 0);
    CHECK(c.signal_target_hz == 360.0);
    CHECK(c.signal_window == 4000);
    CHECK(c.quantizer.levels == 100);
    CHECK(c.tokenizer_vocab_size == 52000);
    CHECK(c.tokenizer_max_seq_len == 512);
    CHECK(c.model.n_layers == 6);
    CHECK(c.model.n_heads == 12);
    CHECK(c.model.d_model == 768);
    CHECK(c.model.d_ff == 3072);
    CHECK(c.model.vocab_size == 52000);
    CHECK(c.model.max_positions == 514);
    CHECK(c.model.mask_prob == 0.15);
    CHECK(c.pretrain.epochs == 1000);
    CHECK(c.pretrain.batch_size == 64);
    CHECK(c.pretrain.lr == 5e-5);
    CHECK(c.pretrain.weight_decay == 0.01);
    CHECK(c.finetune.batch_size == 8);
    REQUIRE(c.finetune.lrs.size() == 3);
    CHECK(c.finetune.lrs[0] == 3e-5);
    CHECK(c.finetune.lrs[1] == 4e-3);
    CHECK(c.finetune.lrs[2] == 5e-3);
    CHECK(c.task_name == "sleep3");
    CHECK(c.task_freeze == "all-frozen");
    CHECK(c.task_lstm_hidden == 128);
    CHECK(c.overrides.empty());
    CHECK(c.task_n_classes() == 3);
}

TEST_CASE("values, comments, and whitespace parse; overrides keep file order") {
    const std::string text =
        "# comment\n"
        "seed = 42\n"
        "\n"
        "  model.n_layers =  2  \n"
        "model.n_heads = 2\n"
        "model.d_model = 8\n"
        "model.d_ff = 32\n"
        "model.vocab_size = 120\n"
        "model.max_positions = 20\n"
        "tokenizer.vocab_size = 110\n"
        "tokenizer.max_seq_len = 18\n"
        "finetune.lrs = 1e-4, 2e-4\n"
        "task.name = heartbeat4\n";
    const PipelineConfig c = parse_config(text);
    CHECK(c.seed == 42);
    CHECK(c.model.n_layers == 2);
    CHECK(c.model.d_model == 8);
    REQUIRE(c.finetune.lrs.size() == 2);
    CHECK(c.finetune.lrs[0] == 1e-4);
    CHECK(c.finetune.lrs[1] == 2e-4);
    CHECK(c.task_n_classes() == 4);
    REQUIRE(c.overrides.size() == 11);
    CHECK(c.overrides.front() == "seed = 42");
    CHECK(c.overrides[1] == "model.n_layers = 2");
    // The root seed reaches every stage.
    CHECK(c.pretrain.seed == 42);
    CHECK(c.finetune.seed == 42);
    CHECK(c.quantizer.seed == 42);
    CHECK(c.synth.seed == 42);
}

TEST_CASE("head count that does not divide d_model is rejected") {
    CHECK_THROWS_AS((void)parse_config("model.n_heads = 5\n"), Error);
    const std::string msg = error_text([] { (void)parse_config("model.n_heads = 5\n"); });
    CHECK(msg.find("n_heads") != std::string::npos);
    try {
        (void)parse_config("model.n_heads = 5\n");
    } catch (const Error& e) {
        CHECK(e.exit_code() == 2);
    }
}

TEST_CASE("unknown keys are rejected by name") {
    const std::string msg = error_text([] { (void)parse_config("model.depth = 12\n"); });
    CHECK(msg.find("model.depth") != std::string::npos);
    CHECK(msg.find("unknown") != std::string::npos);
}

TEST_CASE("malformed values name the key") {
    const std::string msg =
        error_text([] { (void)parse_config("pretrain.batch_size = sixty-four\n"); });
    CHECK(msg.find("pretrain.batch_size") != std::string::npos);
    CHECK_THROWS_AS((void)parse_config("model.mask_prob = not-a-number\n"), Error);
    CHECK_THROWS_AS((void)parse_config("model.tie_lm_head = maybe\n"), Error);
    CHECK_THROWS_AS((void)parse_config("seed = -1\n"), Error);
    CHECK_THROWS_AS((void)parse_config("finetune.lrs = ,\n"), Error);
    // A line without '=' reports its origin and line number.
    const std::string bad = error_text([] { (void)parse_config("x\n", "pipeline.conf"); });
    CHECK(bad.find("pipeline.conf:1") != std::string::npos);
}

TEST_CASE("range validation") {
    CHECK_THROWS_AS((void)parse_config("signal.window = 0\n"), Error);
    CHECK_THROWS_AS((void)parse_config("signal.window = 4001\n"), Error);
    CHECK_THROWS_AS((void)parse_config("quantizer.levels = 1\n"), Error);
    CHECK_THROWS_AS((void)parse_config("quantizer.levels = 101\n"), Error);
    CHECK_THROWS_AS((void)parse_config("tokenizer.vocab_size = 100\n"), Error);
    CHECK_THROWS_AS((void)parse_config("task.name = sleep7\n"), Error);
    CHECK_THROWS_AS((void)parse_config("task.freeze = most\n"), Error);
    CHECK_THROWS_AS((void)parse_config("pretrain.lr = 0\n"), Error);
    CHECK_THROWS_AS((void)parse_config("finetune.lrs = 1e-3,-2e-3\n"), Error);
    CHECK_THROWS_AS((void)parse_config("synth.classes = 1\n"), Error);
    // The model cannot read sequences longer than its position table.
    CHECK_THROWS_AS((void)parse_config("tokenizer.max_seq_len = 513\n"), Error);
}

TEST_CASE("canonical dump round-trips") {
    const std::string text =
        "seed = 7\n"
        "model.n_layers = 2\n"
        "model.n_heads = 2\n"
        "model.d_model = 8\n"
        "model.d_ff = 32\n"
        "model.vocab_size = 120\n"
        "model.max_positions = 20\n"
        "model.mask_prob = 0.25\n"
        "tokenizer.vocab_size = 110\n"
        "tokenizer.max_seq_len = 18\n"
        "pretrain.lr = 0.001\n"
        "finetune.lrs = 3.0000000000000001e-05,0.0041999999999999997\n"
        "task.name = sleep5\n"
        "task.freeze = last-1\n";
    const PipelineConfig a = parse_config(text);
    const std::string dump = config_to_text(a);
    const PipelineConfig b = parse_config(dump, "<dump>");
    CHECK(config_to_text(b) == dump);
    CHECK(b.seed == 7);
    CHECK(b.model.mask_prob == 0.25);
    CHECK(b.finetune.lrs[1] == a.finetune.lrs[1]);
    CHECK(b.task_n_classes() == 5);
    // Defaults dump and re-parse too.
    const std::string defaults = config_to_text(parse_config(""));
    CHECK(config_to_text(parse_config(defaults)) == defaults);
}

TEST_CASE("load_config distinguishes missing from empty") {
    const std::string dir = "config_test_tmp";
    std::filesystem::create_directories(dir);
    try {
        (void)load_config(dir + "/absent.conf");
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.exit_code() == 3);
    }
    {
        std::ofstream out(dir + "/empty.conf");
    }
    const PipelineConfig c = load_config(dir + "/empty.conf");
    CHECK(c.tokenizer_vocab_size == 52000);
    {
        std::ofstream out(dir + "/one.conf");
        out << "seed = 9\nmodel.dropout = 0.0\n";
    }
    const PipelineConfig d = load_config(dir + "/one.conf");
    CHECK(d.seed == 9);
    CHECK(d.model.dropout == 0.0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("task helpers") {
    PipelineConfig c = parse_config("task.name = sleep5\ntask.freeze = half-frozen\n");
    CHECK(c.task_n_classes() == 5);
    CHECK(c.task_sleep_mode() == SleepMode::Five);
    CHECK(c.freeze_policy().kind == FreezePolicy::Kind::Half);
    c = parse_config("task.name = heartbeat4\ntask.freeze = all-unfrozen\n");
    CHECK(c.task_n_classes() == 4);
    CHECK_THROWS_AS((void)c.task_sleep_mode(), Error);
    CHECK(c.freeze_policy().kind == FreezePolicy::Kind::AllUnfrozen);
}
