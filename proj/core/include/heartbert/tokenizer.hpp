#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace heartbert {

// Segmentation output: [BOS, body..., EOS], optionally padded. The mask is 1
// on real tokens and 0 on PAD.
struct TokenizedSequence {
    std::vector<int> ids;
    std::vector<int> attention_mask;
    bool overflow = false;

    size_t length() const { return ids.size(); }
};

class BpeTokenizer {
public:
    static constexpr int kBosId = 0;
    static constexpr int kPadId = 1;
    static constexpr int kEosId = 2;
    static constexpr int kUnkId = 3;
    static constexpr int kMaskId = 4;
    static constexpr int kFirstAlphabetId = 5;

    static const std::vector<std::string>& special_tokens();

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    int max_seq_len() const { return max_seq_len_; }
    const std::vector<std::string>& tokens() const { return id_to_token_; }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
    const std::string& token_of(int id) const;
    int id_of(const std::string& token) const;  // -1 when absent

    TokenizedSequence encode(const std::string& text, std::optional<int> pad_to = std::nullopt) const;
    std::string decode(const std::vector<int>& ids) const;

    struct TokenStats {
        int min_len = 0;
        int max_len = 0;
        double mean_len = 0.0;
    };
    TokenStats token_stats() const;

    void save(const std::string& vocab_path, const std::string& merges_path,
              const std::vector<std::string>& provenance = {}) const;
    static BpeTokenizer load(const std::string& vocab_path, const std::string& merges_path);

    friend BpeTokenizer train_bpe(const std::vector<std::string>& corpus,
                                  const std::vector<uint32_t>& alphabet, int vocab_size,
                                  int max_seq_len);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::pair<std::string, std::string>> merges_;
    int max_seq_len_ = 512;

    // Derived lookup tables, rebuilt after training or loading.
    std::unordered_map<uint32_t, int> char_to_id_;
    std::unordered_map<uint64_t, int> merge_rank_;    // (left id, right id) -> rank
    std::unordered_map<uint64_t, int> merge_result_;  // (left id, right id) -> merged id

    void seed_base_vocab(const std::vector<uint32_t>& alphabet);
    void rebuild_tables();
    std::vector<int> segment(const std::string& text) const;
};

// Learns merge rules by greedy highest-frequency pair merging until the vocab
// target is reached or no pair occurs at least twice. The alphabet is seeded
// into the vocabulary up front so in-alphabet text never needs UNK.
BpeTokenizer train_bpe(const std::vector<std::string>& corpus,
                       const std::vector<uint32_t>& alphabet, int vocab_size = 52000,
                       int max_seq_len = 512);

}  // namespace heartbert
