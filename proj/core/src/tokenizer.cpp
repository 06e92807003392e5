#include "heartbert/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <unordered_set>

#include "heartbert/errors.hpp"
#include "heartbert/utf8.hpp"

namespace heartbert {

namespace {

uint64_t pair_key(int left, int right) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(left)) << 32) |
           static_cast<uint32_t>(right);
}

}  // namespace

const std::vector<std::string>& BpeTokenizer::special_tokens() {
    static const std::vector<std::string> specials = {"<s>", "<pad>", "</s>", "<unk>", "<mask>"};
    return specials;
}

const std::string& BpeTokenizer::token_of(int id) const {
    if (id < 0 || id >= vocab_size()) fail(ErrorKind::Data, "tokenizer: id out of range");
    return id_to_token_[static_cast<size_t>(id)];
}

int BpeTokenizer::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
}

void BpeTokenizer::seed_base_vocab(const std::vector<uint32_t>& alphabet) {
    id_to_token_.clear();
    token_to_id_.clear();
    for (const auto& s : special_tokens()) {
        token_to_id_[s] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(s);
    }
    for (uint32_t cp : alphabet) {
        std::string s;
        utf8_append(s, cp);
        if (token_to_id_.count(s)) fail(ErrorKind::Parameter, "tokenizer: duplicate alphabet character");
        token_to_id_[s] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(s);
    }
}

void BpeTokenizer::rebuild_tables() {
    char_to_id_.clear();
    merge_rank_.clear();
    merge_result_.clear();
    for (int id = kFirstAlphabetId; id < vocab_size(); ++id) {
        const std::string& tok = id_to_token_[static_cast<size_t>(id)];
        auto cps = utf8_decode(tok);
        if (cps.size() == 1) char_to_id_[cps[0]] = id;
    }
    for (size_t rank = 0; rank < merges_.size(); ++rank) {
        const auto& [left, right] = merges_[rank];
        int lid = id_of(left);
        int rid = id_of(right);
        int mid = id_of(left + right);
        if (lid < 0 || rid < 0 || mid < 0) {
            fail(ErrorKind::Format, "tokenizer: merge rule references unknown token");
        }
        uint64_t key = pair_key(lid, rid);
        if (merge_rank_.count(key)) fail(ErrorKind::Format, "tokenizer: duplicate merge rule");
        merge_rank_[key] = static_cast<int>(rank);
        merge_result_[key] = mid;
    }
}

std::vector<int> BpeTokenizer::segment(const std::string& text) const {
    auto cps = utf8_decode(text);
    std::vector<int> toks;
    toks.reserve(cps.size());
    for (uint32_t cp : cps) {
        auto it = char_to_id_.find(cp);
        if (it == char_to_id_.end()) {
            std::string c;
            utf8_append(c, cp);
            fail(ErrorKind::Symbol, "tokenizer: character '" + c + "' not in alphabet");
        }
        toks.push_back(it->second);
    }
    if (toks.size() < 2 || merge_rank_.empty()) return toks;

    // Linked-list merge: always apply the lowest-rank rule, leftmost first.
    // Heap entries go stale when a neighbour is consumed; they are validated
    // against the live list on pop.
    std::vector<int> nxt(toks.size()), prv(toks.size());
    for (size_t i = 0; i < toks.size(); ++i) {
        nxt[i] = static_cast<int>(i) + 1 < static_cast<int>(toks.size()) ? static_cast<int>(i) + 1 : -1;
        prv[i] = static_cast<int>(i) - 1;
    }
    using Entry = std::pair<int, int>;  // (rank, position)
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    auto push_pair = [&](int i) {
        if (i < 0 || nxt[i] < 0) return;
        auto it = merge_rank_.find(pair_key(toks[static_cast<size_t>(i)], toks[static_cast<size_t>(nxt[i])]));
        if (it != merge_rank_.end()) heap.emplace(it->second, i);
    };
    for (size_t i = 0; i + 1 < toks.size(); ++i) push_pair(static_cast<int>(i));
    while (!heap.empty()) {
        auto [rank, i] = heap.top();
        heap.pop();
        if (toks[static_cast<size_t>(i)] < 0 || nxt[i] < 0) continue;
        int j = nxt[i];
        uint64_t key = pair_key(toks[static_cast<size_t>(i)], toks[static_cast<size_t>(j)]);
        auto it = merge_rank_.find(key);
        if (it == merge_rank_.end() || it->second != rank) continue;
        toks[static_cast<size_t>(i)] = merge_result_.at(key);
        toks[static_cast<size_t>(j)] = -1;
        nxt[i] = nxt[j];
        if (nxt[i] >= 0) prv[nxt[i]] = i;
        push_pair(prv[i]);
        push_pair(i);
    }
    std::vector<int> out;
    out.reserve(toks.size());
    for (size_t i = 0; i < toks.size(); i = static_cast<size_t>(nxt[i])) {
        out.push_back(toks[i]);
        if (nxt[i] < 0) break;
    }
    return out;
}

TokenizedSequence BpeTokenizer::encode(const std::string& text, std::optional<int> pad_to) const {
    std::vector<int> body = segment(text);
    TokenizedSequence seq;
    size_t max_body = static_cast<size_t>(max_seq_len_) - 2;
    if (body.size() > max_body) {
        body.resize(max_body);
        seq.overflow = true;
    }
    seq.ids.reserve(body.size() + 2);
    seq.ids.push_back(kBosId);
    seq.ids.insert(seq.ids.end(), body.begin(), body.end());
    seq.ids.push_back(kEosId);
    seq.attention_mask.assign(seq.ids.size(), 1);
    if (pad_to) {
        if (*pad_to > max_seq_len_) fail(ErrorKind::Parameter, "encode: pad_to exceeds max sequence length");
        if (static_cast<size_t>(*pad_to) < seq.ids.size()) {
            fail(ErrorKind::Parameter, "encode: pad_to shorter than the encoded sequence");
        }
        seq.ids.resize(static_cast<size_t>(*pad_to), kPadId);
        seq.attention_mask.resize(static_cast<size_t>(*pad_to), 0);
    }
    return seq;
}

std::string BpeTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab_size()) fail(ErrorKind::Data, "decode: unknown token id");
        if (id < kFirstAlphabetId) continue;
        out += id_to_token_[static_cast<size_t>(id)];
    }
    return out;
}

BpeTokenizer::TokenStats BpeTokenizer::token_stats() const {
    TokenStats stats;
    long long total = 0;
    int count = 0;
    for (int id = kFirstAlphabetId; id < vocab_size(); ++id) {
        int len = static_cast<int>(utf8_length(id_to_token_[static_cast<size_t>(id)]));
        if (count == 0) {
            stats.min_len = stats.max_len = len;
        } else {
            stats.min_len = std::min(stats.min_len, len);
            stats.max_len = std::max(stats.max_len, len);
        }
        total += len;
        ++count;
    }
    if (count > 0) stats.mean_len = static_cast<double>(total) / static_cast<double>(count);
    return stats;
}

BpeTokenizer train_bpe(const std::vector<std::string>& corpus, const std::vector<uint32_t>& alphabet,
                       int vocab_size, int max_seq_len) {
    if (corpus.empty()) fail(ErrorKind::Data, "train_bpe: empty corpus");
    if (alphabet.empty()) fail(ErrorKind::Parameter, "train_bpe: empty alphabet");
    int base = static_cast<int>(BpeTokenizer::special_tokens().size()) + static_cast<int>(alphabet.size());
    if (vocab_size < base) fail(ErrorKind::Parameter, "train_bpe: vocab_size smaller than specials + alphabet");
    if (max_seq_len < 3) fail(ErrorKind::Parameter, "train_bpe: max_seq_len must be >= 3");

    BpeTokenizer tok;
    tok.max_seq_len_ = max_seq_len;
    tok.seed_base_vocab(alphabet);

    std::unordered_map<uint32_t, int> char_ids;
    for (size_t i = 0; i < alphabet.size(); ++i) {
        char_ids[alphabet[i]] = BpeTokenizer::kFirstAlphabetId + static_cast<int>(i);
    }
    std::vector<std::vector<int>> lines;
    lines.reserve(corpus.size());
    for (const auto& text : corpus) {
        std::vector<int> toks;
        for (uint32_t cp : utf8_decode(text)) {
            auto it = char_ids.find(cp);
            if (it == char_ids.end()) fail(ErrorKind::Symbol, "train_bpe: corpus character not in alphabet");
            toks.push_back(it->second);
        }
        lines.push_back(std::move(toks));
    }

    std::unordered_map<uint64_t, long long> pair_count;
    std::unordered_map<uint64_t, std::unordered_set<int>> pair_lines;
    for (size_t li = 0; li < lines.size(); ++li) {
        const auto& line = lines[li];
        for (size_t i = 0; i + 1 < line.size(); ++i) {
            uint64_t key = pair_key(line[i], line[i + 1]);
            pair_count[key] += 1;
            pair_lines[key].insert(static_cast<int>(li));
        }
    }

    const auto& specials = BpeTokenizer::special_tokens();
    auto is_special_string = [&](const std::string& s) {
        return std::find(specials.begin(), specials.end(), s) != specials.end();
    };

    while (tok.vocab_size() < vocab_size) {
        // Pick the most frequent pair; ties resolve by the lexicographically
        // smallest concatenated string, then the smallest left token.
        long long best_count = 1;
        int best_left = -1, best_right = -1;
        std::string best_concat, best_left_str;
        for (const auto& [key, count] : pair_count) {
            if (count < best_count || count < 2) continue;
            int left = static_cast<int>(key >> 32);
            int right = static_cast<int>(key & 0xffffffffu);
            const std::string& ls = tok.id_to_token_[static_cast<size_t>(left)];
            const std::string& rs = tok.id_to_token_[static_cast<size_t>(right)];
            std::string concat = ls + rs;
            if (is_special_string(concat)) continue;
            if (count > best_count || (count == best_count &&
                                       (concat < best_concat ||
                                        (concat == best_concat && ls < best_left_str)))) {
                best_count = count;
                best_left = left;
                best_right = right;
                best_concat = std::move(concat);
                best_left_str = ls;
            }
        }
        if (best_left < 0) break;

        const std::string left_str = tok.id_to_token_[static_cast<size_t>(best_left)];
        const std::string right_str = tok.id_to_token_[static_cast<size_t>(best_right)];
        int merged_id = tok.id_of(best_concat);
        if (merged_id < 0) {
            merged_id = tok.vocab_size();
            tok.token_to_id_[best_concat] = merged_id;
            tok.id_to_token_.push_back(best_concat);
        }
        tok.merges_.emplace_back(left_str, right_str);

        // Rewrite only the lines that contain the pair, keeping the global
        // pair counts and the pair -> lines index in sync.
        uint64_t merged_key = pair_key(best_left, best_right);
        auto affected = std::move(pair_lines[merged_key]);
        pair_lines.erase(merged_key);
        for (int li : affected) {
            auto& line = lines[static_cast<size_t>(li)];
            bool contains = false;
            for (size_t i = 0; i + 1 < line.size(); ++i) {
                if (line[i] == best_left && line[i + 1] == best_right) {
                    contains = true;
                    break;
                }
            }
            if (!contains) continue;  // stale index entry
            for (size_t i = 0; i + 1 < line.size(); ++i) {
                pair_count[pair_key(line[i], line[i + 1])] -= 1;
            }
            std::vector<int> rewritten;
            rewritten.reserve(line.size());
            for (size_t i = 0; i < line.size();) {
                if (i + 1 < line.size() && line[i] == best_left && line[i + 1] == best_right) {
                    rewritten.push_back(merged_id);
                    i += 2;
                } else {
                    rewritten.push_back(line[i]);
                    i += 1;
                }
            }
            line = std::move(rewritten);
            for (size_t i = 0; i + 1 < line.size(); ++i) {
                uint64_t key = pair_key(line[i], line[i + 1]);
                pair_count[key] += 1;
                pair_lines[key].insert(li);
            }
        }
        for (auto it = pair_count.begin(); it != pair_count.end();) {
            it = it->second <= 0 ? pair_count.erase(it) : std::next(it);
        }
    }

    tok.rebuild_tables();
    return tok;
}

void BpeTokenizer::save(const std::string& vocab_path, const std::string& merges_path,
                        const std::vector<std::string>& provenance) const {
    std::ofstream vout(vocab_path, std::ios::binary);
    if (!vout) fail(ErrorKind::MissingArtifact, "cannot write vocab file: " + vocab_path);
    vout << "HBT v1 vocab=" << vocab_size() << " maxseq=" << max_seq_len_ << "\n";
    for (const auto& line : provenance) vout << "#> " << line << "\n";
    for (int id = 0; id < vocab_size(); ++id) {
        vout << id_to_token_[static_cast<size_t>(id)] << "\t" << id << "\n";
    }
    std::ofstream mout(merges_path, std::ios::binary);
    if (!mout) fail(ErrorKind::MissingArtifact, "cannot write merges file: " + merges_path);
    mout << "HBT v1 vocab=" << vocab_size() << "\n";
    for (const auto& line : provenance) mout << "#> " << line << "\n";
    for (const auto& [left, right] : merges_) mout << left << "\t" << right << "\n";
}

BpeTokenizer BpeTokenizer::load(const std::string& vocab_path, const std::string& merges_path) {
    std::ifstream vin(vocab_path, std::ios::binary);
    if (!vin) fail(ErrorKind::MissingArtifact, "vocab file not found: " + vocab_path);
    std::string line;
    if (!std::getline(vin, line) || line.rfind("HBT v1 vocab=", 0) != 0) {
        fail(ErrorKind::Format, "vocab file: bad header in " + vocab_path);
    }
    int declared = 0;
    int max_seq_len = 512;  // headers without maxseq= predate the field
    try {
        declared = std::stoi(line.substr(13));
        const auto ms = line.find(" maxseq=");
        if (ms != std::string::npos) max_seq_len = std::stoi(line.substr(ms + 8));
    } catch (const std::exception&) {
        fail(ErrorKind::Format, "vocab file: bad vocab count in header");
    }
    if (max_seq_len < 3) fail(ErrorKind::Format, "vocab file: maxseq must be >= 3");

    BpeTokenizer tok;
    tok.max_seq_len_ = max_seq_len;
    std::vector<std::pair<std::string, int>> entries;
    while (std::getline(vin, line)) {
        if (line.empty() || line.rfind("#>", 0) == 0) continue;
        auto tab = line.rfind('\t');
        if (tab == std::string::npos) fail(ErrorKind::Format, "vocab file: missing tab in '" + line + "'");
        int id = 0;
        try {
            id = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
            fail(ErrorKind::Format, "vocab file: bad id in '" + line + "'");
        }
        entries.emplace_back(line.substr(0, tab), id);
    }
    if (static_cast<int>(entries.size()) != declared) {
        fail(ErrorKind::Format, "vocab file: entry count does not match header");
    }
    tok.id_to_token_.assign(entries.size(), "");
    for (auto& [token, id] : entries) {
        if (id < 0 || id >= static_cast<int>(entries.size()) || !tok.id_to_token_[static_cast<size_t>(id)].empty()) {
            fail(ErrorKind::Format, "vocab file: ids not dense in [0, vocab)");
        }
        tok.id_to_token_[static_cast<size_t>(id)] = token;
        if (!tok.token_to_id_.emplace(std::move(token), id).second) {
            fail(ErrorKind::Format, "vocab file: duplicate token string");
        }
    }
    const auto& specials = special_tokens();
    for (size_t i = 0; i < specials.size(); ++i) {
        if (tok.id_to_token_[i] != specials[i]) {
            fail(ErrorKind::Format, "vocab file: special tokens missing or misplaced");
        }
    }

    std::ifstream min(merges_path, std::ios::binary);
    if (!min) fail(ErrorKind::MissingArtifact, "merges file not found: " + merges_path);
    if (!std::getline(min, line) || line.rfind("HBT v1 vocab=", 0) != 0) {
        fail(ErrorKind::Format, "merges file: bad header in " + merges_path);
    }
    while (std::getline(min, line)) {
        if (line.empty() || line.rfind("#>", 0) == 0) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) fail(ErrorKind::Format, "merges file: missing tab in '" + line + "'");
        tok.merges_.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }

    // Replaying the merge list from the base alphabet must reconstruct the
    // stored vocabulary exactly.
    std::set<std::string> replay;
    for (const auto& s : specials) replay.insert(s);
    for (int id = kFirstAlphabetId; id < tok.vocab_size(); ++id) {
        if (utf8_length(tok.id_to_token_[static_cast<size_t>(id)]) == 1) {
            replay.insert(tok.id_to_token_[static_cast<size_t>(id)]);
        }
    }
    for (const auto& [left, right] : tok.merges_) {
        if (!replay.count(left) || !replay.count(right)) {
            fail(ErrorKind::Format, "merges file: rule operand precedes its definition");
        }
        replay.insert(left + right);
    }
    if (static_cast<int>(replay.size()) != tok.vocab_size()) {
        fail(ErrorKind::Format, "merges file: replay does not reconstruct the vocab");
    }
    for (const auto& s : replay) {
        if (!tok.token_to_id_.count(s)) {
            fail(ErrorKind::Format, "merges file: replay token missing from vocab");
        }
    }

    tok.rebuild_tables();
    return tok;
}

}  // namespace heartbert
