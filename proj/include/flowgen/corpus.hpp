#pragma once

#include "flowgen/config.hpp"

#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace flowgen {

struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One dialogue: an ordered list of utterances, each a list of token strings.
struct DialogueSession {
    std::string session_id;
    std::vector<std::vector<std::string>> utterances;
};

class Vocabulary {
public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kPad = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumReserved = 4;

    Vocabulary();

    int id(const std::string& token) const;  // [UNK] fallback
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    bool contains(const std::string& token) const;
    int add(const std::string& token);  // appends if absent, returns id

    void save(const std::string& path) const;  // token per line, line number = id
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// Per-token verb indicator, aligned to the session's token grid.
struct VerbMask {
    std::vector<std::vector<int>> mask;  // mask[t][i] in {0,1}
};

// Token-id sequence for one session plus per-utterance spans. A span covers
// the utterance's tokens and its terminating [EOS]; [BOS] sits at position 0
// outside all spans.
struct EncodedSession {
    std::vector<int> ids;
    std::vector<std::pair<int, int>> spans;  // [start, end) per utterance
};

// Padded batch of encoded sessions.
struct Batch {
    std::vector<std::vector<int>> ids;  // [batch][total_len], PAD-filled tails
    std::vector<std::vector<std::pair<int, int>>> spans;
    std::vector<std::vector<int>> pad_mask;   // 1 = real token, 0 = padding
    std::vector<std::vector<int>> verb_mask;  // flattened to token positions
    std::vector<std::string> session_ids;
};

std::vector<std::string> tokenize(const std::string& text);

std::vector<DialogueSession> load_sessions(const std::string& path, const ModelConfig& config);

Vocabulary build_vocab(const std::vector<DialogueSession>& sessions, int max_size);

EncodedSession concat_session(const DialogueSession& session, const Vocabulary& vocab);

std::set<std::string> load_verb_lexicon(const std::string& path);

VerbMask mark_verbs(const DialogueSession& session, const std::set<std::string>& lexicon);

// Non-identity permutation of the session's utterances.
DialogueSession shuffle_session(const DialogueSession& session, std::mt19937_64& rng);

// Uniform draw over corpus sessions excluding the anchor.
const DialogueSession& sample_negative(const std::vector<DialogueSession>& corpus,
                                       const DialogueSession& anchor, std::mt19937_64& rng);

Batch make_batch(const std::vector<DialogueSession>& sessions, const Vocabulary& vocab,
                 const std::set<std::string>& verb_lexicon);

}  // namespace flowgen
