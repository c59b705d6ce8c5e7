#include "flowgen/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace flowgen {

Vocabulary::Vocabulary() {
    tokens_ = {"[BOS]", "[EOS]", "[PAD]", "[UNK]"};
    for (int i = 0; i < kNumReserved; ++i) ids_[tokens_[i]] = i;
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw CorpusError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) > 0; }

int Vocabulary::add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    int id = size();
    ids_[token] = id;
    tokens_.push_back(token);
    return id;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw CorpusError("cannot write vocabulary: " + path);
    for (const auto& t : tokens_) f << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw CorpusError("cannot read vocabulary: " + path);
    Vocabulary v;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        if (lineno < kNumReserved) {
            if (line != v.tokens_[static_cast<size_t>(lineno)])
                throw CorpusError("vocabulary file is missing reserved tokens: " + path);
        } else {
            v.add(line);
        }
        ++lineno;
    }
    return v;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        out.push_back(tok);
    }
    return out;
}

std::vector<DialogueSession> load_sessions(const std::string& path, const ModelConfig& config) {
    std::ifstream f(path);
    if (!f) throw CorpusError("cannot open corpus file: " + path);
    std::vector<DialogueSession> sessions;
    std::string line;
    int lineno = 0;
    const size_t max_utts = static_cast<size_t>(config.history_window) + 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw CorpusError("corpus parse error at line " + std::to_string(lineno) + ": " +
                              e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("utterances") ||
            !rec["utterances"].is_array())
            throw CorpusError("corpus parse error at line " + std::to_string(lineno) +
                              ": expected {\"id\": str, \"utterances\": [str, ...]}");
        DialogueSession s;
        s.session_id = rec["id"].get<std::string>();
        for (const auto& u : rec["utterances"]) {
            auto toks = tokenize(u.get<std::string>());
            if (toks.empty())
                throw CorpusError("corpus parse error at line " + std::to_string(lineno) +
                                  ": empty utterance after tokenization");
            if (static_cast<int>(toks.size()) > config.max_utt_tokens)
                toks.resize(static_cast<size_t>(config.max_utt_tokens));
            s.utterances.push_back(std::move(toks));
        }
        if (s.utterances.size() < 2)
            throw CorpusError("corpus parse error at line " + std::to_string(lineno) +
                              ": session needs at least 2 utterances");
        // Keep the most recent turns when over the window.
        if (s.utterances.size() > max_utts)
            s.utterances.erase(s.utterances.begin(),
                               s.utterances.end() - static_cast<long>(max_utts));
        sessions.push_back(std::move(s));
    }
    if (sessions.empty()) throw CorpusError("empty corpus: " + path);
    return sessions;
}

Vocabulary build_vocab(const std::vector<DialogueSession>& sessions, int max_size) {
    if (max_size <= Vocabulary::kNumReserved)
        throw ConfigError("vocab max_size must exceed the reserved token count");
    std::map<std::string, long> counts;  // ordered: lexicographic tie-break for free
    for (const auto& s : sessions)
        for (const auto& u : s.utterances)
            for (const auto& t : u) ++counts[t];
    std::vector<std::pair<std::string, long>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [tok, cnt] : items) {
        if (v.size() >= max_size) break;
        v.add(tok);
    }
    return v;
}

EncodedSession concat_session(const DialogueSession& session, const Vocabulary& vocab) {
    EncodedSession enc;
    enc.ids.push_back(Vocabulary::kBos);
    for (const auto& u : session.utterances) {
        int start = static_cast<int>(enc.ids.size());
        for (const auto& t : u) enc.ids.push_back(vocab.id(t));
        enc.ids.push_back(Vocabulary::kEos);
        enc.spans.emplace_back(start, static_cast<int>(enc.ids.size()));
    }
    return enc;
}

std::set<std::string> load_verb_lexicon(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw CorpusError("cannot open verb lexicon: " + path);
    std::set<std::string> lex;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::transform(line.begin(), line.end(), line.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        lex.insert(line);
    }
    return lex;
}

VerbMask mark_verbs(const DialogueSession& session, const std::set<std::string>& lexicon) {
    if (lexicon.empty()) throw CorpusError("verb lexicon is empty");
    VerbMask vm;
    for (const auto& u : session.utterances) {
        std::vector<int> row;
        row.reserve(u.size());
        for (const auto& t : u) {
            std::string lower = t;
            std::transform(lower.begin(), lower.end(), lower.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            row.push_back(lexicon.count(lower) ? 1 : 0);
        }
        vm.mask.push_back(std::move(row));
    }
    return vm;
}

DialogueSession shuffle_session(const DialogueSession& session, std::mt19937_64& rng) {
    if (session.utterances.size() < 2)
        throw CorpusError("shuffle_session: need at least 2 utterances");
    size_t n = session.utterances.size();
    std::vector<size_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = i;
    auto identity = [&] {
        for (size_t i = 0; i < n; ++i)
            if (perm[i] != i) return false;
        return true;
    };
    do {
        std::shuffle(perm.begin(), perm.end(), rng);
    } while (identity());
    DialogueSession out;
    out.session_id = session.session_id + "#shuf";
    for (size_t i : perm) out.utterances.push_back(session.utterances[i]);
    return out;
}

const DialogueSession& sample_negative(const std::vector<DialogueSession>& corpus,
                                       const DialogueSession& anchor, std::mt19937_64& rng) {
    if (corpus.size() < 2) throw CorpusError("sample_negative: corpus has no other session");
    std::uniform_int_distribution<size_t> dist(0, corpus.size() - 1);
    for (;;) {
        const DialogueSession& cand = corpus[dist(rng)];
        if (cand.session_id != anchor.session_id) return cand;
    }
}

Batch make_batch(const std::vector<DialogueSession>& sessions, const Vocabulary& vocab,
                 const std::set<std::string>& verb_lexicon) {
    Batch b;
    size_t max_len = 0;
    std::vector<EncodedSession> encoded;
    for (const auto& s : sessions) {
        encoded.push_back(concat_session(s, vocab));
        max_len = std::max(max_len, encoded.back().ids.size());
    }
    for (size_t k = 0; k < sessions.size(); ++k) {
        const auto& enc = encoded[k];
        std::vector<int> ids = enc.ids;
        std::vector<int> mask(ids.size(), 1);
        std::vector<int> verbs(ids.size(), 0);
        VerbMask vm = mark_verbs(sessions[k], verb_lexicon);
        for (size_t t = 0; t < enc.spans.size(); ++t) {
            int start = enc.spans[t].first;
            for (size_t i = 0; i < vm.mask[t].size(); ++i)
                verbs[static_cast<size_t>(start) + i] = vm.mask[t][i];
        }
        ids.resize(max_len, Vocabulary::kPad);
        mask.resize(max_len, 0);
        verbs.resize(max_len, 0);
        b.ids.push_back(std::move(ids));
        b.pad_mask.push_back(std::move(mask));
        b.verb_mask.push_back(std::move(verbs));
        b.spans.push_back(enc.spans);
        b.session_ids.push_back(sessions[k].session_id);
    }
    return b;
}

}  // namespace flowgen
