#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowgen/corpus.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <map>
#include <sstream>

using namespace flowgen;

namespace {

DialogueSession make_session(const std::string& id,
                             const std::vector<std::string>& utterances) {
    DialogueSession s;
    s.session_id = id;
    for (const auto& u : utterances) s.utterances.push_back(tokenize(u));
    return s;
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on whitespace") {
    auto toks = tokenize("  Hello   WORLD\tfoo\n");
    REQUIRE(toks.size() == 3);
    CHECK(toks[0] == "hello");
    CHECK(toks[1] == "world");
    CHECK(toks[2] == "foo");
}

TEST_CASE("load_sessions: truncation and pass-through") {
    auto dir = testutil::scratch_dir("corpus_load");
    std::ostringstream long_utt;
    for (int i = 0; i < 40; ++i) long_utt << "t" << i << " ";
    std::ostringstream jsonl;
    jsonl << R"({"id":"nine","utterances":["u1","u2","u3","u4","u5","u6","u7","u8","u9"]})" << "\n";
    jsonl << R"({"id":"two","utterances":["hi there","yo"]})" << "\n";
    jsonl << R"({"id":"long","utterances":["short one",")" << long_utt.str() << R"("]})" << "\n";
    testutil::write_file(dir + "/c.jsonl", jsonl.str());

    ModelConfig cfg;  // window 7, m_max 32
    auto sessions = load_sessions(dir + "/c.jsonl", cfg);
    REQUIRE(sessions.size() == 3);

    // 9 utterances with window 7 -> keep the most recent 8.
    REQUIRE(sessions[0].utterances.size() == 8);
    CHECK(sessions[0].utterances.front()[0] == "u2");
    CHECK(sessions[0].utterances.back()[0] == "u9");

    // 2 short utterances -> unchanged.
    REQUIRE(sessions[1].utterances.size() == 2);
    CHECK(sessions[1].utterances[0] == std::vector<std::string>{"hi", "there"});

    // 40-token utterance -> truncated to 32.
    CHECK(sessions[2].utterances[1].size() == 32);
    CHECK(sessions[2].utterances[1].front() == "t0");
    CHECK(sessions[2].utterances[1].back() == "t31");
}

TEST_CASE("load_sessions: malformed record names the line, empty file errors") {
    auto dir = testutil::scratch_dir("corpus_err");
    testutil::write_file(dir + "/bad.jsonl",
                         "{\"id\":\"a\",\"utterances\":[\"x\",\"y\"]}\nnot json\n");
    ModelConfig cfg;
    try {
        load_sessions(dir + "/bad.jsonl", cfg);
        FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }

    testutil::write_file(dir + "/empty.jsonl", "");
    CHECK_THROWS_AS(load_sessions(dir + "/empty.jsonl", cfg), CorpusError);

    testutil::write_file(dir + "/single.jsonl", "{\"id\":\"a\",\"utterances\":[\"x\"]}\n");
    CHECK_THROWS_AS(load_sessions(dir + "/single.jsonl", cfg), CorpusError);
}

TEST_CASE("build_vocab: frequency order, ties, reserved tokens, UNK fallback") {
    std::vector<DialogueSession> corpus = {make_session("s", {"a a b", "c b a"})};
    auto vocab = build_vocab(corpus, 6);
    CHECK(vocab.size() == 6);
    CHECK(vocab.id("a") == 4);  // most frequent after the 4 reserved ids
    CHECK(vocab.id("b") == 5);
    CHECK(vocab.id("c") == Vocabulary::kUnk);  // evicted by max_size

    // Equal counts: lexicographically smaller token gets the lower id.
    std::vector<DialogueSession> tie = {make_session("s", {"zebra apple", "zebra apple"})};
    auto tv = build_vocab(tie, 10);
    CHECK(tv.id("apple") < tv.id("zebra"));

    CHECK(vocab.token(Vocabulary::kBos) == "[BOS]");
    CHECK(vocab.token(Vocabulary::kEos) == "[EOS]");
    CHECK(vocab.token(Vocabulary::kPad) == "[PAD]");
    CHECK(vocab.token(Vocabulary::kUnk) == "[UNK]");
    CHECK_THROWS_AS(build_vocab(corpus, 4), ConfigError);
}

TEST_CASE("concat_session: layout, spans, EOS count, round trip") {
    std::vector<DialogueSession> corpus = {make_session("s", {"hi", "yo"})};
    auto vocab = build_vocab(corpus, 100);
    auto enc = concat_session(corpus[0], vocab);

    // [BOS] hi [EOS] yo [EOS]
    REQUIRE(enc.ids.size() == 5);
    CHECK(enc.ids[0] == Vocabulary::kBos);
    CHECK(enc.ids[1] == vocab.id("hi"));
    CHECK(enc.ids[2] == Vocabulary::kEos);
    CHECK(enc.ids[3] == vocab.id("yo"));
    CHECK(enc.ids[4] == Vocabulary::kEos);
    REQUIRE(enc.spans.size() == 2);
    CHECK(enc.spans[0] == std::pair<int, int>{1, 3});  // tokens + terminating [EOS]
    CHECK(enc.spans[1] == std::pair<int, int>{3, 5});

    auto multi = make_session("m", {"a b", "c", "d e f"});
    auto mv = build_vocab({multi}, 100);
    auto menc = concat_session(multi, mv);
    CHECK(std::count(menc.ids.begin(), menc.ids.end(), Vocabulary::kEos) == 3);

    // Round trip: strip specials inside each span -> original token lists.
    for (size_t t = 0; t < multi.utterances.size(); ++t) {
        std::vector<std::string> got;
        for (int i = menc.spans[t].first; i < menc.spans[t].second; ++i)
            if (menc.ids[i] != Vocabulary::kEos) got.push_back(mv.token(menc.ids[i]));
        CHECK(got == multi.utterances[t]);
    }

    // Spans partition the non-[BOS] positions.
    std::vector<int> covered(menc.ids.size(), 0);
    for (auto [s, e] : menc.spans)
        for (int i = s; i < e; ++i) ++covered[static_cast<size_t>(i)];
    CHECK(covered[0] == 0);
    for (size_t i = 1; i < covered.size(); ++i) CHECK(covered[i] == 1);
}

TEST_CASE("mark_verbs: lookup, case folding, misses") {
    std::set<std::string> lexicon = {"like"};
    auto s = make_session("s", {"i like tea"});
    auto mask = mark_verbs(s, lexicon);
    CHECK(mask.mask[0] == std::vector<int>{0, 1, 0});

    auto cased = make_session("s", {"I Like tea"});  // tokenizer lowercases
    CHECK(mark_verbs(cased, lexicon).mask[0] == std::vector<int>{0, 1, 0});

    auto none = make_session("s", {"no hits here"});
    CHECK(mark_verbs(none, lexicon).mask[0] == std::vector<int>{0, 0, 0});
}

TEST_CASE("shuffle_session: swap, multiset preservation, determinism") {
    auto two = make_session("s", {"a", "b"});
    std::mt19937_64 rng(11);
    auto shuf = shuffle_session(two, rng);
    CHECK(shuf.utterances[0][0] == "b");
    CHECK(shuf.utterances[1][0] == "a");

    auto five = make_session("s", {"a", "b", "c", "d", "e"});
    auto sh = shuffle_session(five, rng);
    auto sorted_before = five.utterances;
    auto sorted_after = sh.utterances;
    std::sort(sorted_before.begin(), sorted_before.end());
    std::sort(sorted_after.begin(), sorted_after.end());
    CHECK(sorted_before == sorted_after);
    CHECK(sh.utterances != five.utterances);  // never the identity

    std::mt19937_64 r1(42), r2(42);
    CHECK(shuffle_session(five, r1).utterances == shuffle_session(five, r2).utterances);
}

TEST_CASE("shuffle_session: uniform over non-identity permutations (chi-square)") {
    auto three = make_session("s", {"a", "b", "c"});
    std::mt19937_64 rng(99);
    std::map<std::string, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto sh = shuffle_session(three, rng);
        std::string key;
        for (const auto& u : sh.utterances) key += u[0];
        ++counts[key];
    }
    CHECK(counts.count("abc") == 0);
    REQUIRE(counts.size() == 5);  // 3! - 1 non-identity permutations
    double expected = draws / 5.0;
    double chi2 = 0.0;
    for (const auto& [k, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
    // chi-square with 4 dof: p > 0.01 iff statistic < 13.277
    CHECK(chi2 < 13.277);
}

TEST_CASE("sample_negative: exclusion, forced choice, determinism") {
    std::vector<DialogueSession> corpus = {make_session("a", {"x", "y"}),
                                           make_session("b", {"p", "q"}),
                                           make_session("c", {"m", "n"})};
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1000; ++i)
        CHECK(sample_negative(corpus, corpus[0], rng).session_id != "a");

    std::vector<DialogueSession> two = {corpus[0], corpus[1]};
    CHECK(sample_negative(two, two[0], rng).session_id == "b");

    std::vector<DialogueSession> one = {corpus[0]};
    CHECK_THROWS_AS(sample_negative(one, one[0], rng), CorpusError);

    std::mt19937_64 r1(7), r2(7);
    for (int i = 0; i < 50; ++i)
        CHECK(sample_negative(corpus, corpus[1], r1).session_id ==
              sample_negative(corpus, corpus[1], r2).session_id);
}

TEST_CASE("make_batch pads to the longest session and masks the tail") {
    std::vector<DialogueSession> corpus = {make_session("a", {"one two three", "four"}),
                                           make_session("b", {"x", "y"})};
    auto vocab = build_vocab(corpus, 100);
    auto batch = make_batch(corpus, vocab, {"one"});
    REQUIRE(batch.ids.size() == 2);
    CHECK(batch.ids[0].size() == batch.ids[1].size());
    for (size_t i = 0; i < batch.ids[1].size(); ++i) {
        if (batch.pad_mask[1][i] == 0) CHECK(batch.ids[1][i] == Vocabulary::kPad);
        else CHECK(batch.ids[1][i] != Vocabulary::kPad);
    }
    CHECK(batch.session_ids == std::vector<std::string>{"a", "b"});
}

TEST_CASE("vocabulary save/load round trip") {
    std::vector<DialogueSession> corpus = {make_session("s", {"alpha beta", "gamma"})};
    auto vocab = build_vocab(corpus, 100);
    auto dir = testutil::scratch_dir("vocab_rt");
    vocab.save(dir + "/v.txt");
    auto loaded = Vocabulary::load(dir + "/v.txt");
    CHECK(loaded.size() == vocab.size());
    for (int i = 0; i < vocab.size(); ++i) CHECK(loaded.token(i) == vocab.token(i));
}

TEST_CASE("verb lexicon loads and is case-folded") {
    auto lex = load_verb_lexicon(testutil::data_dir() + "/verbs.txt");
    CHECK(lex.count("like") == 1);
    CHECK(lex.count("thank") == 1);
    CHECK(lex.size() > 100);
}
