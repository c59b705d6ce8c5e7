#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowgen/trainer.hpp"
#include "test_util.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
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

struct Rig {
    std::vector<DialogueSession> corpus;
    Vocabulary vocab;
    std::set<std::string> lexicon{"like", "want", "book"};
    VerbVocab verb_vocab;
    Config cfg;
    std::unique_ptr<DialogueModel> model;

    explicit Rig(const std::string& ablation = "full") {
        corpus = {make_session("s0", {"i like tea", "you want milk"}),
                  make_session("s1", {"hello there", "i want sugar"}),
                  make_session("s2", {"good morning", "please book tea"}),
                  make_session("s3", {"we book now", "bye bye"})};
        vocab = build_vocab(corpus, 200);
        verb_vocab = VerbVocab::build(vocab, lexicon);
        cfg.model.layers = 2;
        cfg.model.heads = 2;
        cfg.model.d = 8;
        cfg.model.ffn = 16;
        cfg.model.max_positions = 64;
        cfg.model.num_states = 3;
        cfg.model.flow_layers = 1;
        cfg.model.flow_heads = 1;
        cfg.model.ablation = Ablation::parse(ablation);
        cfg.train.batch_size = 2;
        cfg.train.max_steps = 4;
        cfg.train.eval_every = 2;
        cfg.train.seed = 17;
        model = std::make_unique<DialogueModel>(cfg.model, vocab.size(), verb_vocab.size,
                                                cfg.train.seed);
    }

    std::map<std::string, ag::Mat> snapshot() const {
        std::map<std::string, ag::Mat> out;
        for (const auto& n : model->params().names()) out[n] = model->params().get(n)->value;
        return out;
    }
};

}  // namespace

TEST_CASE("prepare_session builds exactly the companions its objectives need") {
    Rig rig;
    std::mt19937_64 rng(2);
    auto ps = prepare_session(rig.corpus[0], rig.corpus, rig.vocab, rig.lexicon,
                              rig.verb_vocab, Ablation::parse("full"), rng);
    CHECK(!ps.enc.ids.empty());
    CHECK(!ps.shuf.ids.empty());
    CHECK(!ps.neg.ids.empty());
    // "like" in utterance 0, "want" in utterance 1
    REQUIRE(ps.verb_targets.size() == 2);
    CHECK(ps.verb_targets[0].first == 0);
    CHECK(ps.verb_targets[0].second == rig.verb_vocab.verb_class(rig.vocab.id("like")));
    CHECK(ps.verb_targets[1].first == 1);
    CHECK(ps.verb_targets[1].second == rig.verb_vocab.verb_class(rig.vocab.id("want")));

    auto plain = prepare_session(rig.corpus[0], rig.corpus, rig.vocab, rig.lexicon,
                                 rig.verb_vocab, Ablation::parse("no_disentangle"), rng);
    CHECK(plain.shuf.ids.empty());
    CHECK(plain.neg.ids.empty());
    CHECK(plain.verb_targets.empty());
}

TEST_CASE("Adam: first update matches the closed form; frozen params hold still") {
    ParamStore store;
    std::mt19937_64 rng(1);
    auto p = store.create("w", 1, 1, 0.0, rng);  // init 0
    auto q = store.create("frozen.w", 1, 1, 0.0, rng);
    p->value(0, 0) = 2.0;
    q->value(0, 0) = 3.0;
    store.freeze_prefix("frozen.");

    Adam adam(store, /*lr=*/0.1, 0.9, 0.999, 1e-8);
    p->grad = ag::Mat::Constant(1, 1, 0.5);
    q->grad = ag::Mat::Constant(1, 1, 4.0);
    double norm = adam.step(/*grad_clip=*/0.0);
    // Frozen gradients do not count toward the reported norm.
    CHECK(norm == doctest::Approx(0.5).epsilon(1e-12));
    // Bias-corrected first step moves by lr * g / (|g| + eps) ~= lr.
    CHECK(p->value(0, 0) == doctest::Approx(2.0 - 0.1).epsilon(1e-6));
    CHECK(q->value(0, 0) == 3.0);

    // Clipping returns the pre-clip norm and scales the applied update.
    ParamStore s2;
    auto a = s2.create("a", 1, 1, 0.0, rng);
    Adam adam2(s2, 0.1, 0.9, 0.999, 1e-8);
    a->grad = ag::Mat::Constant(1, 1, 10.0);
    CHECK(adam2.step(1.0) == doctest::Approx(10.0));
}

TEST_CASE("training is deterministic given the seed") {
    auto run = [] {
        Rig rig;
        auto dir = testutil::scratch_dir("trainer_det_" + rig.cfg.model.ablation.name());
        auto res = train(*rig.model, rig.cfg, rig.corpus, rig.corpus, rig.vocab, rig.lexicon,
                         rig.verb_vocab, dir);
        return std::pair{res, rig.snapshot()};
    };
    auto [res_a, snap_a] = run();
    auto [res_b, snap_b] = run();
    CHECK(res_a.best_val_loss == res_b.best_val_loss);
    CHECK(res_a.last_breakdown.total == res_b.last_breakdown.total);
    for (const auto& [name, value] : snap_a)
        CHECK((value - snap_b.at(name)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("no_disentangle training logs zero self-supervised terms") {
    Rig rig("no_disentangle");
    auto dir = testutil::scratch_dir("trainer_nodis");
    auto res = train(*rig.model, rig.cfg, rig.corpus, rig.corpus, rig.vocab, rig.lexicon,
                     rig.verb_vocab, dir);
    CHECK(res.last_breakdown.l_hid == 0.0);
    CHECK(res.last_breakdown.l_dir == 0.0);
    CHECK(res.last_breakdown.l_mim == 0.0);
    CHECK(res.last_breakdown.total ==
          doctest::Approx(res.last_breakdown.elbo).epsilon(1e-12));
}

TEST_CASE("freeze_flow keeps the flow-structure weights bit-identical") {
    Rig rig;
    rig.cfg.train.freeze_flow = true;
    auto before = rig.snapshot();
    auto dir = testutil::scratch_dir("trainer_freeze");
    train(*rig.model, rig.cfg, rig.corpus, rig.corpus, rig.vocab, rig.lexicon, rig.verb_vocab,
          dir);
    auto frozen = rig.model->params().frozen_names();
    CHECK(!frozen.empty());
    for (const auto& name : frozen) {
        CHECK((name.rfind("flow.trans", 0) == 0 || name.rfind("flow.mlp", 0) == 0));
        CHECK((before.at(name) - rig.model->params().get(name)->value)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
    // The trainable remainder did move.
    bool moved = false;
    for (const auto& [name, value] : before)
        if (!rig.model->params().is_frozen(name) &&
            (value - rig.model->params().get(name)->value).cwiseAbs().maxCoeff() > 0.0)
            moved = true;
    CHECK(moved);
}

TEST_CASE("early stopping fires when validation cannot improve") {
    Rig rig;
    rig.model->params().freeze_prefix("");  // freeze everything: constant model
    rig.cfg.train.max_steps = 50;
    rig.cfg.train.eval_every = 1;
    rig.cfg.train.early_stop_patience = 2;
    auto dir = testutil::scratch_dir("trainer_earlystop");
    auto res = train(*rig.model, rig.cfg, rig.corpus, rig.corpus, rig.vocab, rig.lexicon,
                     rig.verb_vocab, dir);
    CHECK(res.steps_run == 3);  // best at step 1, two stale evals, stop
    CHECK(res.best_step == 1);
}

TEST_CASE("non-finite loss aborts and names the offending sessions") {
    Rig rig;
    auto emb = rig.model->params().get("backbone.tok_emb");
    emb->value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    auto dir = testutil::scratch_dir("trainer_nan");
    try {
        train(*rig.model, rig.cfg, rig.corpus, rig.corpus, rig.vocab, rig.lexicon,
              rig.verb_vocab, dir);
        FAIL("expected TrainError");
    } catch (const TrainError& e) {
        std::string msg = e.what();
        CHECK(msg.find("non-finite") != std::string::npos);
        CHECK(msg.find("s") != std::string::npos);  // session ids listed
        CHECK(msg.find("step 1") != std::string::npos);
    }
}

TEST_CASE("metric log is valid JSONL with annealing and warm-up columns") {
    Rig rig;
    rig.cfg.train.max_steps = 4;
    rig.cfg.train.kl_warmup = true;
    rig.cfg.train.kl_warmup_frac = 0.5;  // warmup over 2 steps
    auto dir = testutil::scratch_dir("trainer_log");
    train(*rig.model, rig.cfg, rig.corpus, rig.corpus, rig.vocab, rig.lexicon, rig.verb_vocab,
          dir);
    std::ifstream log(dir + "/metrics.jsonl");
    REQUIRE(log.good());
    std::string line;
    int step_lines = 0, val_lines = 0;
    double first_klw = -1.0, last_klw = -1.0;
    while (std::getline(log, line)) {
        auto j = nlohmann::json::parse(line);  // throws on malformed output
        if (j.contains("val_loss")) {
            ++val_lines;
            continue;
        }
        ++step_lines;
        CHECK(j.at("tau").get<double>() <= 1.0);
        last_klw = j.at("kl_weight").get<double>();
        if (first_klw < 0) first_klw = last_klw;
        CHECK(j.at("loss").contains("reconstruction"));
        CHECK(j.at("loss").contains("elbo"));
    }
    CHECK(step_lines == 4);
    CHECK(val_lines >= 2);  // eval_every=2 over 4 steps
    CHECK(first_klw == doctest::Approx(0.5));
    CHECK(last_klw == doctest::Approx(1.0));
}

TEST_CASE("validation helpers: small sets rejected, loss is the negated total") {
    Rig rig;
    std::vector<DialogueSession> tiny = {rig.corpus[0]};
    CHECK_THROWS_AS(validation_loss(*rig.model, rig.cfg, tiny, rig.vocab, rig.lexicon,
                                    rig.verb_vocab, 1),
                    TrainError);
    auto b = validation_breakdown(*rig.model, rig.cfg, rig.corpus, rig.vocab, rig.lexicon,
                                  rig.verb_vocab, 1);
    double loss = validation_loss(*rig.model, rig.cfg, rig.corpus, rig.vocab, rig.lexicon,
                                  rig.verb_vocab, 1);
    CHECK(loss == doctest::Approx(-b.total).epsilon(1e-12));
    CHECK(std::isfinite(b.reconstruction));

    // Fixed noise seed: repeatable to the bit.
    auto b2 = validation_breakdown(*rig.model, rig.cfg, rig.corpus, rig.vocab, rig.lexicon,
                                   rig.verb_vocab, 1);
    CHECK(b.total == b2.total);
    CHECK(b.reconstruction == b2.reconstruction);
}

TEST_CASE("training corpus of one session is rejected") {
    Rig rig;
    std::vector<DialogueSession> one = {rig.corpus[0]};
    auto dir = testutil::scratch_dir("trainer_one");
    CHECK_THROWS_AS(train(*rig.model, rig.cfg, one, rig.corpus, rig.vocab, rig.lexicon,
                          rig.verb_vocab, dir),
                    TrainError);
}
