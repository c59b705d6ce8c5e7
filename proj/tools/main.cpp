#include "flowgen/evalkit.hpp"
#include "flowgen/generator.hpp"
#include "flowgen/synth.hpp"
#include "flowgen/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowgen;

namespace {

std::string now_iso() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::uint64_t fnv1a(std::uint64_t h, const char* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string content_hash(const std::vector<std::string>& paths,
                         const std::map<std::string, std::string>& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : paths) {
        std::ifstream f(p, std::ios::binary);
        if (!f) continue;
        char buf[1 << 16];
        while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
            h = fnv1a(h, buf, static_cast<size_t>(f.gcount()));
    }
    for (const auto& [k, v] : config) {
        h = fnv1a(h, k.data(), k.size());
        h = fnv1a(h, v.data(), v.size());
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

// Run directories are immutable: a completed run leaves a manifest behind and
// must never be reused.
void claim_run_dir(const std::string& out) {
    if (fs::exists(out + "/manifest.json"))
        throw std::runtime_error("run directory " + out +
                                 " already holds a completed run; use a new directory");
    fs::create_directories(out);
}

void write_manifest(const std::string& out, const std::string& command, const Config& cfg,
                    const std::vector<std::string>& inputs, std::uint64_t seed,
                    const std::string& started, json extra) {
    json m;
    m["command"] = command;
    m["config"] = cfg.to_flat();
    m["content_hash"] = content_hash(inputs, cfg.to_flat());
    m["seed"] = seed;
    m["started"] = started;
    m["finished"] = now_iso();
    m["inputs"] = inputs;
    for (auto& [k, v] : extra.items()) m[k] = v;
    std::ofstream f(out + "/manifest.json");
    if (!f) throw std::runtime_error("cannot write manifest in " + out);
    f << m.dump(2) << "\n";
}

struct CommonOpts {
    std::string config_path, corpus, out, checkpoint, vocab_path, verbs = "data/verbs.txt";
    std::string ablation;
    std::vector<std::string> sets;
    std::int64_t seed = -1;
    bool freeze_flow = false;
    bool deterministic = false;
};

Config build_config(const CommonOpts& o) {
    Config cfg = o.config_path.empty() ? Config{} : Config::from_file(o.config_path);
    for (const auto& kv : o.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.ablation.empty()) cfg.model.ablation = Ablation::parse(o.ablation);
    if (o.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(o.seed);
    if (o.freeze_flow) cfg.train.freeze_flow = true;
    if (o.deterministic) cfg.decode.deterministic_latents = true;
    cfg.model.validate();
    cfg.train.validate();
    cfg.decode.validate();
    return cfg;
}

// Deterministic split: every k-th session goes to validation. Tiny corpora
// validate on the training set itself.
void split_sessions(const std::vector<DialogueSession>& all, double val_frac,
                    std::vector<DialogueSession>& train_out,
                    std::vector<DialogueSession>& val_out) {
    int k = val_frac > 0.0 ? std::max(2, static_cast<int>(1.0 / val_frac)) : 0;
    for (size_t i = 0; i < all.size(); ++i) {
        if (k > 0 && i % static_cast<size_t>(k) == static_cast<size_t>(k) - 1)
            val_out.push_back(all[i]);
        else
            train_out.push_back(all[i]);
    }
    if (val_out.size() < 2 || train_out.size() < 2) {
        train_out = all;
        val_out = all;
    }
}

struct LoadedModel {
    LoadedCheckpoint ckpt;
    Vocabulary vocab;
};

LoadedModel load_model(const CommonOpts& o) {
    if (o.checkpoint.empty()) throw std::runtime_error("--checkpoint is required");
    LoadedModel lm;
    lm.ckpt = load_checkpoint(o.checkpoint);
    std::string vp = o.vocab_path;
    if (vp.empty()) {
        std::string local = o.checkpoint + "/vocab.txt";
        std::string parent = (fs::path(o.checkpoint).parent_path() / "vocab.txt").string();
        vp = fs::exists(local) ? local : parent;
    }
    lm.vocab = Vocabulary::load(vp);
    if (lm.vocab.size() != lm.ckpt.vocab_size)
        throw CheckpointError("vocabulary size " + std::to_string(lm.vocab.size()) +
                              " does not match checkpoint (" +
                              std::to_string(lm.ckpt.vocab_size) + ")");
    return lm;
}

std::string join_tokens(const std::vector<std::string>& toks) {
    std::string s;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) s += " ";
        s += toks[i];
    }
    return s;
}

int cmd_synth(const CommonOpts& o, const std::string& spec_path, int states, int sessions,
              int turns, int variant) {
    std::string started = now_iso();
    claim_run_dir(o.out);
    SynthSpec spec;
    if (!spec_path.empty()) {
        spec = SynthSpec::from_json_file(spec_path);
    } else {
        spec.num_states = states;
        spec.sessions = sessions;
        spec.turns = turns;
        spec.templates = default_templates(states, variant);
    }
    if (o.seed >= 0) spec.seed = static_cast<std::uint64_t>(o.seed);
    auto corpus = synthesize(spec);
    write_synth(corpus, o.out + "/corpus.jsonl", o.out + "/labels.jsonl");
    Eigen::MatrixXd trans = spec.transition.size() != 0
                                ? spec.transition
                                : random_stochastic_matrix(spec.num_states, spec.seed);
    json transition = json::array();
    for (int r = 0; r < trans.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < trans.cols(); ++c) row.push_back(trans(r, c));
        transition.push_back(row);
    }
    write_manifest(o.out, "synth", Config{}, spec_path.empty() ? std::vector<std::string>{}
                                                               : std::vector<std::string>{spec_path},
                   spec.seed, started,
                   {{"outputs", {o.out + "/corpus.jsonl", o.out + "/labels.jsonl"}},
                    {"num_states", spec.num_states},
                    {"sessions", spec.sessions},
                    {"turns", spec.turns},
                    {"transition", transition}});
    std::cout << "wrote " << spec.sessions << " sessions to " << o.out << "\n";
    return 0;
}

int cmd_train(const CommonOpts& o, double val_frac) {
    std::string started = now_iso();
    Config cfg = build_config(o);
    claim_run_dir(o.out);
    auto all = load_sessions(o.corpus, cfg.model);
    std::vector<DialogueSession> train_s, val_s;
    split_sessions(all, val_frac, train_s, val_s);
    auto verbs = load_verb_lexicon(o.verbs);

    std::unique_ptr<DialogueModel> model;
    Vocabulary vocab;
    VerbVocab vv;
    if (!o.checkpoint.empty()) {
        // Fine-tune: parameters and model shape come from the checkpoint, the
        // optimization settings from this run's config.
        auto lm = load_model(o);
        vocab = lm.vocab;
        cfg.model = lm.ckpt.config.model;
        vv = VerbVocab::build(vocab, verbs);
        model = std::move(lm.ckpt.model);
    } else {
        vocab = build_vocab(train_s, cfg.model.vocab_max);
        vv = VerbVocab::build(vocab, verbs);
        model = std::make_unique<DialogueModel>(cfg.model, vocab.size(), vv.size,
                                                cfg.train.seed);
    }
    vocab.save(o.out + "/vocab.txt");

    auto result = train(*model, cfg, train_s, val_s, vocab, verbs, vv, o.out);
    json extra = {{"best_checkpoint", result.best_checkpoint},
                  {"best_val_loss", result.best_val_loss},
                  {"best_step", result.best_step},
                  {"steps_run", result.steps_run},
                  {"train_sessions", train_s.size()},
                  {"val_sessions", val_s.size()},
                  {"outputs", {result.best_checkpoint, o.out + "/metrics.jsonl"}}};
    if (cfg.train.freeze_flow) extra["frozen_params"] = model->params().frozen_names();
    write_manifest(o.out, "train", cfg, {o.corpus, o.verbs}, cfg.train.seed, started, extra);
    std::cout << "best checkpoint: " << result.best_checkpoint
              << " (val loss " << result.best_val_loss << ")\n";
    return 0;
}

int cmd_eval(const CommonOpts& o, bool echo) {
    std::string started = now_iso();
    claim_run_dir(o.out);
    auto lm = load_model(o);
    Config cfg = lm.ckpt.config;
    if (o.seed >= 0) cfg.decode.seed = static_cast<std::uint64_t>(o.seed);
    auto sessions = load_sessions(o.corpus, cfg.model);

    std::vector<TokenSeq> hyps, refs;
    std::ofstream gen(o.out + "/generations.jsonl");
    for (const auto& s : sessions) {
        if (s.utterances.size() < 2) continue;
        DialogueSession context = s;
        context.utterances.pop_back();
        TokenSeq ref = s.utterances.back();
        TokenSeq hyp;
        if (echo) {
            hyp = ref;
        } else {
            hyp = generate(*lm.ckpt.model, lm.vocab, context, cfg.decode).tokens;
        }
        gen << json{{"id", s.session_id},
                    {"hypothesis", join_tokens(hyp)},
                    {"reference", join_tokens(ref)}}
                   .dump()
            << "\n";
        hyps.push_back(std::move(hyp));
        refs.push_back(std::move(ref));
    }
    if (hyps.empty()) throw EvalError("no session in " + o.corpus + " has >= 2 utterances");
    MetricReport rep = evaluate_pairs(hyps, refs);
    rep.config_hash = content_hash({o.corpus}, cfg.to_flat());
    std::ofstream rf(o.out + "/report.json");
    rf << rep.to_json() << "\n";
    write_manifest(o.out, "eval", cfg, {o.corpus, o.checkpoint + "/params.bin"},
                   cfg.decode.seed, started,
                   {{"outputs", {o.out + "/report.json", o.out + "/generations.jsonl"}},
                    {"pairs", hyps.size()},
                    {"echo", echo}});
    std::cout << rep.to_json() << "\n";
    return 0;
}

int cmd_generate(const CommonOpts& o) {
    std::string started = now_iso();
    claim_run_dir(o.out);
    auto lm = load_model(o);
    Config cfg = lm.ckpt.config;
    if (o.seed >= 0) cfg.decode.seed = static_cast<std::uint64_t>(o.seed);
    auto sessions = load_sessions(o.corpus, cfg.model);

    std::ofstream gen(o.out + "/generations.jsonl");
    for (const auto& s : sessions) {
        auto trace = generate(*lm.ckpt.model, lm.vocab, s, cfg.decode);
        json j;
        j["id"] = s.session_id;
        j["response"] = join_tokens(trace.tokens);
        j["context_states"] = trace.context_states;
        j["chosen_state"] = trace.chosen_state;
        j["score"] = trace.score;
        std::vector<double> probs(trace.next_state_probs.data(),
                                  trace.next_state_probs.data() + trace.next_state_probs.size());
        j["next_state_probs"] = probs;
        gen << j.dump() << "\n";
    }
    write_manifest(o.out, "generate", cfg, {o.corpus, o.checkpoint + "/params.bin"},
                   cfg.decode.seed, started,
                   {{"outputs", {o.out + "/generations.jsonl"}}, {"sessions", sessions.size()}});
    std::cout << "wrote " << o.out << "/generations.jsonl\n";
    return 0;
}

int cmd_chat(const CommonOpts& o) {
    auto lm = load_model(o);
    Config cfg = lm.ckpt.config;
    if (o.seed >= 0) cfg.decode.seed = static_cast<std::uint64_t>(o.seed);
    repl(*lm.ckpt.model, lm.vocab, cfg.decode, std::cin, std::cout);
    return 0;
}

int cmd_inspect(const CommonOpts& o, const std::string& labels_path) {
    std::string started = now_iso();
    claim_run_dir(o.out);
    auto lm = load_model(o);
    Config cfg = lm.ckpt.config;
    auto sessions = load_sessions(o.corpus, cfg.model);

    auto assignments = assign_states(sessions, *lm.ckpt.model, lm.vocab);
    auto tm = transition_matrix(assignments, cfg.model.num_states);
    export_structure(assignments, tm, o.out + "/clusters.json", o.out + "/flow.dot");

    json extra = {{"outputs", {o.out + "/clusters.json", o.out + "/flow.dot"}},
                  {"utterances", assignments.rows.size()},
                  {"empty_states", tm.empty_states}};
    if (!labels_path.empty()) {
        auto labels = load_labels(labels_path);
        if (labels.size() != sessions.size())
            throw EvalError("label file covers " + std::to_string(labels.size()) +
                            " sessions, corpus has " + std::to_string(sessions.size()));
        std::vector<int> truth;
        size_t row = 0;
        for (size_t i = 0; i < sessions.size(); ++i)
            for (size_t t = 0; t < sessions[i].utterances.size(); ++t, ++row)
                truth.push_back(labels[i].at(t));
        double ami = structure_recovery_score(assignments, truth);
        extra["structure_recovery_ami"] = ami;
        std::cout << "structure recovery AMI: " << ami << "\n";
    }
    write_manifest(o.out, "inspect", cfg, {o.corpus, o.checkpoint + "/params.bin"},
                   cfg.train.seed, started, extra);
    std::cout << "wrote " << o.out << "/clusters.json and flow.dot\n";
    return 0;
}

int cmd_transfer(const CommonOpts& o, const std::string& corpus_a, const std::string& corpus_b,
                 int finetune_steps, double val_frac) {
    std::string started = now_iso();
    Config cfg = build_config(o);
    claim_run_dir(o.out);
    auto sessions_a = load_sessions(corpus_a, cfg.model);
    auto sessions_b = load_sessions(corpus_b, cfg.model);
    auto verbs = load_verb_lexicon(o.verbs);

    // One vocabulary across both domains so fine-tuning sees no unknowns.
    std::vector<DialogueSession> joint = sessions_a;
    joint.insert(joint.end(), sessions_b.begin(), sessions_b.end());
    Vocabulary vocab = build_vocab(joint, cfg.model.vocab_max);
    vocab.save(o.out + "/vocab.txt");
    VerbVocab vv = VerbVocab::build(vocab, verbs);

    std::vector<DialogueSession> tr_a, va_a, tr_b, va_b;
    split_sessions(sessions_a, val_frac, tr_a, va_a);
    split_sessions(sessions_b, val_frac, tr_b, va_b);

    DialogueModel pre(cfg.model, vocab.size(), vv.size, cfg.train.seed);
    Config pre_cfg = cfg;
    pre_cfg.train.freeze_flow = false;
    auto pre_res = train(pre, pre_cfg, tr_a, va_a, vocab, verbs, vv, o.out + "/pretrain");

    json report;
    report["pretrain_checkpoint"] = pre_res.best_checkpoint;
    std::vector<std::string> frozen_names;
    for (bool freeze : {false, true}) {
        auto lc = load_checkpoint(pre_res.best_checkpoint);
        Config ft_cfg = cfg;
        ft_cfg.train.freeze_flow = freeze;
        if (finetune_steps > 0) ft_cfg.train.max_steps = finetune_steps;
        std::string sub = o.out + std::string(freeze ? "/finetune_frozen" : "/finetune_free");
        auto res = train(*lc.model, ft_cfg, tr_b, va_b, vocab, verbs, vv, sub);
        auto bd = validation_breakdown(*lc.model, ft_cfg, va_b, vocab, verbs, vv,
                                       ft_cfg.train.seed + 9973);
        const char* key = freeze ? "frozen" : "unfrozen";
        report[key] = {{"checkpoint", res.best_checkpoint},
                       {"val_loss", res.best_val_loss},
                       {"val_recon_nll", -bd.reconstruction}};
        if (freeze) frozen_names = lc.model->params().frozen_names();
    }
    double free_nll = report["unfrozen"]["val_recon_nll"].get<double>();
    double frozen_nll = report["frozen"]["val_recon_nll"].get<double>();
    report["relative_degradation"] = (frozen_nll - free_nll) / std::abs(free_nll);

    std::ofstream rf(o.out + "/transfer_report.json");
    rf << report.dump(2) << "\n";
    write_manifest(o.out, "transfer", cfg, {corpus_a, corpus_b, o.verbs}, cfg.train.seed,
                   started,
                   {{"outputs", {o.out + "/transfer_report.json"}},
                    {"frozen_params", frozen_names},
                    {"ablation", cfg.model.ablation.name()}});
    std::cout << report.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent conversation-flow dialogue model"};
    app.require_subcommand(1);
    CommonOpts o;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", o.config_path, "flat dotted-key config file");
        sub->add_option("--seed", o.seed, "seed override");
        sub->add_option("--set", o.sets, "config override key=value (repeatable)");
        if (needs_out) sub->add_option("--out", o.out, "run directory")->required();
    };

    auto* synth = app.add_subcommand("synth", "generate a Markov-chain corpus with labels");
    std::string spec_path;
    int states = 4, sessions = 1000, turns = 6, variant = 0;
    synth->add_option("--spec", spec_path, "synth spec JSON");
    synth->add_option("--states", states, "number of latent states");
    synth->add_option("--sessions", sessions, "sessions to generate");
    synth->add_option("--turns", turns, "turns per session");
    synth->add_option("--template-variant", variant, "template vocabulary variant");
    add_common(synth, true);

    auto* train_cmd = app.add_subcommand("train", "train a model");
    double val_frac = 0.1;
    train_cmd->add_option("--corpus", o.corpus, "training corpus JSONL")->required();
    train_cmd->add_option("--checkpoint", o.checkpoint, "initialize from checkpoint");
    train_cmd->add_option("--vocab", o.vocab_path, "vocabulary file (with --checkpoint)");
    train_cmd->add_option("--verbs", o.verbs, "verb lexicon path");
    train_cmd->add_option("--ablation", o.ablation,
                          "full|no_c|no_zS|no_zI|no_zS_zI|no_disentangle");
    train_cmd->add_flag("--freeze-flow", o.freeze_flow, "freeze flow-structure parameters");
    train_cmd->add_option("--val-frac", val_frac, "validation fraction");
    add_common(train_cmd, true);

    auto* eval_cmd = app.add_subcommand("eval", "generate responses and score them");
    bool echo = false;
    eval_cmd->add_option("--corpus", o.corpus, "evaluation corpus JSONL")->required();
    eval_cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--vocab", o.vocab_path, "vocabulary file");
    eval_cmd->add_flag("--echo", echo, "score references against themselves (plumbing oracle)");
    add_common(eval_cmd, true);

    auto* gen_cmd = app.add_subcommand("generate", "batch generation with latent traces");
    gen_cmd->add_option("--corpus", o.corpus, "context corpus JSONL")->required();
    gen_cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
    gen_cmd->add_option("--vocab", o.vocab_path, "vocabulary file");
    add_common(gen_cmd, true);

    auto* chat_cmd = app.add_subcommand("chat", "interactive REPL");
    chat_cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
    chat_cmd->add_option("--vocab", o.vocab_path, "vocabulary file");
    chat_cmd->add_flag("--deterministic", o.deterministic, "posterior-mean latents");
    add_common(chat_cmd, false);

    auto* inspect_cmd = app.add_subcommand("inspect", "state assignments and flow structure");
    std::string labels_path;
    inspect_cmd->add_option("--corpus", o.corpus, "corpus JSONL")->required();
    inspect_cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
    inspect_cmd->add_option("--vocab", o.vocab_path, "vocabulary file");
    inspect_cmd->add_option("--labels", labels_path, "ground-truth state labels JSONL");
    add_common(inspect_cmd, true);

    auto* transfer_cmd = app.add_subcommand("transfer", "pretrain on A, fine-tune on B "
                                                        "with and without frozen flow");
    std::string corpus_a, corpus_b;
    int finetune_steps = 0;
    transfer_cmd->add_option("--corpus-a", corpus_a, "pretraining corpus")->required();
    transfer_cmd->add_option("--corpus-b", corpus_b, "fine-tuning corpus")->required();
    transfer_cmd->add_option("--verbs", o.verbs, "verb lexicon path");
    transfer_cmd->add_option("--ablation", o.ablation, "model variant");
    transfer_cmd->add_option("--finetune-steps", finetune_steps,
                             "fine-tune steps (0: same as pretrain)");
    transfer_cmd->add_option("--val-frac", val_frac, "validation fraction");
    add_common(transfer_cmd, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(o, spec_path, states, sessions, turns, variant);
        if (*train_cmd) return cmd_train(o, val_frac);
        if (*eval_cmd) return cmd_eval(o, echo);
        if (*gen_cmd) return cmd_generate(o);
        if (*chat_cmd) return cmd_chat(o);
        if (*inspect_cmd) return cmd_inspect(o, labels_path);
        if (*transfer_cmd) return cmd_transfer(o, corpus_a, corpus_b, finetune_steps, val_frac);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CorpusError& e) {
        std::cerr << "corpus error: " << e.what() << "\n";
        return 3;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
