#include "flowgen/generator.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace flowgen {

using ag::Mat;
using ag::Var;

ContextLatents infer_context_latents(const DialogueModel& model, const EncodedSession& context,
                                     const DecodeConfig& cfg, std::mt19937_64& rng) {
    if (context.spans.empty()) throw ModelError("infer_context_latents: empty context");
    ContextLatents out;
    const auto& abl = model.config().ablation;
    auto uv = model.infer_utterances(context);
    if (abl.use_c) {
        Var logits = model.heads().posterior_c_logits(uv.vectors);
        for (Eigen::Index r = 0; r < logits->value.rows(); ++r) {
            Eigen::Index best = 0;
            logits->value.row(r).maxCoeff(&best);
            out.states.push_back(static_cast<int>(best));
        }
    }
    if (abl.use_zS) {
        GaussianParams post = model.heads().posterior_z_s(uv.vectors);
        out.z_s = cfg.deterministic_latents ? post.mu : reparameterize(post, rng);
    }
    return out;
}

namespace {

struct BeamHyp {
    std::vector<int> tokens;
    double log_prob = 0.0;
    bool done = false;

    double score(double length_penalty) const {
        size_t len = std::max<size_t>(1, tokens.size());
        return log_prob / std::pow(static_cast<double>(len), length_penalty);
    }
};

}  // namespace

GenerationTrace generate(const DialogueModel& model, const Vocabulary& vocab,
                         const DialogueSession& context, const DecodeConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const auto& abl = model.config().ablation;
    EncodedSession enc = concat_session(context, vocab);
    if (static_cast<int>(enc.ids.size()) + cfg.max_new_tokens > model.config().max_positions)
        throw ModelError("generate: context plus max_new_tokens exceeds the position window");

    GenerationTrace trace;
    ContextLatents lat = infer_context_latents(model, enc, cfg, rng);
    trace.context_states = lat.states;

    // Flow prior for the next state
    Var e_c;
    if (abl.use_c) {
        Var next = model.flow().next_logits(lat.states);
        Eigen::ArrayXd row = next->value.row(0).array();
        Eigen::ArrayXd probs = (row - row.maxCoeff()).exp();
        probs /= probs.sum();
        trace.next_state_probs = probs.matrix();
        int state;
        if (cfg.sample_states) {
            Eigen::ArrayXd tl = row / cfg.state_temperature;
            Eigen::ArrayXd p = (tl - tl.maxCoeff()).exp();
            p /= p.sum();
            std::discrete_distribution<int> dist(p.data(), p.data() + p.size());
            state = dist(rng);
        } else {
            Eigen::Index best = 0;
            trace.next_state_probs.maxCoeff(&best);
            state = static_cast<int>(best);
        }
        trace.chosen_state = state;
        e_c = model.flow().embed_hard({state});
    }

    // z^S: posterior over the context by default, N(0, I) behind a flag
    Var z_s = lat.z_s;
    if (abl.use_zS && cfg.prior_zS) {
        GaussianParams p = prior_z_s(model.config().latent_dim());
        z_s = cfg.deterministic_latents ? p.mu : reparameterize(p, rng);
    }
    if (z_s) trace.z_s = z_s->value.row(0).transpose();

    // z^I_t from its prior given h_{t-1} and e(c_t)
    Var z_i;
    if (abl.use_zI) {
        Var hidden = model.backbone().encode(enc.ids);
        auto pooled = model.backbone().pool(hidden, enc.spans);
        int last = static_cast<int>(enc.spans.size()) - 1;
        Var h_prev = ag::slice_rows(pooled.vectors, last, 1);
        Var e_for_prior = abl.use_c ? e_c : ag::constant(Mat::Zero(1, model.config().d));
        GaussianParams prior = model.heads().prior_z_i(h_prev, e_for_prior);
        z_i = cfg.deterministic_latents ? prior.mu : reparameterize(prior, rng);
        trace.z_i = z_i->value.row(0).transpose();
    }
    Var e_c_fuse = (abl.use_c && model.config().state_decoder) ? e_c : Var{};

    // Beam search over fused next-token log-probabilities
    auto step_logp = [&](const std::vector<int>& new_tokens) -> Eigen::VectorXd {
        std::vector<int> ids = enc.ids;
        ids.insert(ids.end(), new_tokens.begin(), new_tokens.end());
        Var hidden = model.backbone().encode(ids);
        int last = static_cast<int>(ids.size()) - 1;
        Var base = ag::slice_rows(model.backbone().lm_logits(hidden), last, 1);
        Var fused = model.fuse_logits(base, z_i, z_s, e_c_fuse);
        Var logp = ag::log_softmax_rows(fused);
        return logp->value.row(0).transpose();
    };

    std::vector<BeamHyp> live{BeamHyp{}};
    std::vector<BeamHyp> finished;
    for (int step = 0; step < cfg.max_new_tokens && !live.empty(); ++step) {
        std::vector<BeamHyp> candidates;
        for (const auto& hyp : live) {
            Eigen::VectorXd logp = step_logp(hyp.tokens);
            for (int v = 0; v < static_cast<int>(logp.size()); ++v) {
                BeamHyp next = hyp;
                next.tokens.push_back(v);
                next.log_prob += logp(v);
                next.done = (v == Vocabulary::kEos);
                candidates.push_back(std::move(next));
            }
        }
        std::sort(candidates.begin(), candidates.end(),
                  [&](const BeamHyp& a, const BeamHyp& b) {
                      return a.score(cfg.length_penalty) > b.score(cfg.length_penalty);
                  });
        live.clear();
        for (auto& c : candidates) {
            if (c.done)
                finished.push_back(std::move(c));
            else if (static_cast<int>(live.size()) < cfg.beam_size)
                live.push_back(std::move(c));
            if (static_cast<int>(finished.size()) >= cfg.beam_size &&
                static_cast<int>(live.size()) >= cfg.beam_size)
                break;
        }
        // Keep only the top beams among finished to bound the pool.
        std::sort(finished.begin(), finished.end(), [&](const BeamHyp& a, const BeamHyp& b) {
            return a.score(cfg.length_penalty) > b.score(cfg.length_penalty);
        });
        if (static_cast<int>(finished.size()) > cfg.beam_size)
            finished.resize(static_cast<size_t>(cfg.beam_size));
    }
    for (auto& h : live) finished.push_back(std::move(h));
    if (finished.empty()) throw ModelError("generate: no hypothesis produced");
    auto best = std::max_element(finished.begin(), finished.end(),
                                 [&](const BeamHyp& a, const BeamHyp& b) {
                                     return a.score(cfg.length_penalty) <
                                            b.score(cfg.length_penalty);
                                 });
    trace.score = best->score(cfg.length_penalty);
    for (int id : best->tokens) {
        if (id == Vocabulary::kEos) break;
        trace.tokens.push_back(vocab.token(id));
    }
    return trace;
}

void repl(const DialogueModel& model, const Vocabulary& vocab, const DecodeConfig& cfg,
          std::istream& in, std::ostream& out) {
    const size_t window = static_cast<size_t>(model.config().history_window);
    std::vector<std::vector<std::string>> history;
    GenerationTrace last_trace;
    bool have_trace = false;
    std::string line;
    out << "> " << std::flush;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            out << "> " << std::flush;
            continue;
        }
        if (line == "/quit") break;
        if (line == "/reset") {
            history.clear();
            have_trace = false;
            out << "(context cleared)\n> " << std::flush;
            continue;
        }
        if (line == "/states") {
            if (!have_trace || last_trace.next_state_probs.size() == 0) {
                out << "(no state trace yet)\n> " << std::flush;
                continue;
            }
            out << "p(c_t | c_<t):";
            for (Eigen::Index i = 0; i < last_trace.next_state_probs.size(); ++i)
                out << " s" << i << "=" << last_trace.next_state_probs(i);
            out << "\n> " << std::flush;
            continue;
        }
        history.push_back(tokenize(line));
        while (history.size() > window) history.erase(history.begin());
        DialogueSession ctx{"repl", history};
        last_trace = generate(model, vocab, ctx, cfg);
        have_trace = true;
        std::ostringstream resp;
        for (size_t i = 0; i < last_trace.tokens.size(); ++i)
            resp << (i ? " " : "") << last_trace.tokens[i];
        out << resp.str();
        if (last_trace.chosen_state >= 0) {
            out << "   [state " << last_trace.chosen_state;
            if (last_trace.next_state_probs.size() > 0)
                out << " p=" << last_trace.next_state_probs(last_trace.chosen_state);
            out << "]";
        }
        out << "\n";
        history.push_back(last_trace.tokens.empty() ? std::vector<std::string>{"[EOS]"}
                                                    : last_trace.tokens);
        while (history.size() > window) history.erase(history.begin());
        out << "> " << std::flush;
    }
}

}  // namespace flowgen
