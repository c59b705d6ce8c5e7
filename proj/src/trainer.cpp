#include "flowgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace flowgen {

namespace fs = std::filesystem;

PreparedSession prepare_session(const DialogueSession& session,
                                const std::vector<DialogueSession>& corpus,
                                const Vocabulary& vocab,
                                const std::set<std::string>& verb_lexicon,
                                const VerbVocab& verb_vocab, const Ablation& ablation,
                                std::mt19937_64& rng) {
    PreparedSession ps;
    ps.enc = concat_session(session, vocab);
    if (ablation.use_disentangle && ablation.use_zS) {
        ps.shuf = concat_session(shuffle_session(session, rng), vocab);
        ps.neg = concat_session(sample_negative(corpus, session, rng), vocab);
    }
    if (ablation.use_disentangle && ablation.use_zI) {
        VerbMask vm = mark_verbs(session, verb_lexicon);
        for (size_t t = 0; t < session.utterances.size(); ++t)
            for (size_t i = 0; i < session.utterances[t].size(); ++i)
                if (vm.mask[t][i]) {
                    int tid = vocab.id(session.utterances[t][i]);
                    ps.verb_targets.emplace_back(static_cast<int>(t),
                                                 verb_vocab.verb_class(tid));
                }
    }
    return ps;
}

std::vector<std::string> freeze_flow_params(DialogueModel& model) {
    model.params().freeze_prefix("flow.trans");
    model.params().freeze_prefix("flow.mlp");
    return model.params().frozen_names();
}

Adam::Adam(ParamStore& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& name : params_.names()) {
        auto v = params_.get(name);
        state_.m[name] = ag::Mat::Zero(v->value.rows(), v->value.cols());
        state_.v[name] = ag::Mat::Zero(v->value.rows(), v->value.cols());
    }
}

double Adam::step(double grad_clip) {
    double sq_norm = 0.0;
    for (const auto& name : params_.names()) {
        if (params_.is_frozen(name)) continue;
        auto p = params_.get(name);
        if (p->grad.size() != 0) sq_norm += p->grad.squaredNorm();
    }
    double norm = std::sqrt(sq_norm);
    double clip_scale = (grad_clip > 0.0 && norm > grad_clip) ? grad_clip / norm : 1.0;

    ++state_.step;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
    for (const auto& name : params_.names()) {
        if (params_.is_frozen(name)) continue;
        auto p = params_.get(name);
        ag::Mat g = p->grad.size() != 0
                        ? ag::Mat(p->grad * clip_scale)
                        : ag::Mat(ag::Mat::Zero(p->value.rows(), p->value.cols()));
        auto& m = state_.m[name];
        auto& v = state_.v[name];
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        ag::Mat mhat = m / bc1;
        ag::Mat vhat = v / bc2;
        p->value -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
    }
    return norm;
}

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

std::vector<PreparedSession> prepare_batch(const std::vector<const DialogueSession*>& sessions,
                                           const std::vector<DialogueSession>& corpus,
                                           const Vocabulary& vocab,
                                           const std::set<std::string>& verb_lexicon,
                                           const VerbVocab& verb_vocab,
                                           const Ablation& ablation, std::mt19937_64& rng) {
    std::vector<PreparedSession> batch;
    batch.reserve(sessions.size());
    for (const auto* s : sessions)
        batch.push_back(prepare_session(*s, corpus, vocab, verb_lexicon, verb_vocab, ablation, rng));
    return batch;
}

}  // namespace

LossBreakdown validation_breakdown(DialogueModel& model, const Config& config,
                                   const std::vector<DialogueSession>& sessions,
                                   const Vocabulary& vocab,
                                   const std::set<std::string>& verb_lexicon,
                                   const VerbVocab& verb_vocab, std::uint64_t noise_seed) {
    const auto& abl = model.config().ablation;
    std::mt19937_64 rng(noise_seed);
    LossBreakdown sum;
    long count = 0;
    const size_t bs = static_cast<size_t>(config.train.batch_size);
    for (size_t start = 0; start < sessions.size(); start += bs) {
        size_t end = std::min(sessions.size(), start + bs);
        if (end - start < 2) break;  // L_HID/L_MIM need pairs
        std::vector<const DialogueSession*> ptrs;
        for (size_t i = start; i < end; ++i) ptrs.push_back(&sessions[i]);
        auto batch = prepare_batch(ptrs, sessions, vocab, verb_lexicon, verb_vocab, abl, rng);
        auto result = model.forward(batch, model.config().tau_min, 1.0, config.train.alpha,
                                    static_cast<long>(sessions.size()), rng, false);
        double w = static_cast<double>(end - start);
        const auto& b = result.breakdown;
        sum.reconstruction += w * b.reconstruction;
        sum.kl_c += w * b.kl_c;
        sum.kl_zI += w * b.kl_zI;
        sum.kl_zS += w * b.kl_zS;
        sum.l_hid += w * b.l_hid;
        sum.l_dir += w * b.l_dir;
        sum.l_mim += w * b.l_mim;
        sum.elbo += w * b.elbo;
        sum.total += w * b.total;
        count += static_cast<long>(end - start);
    }
    if (count == 0) throw TrainError("validation set too small (need >= 2 sessions)");
    double inv = 1.0 / static_cast<double>(count);
    sum.reconstruction *= inv;
    sum.kl_c *= inv;
    sum.kl_zI *= inv;
    sum.kl_zS *= inv;
    sum.l_hid *= inv;
    sum.l_dir *= inv;
    sum.l_mim *= inv;
    sum.elbo *= inv;
    sum.total *= inv;
    return sum;
}

double validation_loss(DialogueModel& model, const Config& config,
                       const std::vector<DialogueSession>& sessions, const Vocabulary& vocab,
                       const std::set<std::string>& verb_lexicon, const VerbVocab& verb_vocab,
                       std::uint64_t noise_seed) {
    return -validation_breakdown(model, config, sessions, vocab, verb_lexicon, verb_vocab,
                                 noise_seed)
                .total;
}

TrainResult train(DialogueModel& model, const Config& config,
                  const std::vector<DialogueSession>& train_sessions,
                  const std::vector<DialogueSession>& val_sessions, const Vocabulary& vocab,
                  const std::set<std::string>& verb_lexicon, const VerbVocab& verb_vocab,
                  const std::string& out_dir) {
    const TrainConfig& tc = config.train;
    tc.validate();
    if (train_sessions.size() < 2) throw TrainError("training corpus needs >= 2 sessions");
    fs::create_directories(out_dir);
    std::ofstream log(out_dir + "/metrics.jsonl");
    if (!log) throw TrainError("cannot write metric log in " + out_dir);

    if (tc.freeze_flow) freeze_flow_params(model);
    Adam adam(model.params(), tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
    std::mt19937_64 rng(tc.seed);
    TempSchedule sched{model.config().tau_init, model.config().tau_min,
                       model.config().anneal_rate};
    const long warmup_steps =
        tc.kl_warmup ? std::max<long>(1, static_cast<long>(tc.kl_warmup_frac * tc.max_steps))
                     : 0;

    // Epoch ordering: reshuffle indices whenever the corpus is exhausted.
    std::vector<size_t> order(train_sessions.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // force shuffle on first use

    TrainResult result;
    int evals_since_best = 0;
    for (long step = 1; step <= tc.max_steps; ++step) {
        std::vector<const DialogueSession*> ptrs;
        while (ptrs.size() < static_cast<size_t>(tc.batch_size)) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            ptrs.push_back(&train_sessions[order[cursor++]]);
        }
        auto batch = prepare_batch(ptrs, train_sessions, vocab, verb_lexicon, verb_vocab,
                                   model.config().ablation, rng);
        double tau = anneal_temperature(step - 1, sched);
        double kl_weight =
            warmup_steps > 0 ? std::min(1.0, static_cast<double>(step) /
                                                 static_cast<double>(warmup_steps))
                             : 1.0;
        model.params().zero_grads();
        auto fwd = model.forward(batch, tau, kl_weight, tc.alpha,
                                 static_cast<long>(train_sessions.size()), rng, true);
        if (!std::isfinite(fwd.breakdown.total)) {
            std::ostringstream ids;
            for (const auto* s : ptrs) ids << " " << s->session_id;
            throw TrainError("non-finite loss at step " + std::to_string(step) +
                             "; offending batch:" + ids.str());
        }
        ag::backward(ag::neg(fwd.total));
        adam.step(tc.grad_clip);

        log << "{\"step\":" << step << ",\"tau\":" << tau << ",\"kl_weight\":" << kl_weight
            << ",\"loss\":" << fwd.breakdown.to_json() << "}\n";
        if (step == 1) result.first_breakdown = fwd.breakdown;
        result.last_breakdown = fwd.breakdown;
        result.steps_run = step;

        if (step % tc.eval_every == 0 || step == tc.max_steps) {
            double val = validation_loss(model, config, val_sessions, vocab, verb_lexicon,
                                         verb_vocab, tc.seed + 9973);
            std::string ckpt = out_dir + "/ckpt_" + std::to_string(step);
            save_checkpoint(ckpt, model, config, step, &adam.state(), rng_to_string(rng));
            log << "{\"step\":" << step << ",\"val_loss\":" << val << "}\n";
            if (val < result.best_val_loss) {
                result.best_val_loss = val;
                result.best_checkpoint = ckpt;
                result.best_step = step;
                evals_since_best = 0;
            } else {
                ++evals_since_best;
                if (tc.early_stop_patience > 0 && evals_since_best >= tc.early_stop_patience)
                    break;
            }
        }
    }
    if (result.best_checkpoint.empty()) {
        result.best_checkpoint = out_dir + "/ckpt_final";
        save_checkpoint(result.best_checkpoint, model, config, result.steps_run, &adam.state(),
                        rng_to_string(rng));
    }
    return result;
}

std::vector<std::string> gradient_flow_audit(DialogueModel& model,
                                             const std::vector<PreparedSession>& batch,
                                             long corpus_size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    model.params().zero_grads();
    auto fwd = model.forward(batch, 0.8, 1.0, 1.0, corpus_size, rng, true);
    ag::backward(ag::neg(fwd.total));
    std::vector<std::string> silent;
    for (const auto& name : model.params().names()) {
        auto p = model.params().get(name);
        if (p->grad.size() == 0 || p->grad.cwiseAbs().maxCoeff() == 0.0)
            silent.push_back(name);
    }
    return silent;
}

}  // namespace flowgen
