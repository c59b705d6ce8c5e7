#pragma once

#include "flowgen/checkpoint.hpp"

namespace flowgen {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Builds the training-time view of one session: encoding, shuffled and
// negative companions (when L_HID is active), verb targets (when L_DIR is).
PreparedSession prepare_session(const DialogueSession& session,
                                const std::vector<DialogueSession>& corpus,
                                const Vocabulary& vocab,
                                const std::set<std::string>& verb_lexicon,
                                const VerbVocab& verb_vocab, const Ablation& ablation,
                                std::mt19937_64& rng);

// Freeze the flow-structure parameters (f_c-trans and f_c-mlp); returns the
// frozen parameter names.
std::vector<std::string> freeze_flow_params(DialogueModel& model);

class Adam {
public:
    Adam(ParamStore& params, double lr, double beta1, double beta2, double eps);
    // Applies one update from the accumulated gradients; frozen parameters
    // are untouched. Returns the pre-clip global gradient norm.
    double step(double grad_clip);
    AdamState& state() { return state_; }
    void load_state(AdamState s) { state_ = std::move(s); }

private:
    ParamStore& params_;
    double lr_, beta1_, beta2_, eps_;
    AdamState state_;
};

struct TrainResult {
    std::string best_checkpoint;
    double best_val_loss = std::numeric_limits<double>::infinity();
    long best_step = 0;
    long steps_run = 0;
    LossBreakdown first_breakdown;
    LossBreakdown last_breakdown;
};

// Optimization loop: Gumbel annealing, optional KL warm-up, per-step JSONL
// metric log, periodic validation + checkpointing, early stopping on
// validation total loss.
TrainResult train(DialogueModel& model, const Config& config,
                  const std::vector<DialogueSession>& train_sessions,
                  const std::vector<DialogueSession>& val_sessions, const Vocabulary& vocab,
                  const std::set<std::string>& verb_lexicon, const VerbVocab& verb_vocab,
                  const std::string& out_dir);

// Per-term validation averages (KL weight 1, eval mode, fixed noise seed).
LossBreakdown validation_breakdown(DialogueModel& model, const Config& config,
                                   const std::vector<DialogueSession>& sessions,
                                   const Vocabulary& vocab,
                                   const std::set<std::string>& verb_lexicon,
                                   const VerbVocab& verb_vocab, std::uint64_t noise_seed);

// Validation objective (KL weight 1, eval mode, fixed noise seed).
double validation_loss(DialogueModel& model, const Config& config,
                       const std::vector<DialogueSession>& sessions, const Vocabulary& vocab,
                       const std::set<std::string>& verb_lexicon, const VerbVocab& verb_vocab,
                       std::uint64_t noise_seed);

// Names of parameters that received no gradient from one generic step
// (catches silently detached pathways).
std::vector<std::string> gradient_flow_audit(DialogueModel& model,
                                             const std::vector<PreparedSession>& batch,
                                             long corpus_size, std::uint64_t seed);

}  // namespace flowgen
