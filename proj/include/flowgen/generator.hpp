#pragma once

#include "flowgen/model.hpp"

#include <iosfwd>

namespace flowgen {

struct GenerationTrace {
    std::vector<std::string> tokens;          // generated utterance, [EOS] stripped
    std::vector<int> context_states;          // argmax q(c_tau | .) per context utterance
    Eigen::VectorXd next_state_probs;         // p(c_t | c_<t)
    int chosen_state = -1;
    Eigen::VectorXd z_s, z_i;                 // latents used (empty when ablated)
    double score = 0.0;                       // length-normalized log-probability
};

struct ContextLatents {
    std::vector<int> states;
    ag::Var z_s;  // [1 x d_z], null when z^S is ablated
};

// Step (1) of generation: infer the flow states of the context and z^S.
ContextLatents infer_context_latents(const DialogueModel& model, const EncodedSession& context,
                                     const DecodeConfig& cfg, std::mt19937_64& rng);

// Step (2): predict c_t and z^I_t from their priors, then beam-decode the
// next utterance with fused logits.
GenerationTrace generate(const DialogueModel& model, const Vocabulary& vocab,
                         const DialogueSession& context, const DecodeConfig& cfg);

// Interactive loop over the given streams. Commands: /reset, /states, /quit.
void repl(const DialogueModel& model, const Vocabulary& vocab, const DecodeConfig& cfg,
          std::istream& in, std::ostream& out);

}  // namespace flowgen
