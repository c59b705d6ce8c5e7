#pragma once

#include "flowgen/objective.hpp"

#include <memory>
#include <optional>
#include <unordered_map>

namespace flowgen {

// Verb classes for the dynamic-information loss: the verb lexicon's
// intersection with the corpus vocabulary plus a reserved unknown class.
struct VerbVocab {
    std::unordered_map<int, int> class_of_token;  // corpus token id -> verb class
    int size = 1;                                 // class 0 is [UNK-VERB]

    static VerbVocab build(const Vocabulary& vocab, const std::set<std::string>& lexicon);
    int verb_class(int token_id) const;
};

// One session ready for a training step: the encoded session, its shuffled
// and negative companions, and verb targets as (utterance index, verb class).
struct PreparedSession {
    EncodedSession enc;
    EncodedSession shuf;
    EncodedSession neg;
    std::vector<std::pair<int, int>> verb_targets;
};

// Per-session latent state captured during a forward pass.
struct LatentBundle {
    Eigen::MatrixXd q_c_probs;      // [n x N]
    Eigen::MatrixXd prior_c_probs;  // [n x N]
    Eigen::MatrixXd c_samples;      // [n x N] soft or hardened
    Eigen::MatrixXd z_i_mu, z_i_sample;  // [n x d_z]
    Eigen::VectorXd z_s_mu, z_s_sample;  // [d_z]
};

struct ForwardResult {
    ag::Var total;  // maximized objective; trainer minimizes -total
    LossBreakdown breakdown;
    std::vector<LatentBundle> bundles;
};

// The full generative + inference model: backbone, inference encoder, flow
// prior, latent heads, fusion projections, verb head.
class DialogueModel {
public:
    DialogueModel(const ModelConfig& cfg, int vocab_size, int verb_vocab_size,
                  std::uint64_t seed);

    ForwardResult forward(const std::vector<PreparedSession>& batch, double tau,
                          double kl_weight, double alpha, long corpus_size,
                          std::mt19937_64& rng, bool training);

    // Posterior utterance vectors from the inference encoder. [n x d]
    UtteranceVectors infer_utterances(const EncodedSession& enc) const;
    // Argmax posterior states per utterance (ties toward the lower index)
    // plus the posterior probabilities.
    std::pair<std::vector<int>, Eigen::MatrixXd> posterior_states(
        const EncodedSession& enc) const;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    const Backbone& backbone() const { return *backbone_; }
    const Backbone& inference_encoder() const { return *infenc_; }
    const FlowPrior& flow() const { return *flow_; }
    const LatentHeads& heads() const { return *heads_; }
    ag::Var fuse_wi() const { return w_i_; }
    ag::Var fuse_ws() const { return w_s_; }
    ag::Var fuse_wc() const { return w_c_; }
    int vocab_size() const { return vocab_size_; }
    int verb_vocab_size() const { return verb_vocab_size_; }

    // Latent-to-vocabulary logit rows: p + W_v W^I_v z^I + W_v W^S_v z^S
    // (+ W_v W^c_v e(c) when the state-conditioned decoder is on).
    ag::Var fuse_logits(const ag::Var& base, const ag::Var& z_i, const ag::Var& z_s,
                        const ag::Var& e_c) const;

private:
    struct SessionTerms;
    SessionTerms forward_session(const PreparedSession& ps, double tau, double kl_weight,
                                 std::mt19937_64& rng, bool training);

    ModelConfig cfg_;
    int vocab_size_;
    int verb_vocab_size_;
    ParamStore params_;
    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<Backbone> infenc_;
    std::unique_ptr<FlowPrior> flow_;
    std::unique_ptr<LatentHeads> heads_;
    ag::Var w_i_, w_s_, w_c_, w_verb_;
};

}  // namespace flowgen
