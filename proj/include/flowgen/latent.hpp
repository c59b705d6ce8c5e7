#pragma once

#include "flowgen/backbone.hpp"

namespace flowgen {

// Diagonal Gaussian: one row per distribution, scale parameterized as
// log-variance so the heads are unconstrained.
struct GaussianParams {
    ag::Var mu;       // [k x d_z]
    ag::Var log_var;  // [k x d_z]

    ag::Var sigma() const { return ag::exp(ag::scale(log_var, 0.5)); }
};

struct TempSchedule {
    double tau_init = 1.0;
    double tau_min = 0.5;
    double rate = 4e-5;
};

// tau(step) = max(tau_min, tau_init * exp(-rate * step))
double anneal_temperature(long step, const TempSchedule& schedule);

// Row-wise Gumbel-softmax: softmax((logits + g) / tau), g ~ Gumbel(0,1).
// With hard=true the forward value is the exact one-hot at each row's argmax
// and the backward pass is the soft relaxation's (straight-through).
ag::Var gumbel_sample(const ag::Var& logits, double tau, std::mt19937_64& rng,
                      bool hard = false);
// Deterministic variant for tests: caller supplies the Gumbel noise.
ag::Var gumbel_sample_with_noise(const ag::Var& logits, double tau, const ag::Mat& noise,
                                 bool hard = false);

// z = mu + sigma .* eps
ag::Var reparameterize(const GaussianParams& params, const ag::Mat& eps);
ag::Var reparameterize(const GaussianParams& params, std::mt19937_64& rng);

ag::Mat standard_normal(int rows, int cols, std::mt19937_64& rng);

// Two-layer MLP with tanh in between.
class Mlp {
public:
    Mlp() = default;
    Mlp(ParamStore& params, const std::string& prefix, int in, int hidden, int out,
        std::mt19937_64& rng);
    ag::Var forward(const ag::Var& x) const;

private:
    ag::Var w1_, b1_, w2_, b2_;
};

class GaussianHead {
public:
    GaussianHead() = default;
    GaussianHead(ParamStore& params, const std::string& prefix, int in, int hidden, int d_z,
                 std::mt19937_64& rng);
    GaussianParams forward(const ag::Var& x) const;

private:
    Mlp mlp_;
    int d_z_ = 0;
};

// Discrete conversation-flow prior: a causal transformer over state
// embeddings followed by an MLP head. The prior sees only states, never
// utterance content.
class FlowPrior {
public:
    FlowPrior(ParamStore& params, int num_states, int d, int layers, int heads,
              int max_positions, std::mt19937_64& rng);

    // states_soft: [n x N] rows on the simplex (hard one-hots or soft
    // relaxations). Returns logits [n x N]; row t-1 is the logits of
    // p(c_t | c_<t), with a learned start vector standing in at t=1.
    ag::Var prior_logits(const ag::Var& states_soft) const;
    // Logits of p(c_{t+1} | c_<=t) for a hard state prefix (generation path).
    ag::Var next_logits(const std::vector<int>& state_prefix) const;

    // e(c) as a soft mixture of embedding rows: [k x N] -> [k x d]
    ag::Var embed(const ag::Var& states_soft) const;
    ag::Var embed_hard(const std::vector<int>& states) const;

    int num_states() const { return num_states_; }

private:
    int num_states_;
    ag::Var state_emb_;  // [N x d]
    ag::Var start_;      // [1 x d]
    TransformerStack trans_;
    Mlp head_;
};

// The three posterior heads over inference-encoder utterance vectors, plus
// the z^I prior head conditioned on [h_{t-1}; e(c_t)].
class LatentHeads {
public:
    LatentHeads(ParamStore& params, int d, int d_z, int num_states, std::mt19937_64& rng);

    ag::Var posterior_c_logits(const ag::Var& h_phi) const;   // [n x N]
    GaussianParams posterior_z_s(const ag::Var& h_phi) const; // from the utterance mean
    GaussianParams posterior_z_i(const ag::Var& h_phi) const; // per utterance
    // h_prev: [n x d] rows of h_{t-1} (start vector at t=1); e_c: [n x d]
    GaussianParams prior_z_i(const ag::Var& h_prev, const ag::Var& e_c) const;

    ag::Var start_state() const { return h0_; }  // [1 x d]

private:
    Mlp c_head_;
    GaussianHead zs_head_, zi_head_, prior_i_head_;
    ag::Var h0_;
};

// Standard-normal prior over z^S.
GaussianParams prior_z_s(int d_z);

}  // namespace flowgen
