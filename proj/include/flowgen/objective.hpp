#pragma once

#include "flowgen/latent.hpp"

#include <limits>

namespace flowgen {

// All seven loss terms plus the combined objective, per-batch means.
// Sign convention, used everywhere: recon, l_hid, l_dir, l_mim are the
// quantities the variational objective MAXIMIZES (log-likelihoods and the
// negated MI), the KLs are subtracted, and the trainer minimizes -total.
struct LossBreakdown {
    double reconstruction = 0.0;
    double kl_c = 0.0;
    double kl_zI = 0.0;
    double kl_zS = 0.0;
    double l_hid = 0.0;
    double l_dir = 0.0;
    double l_mim = 0.0;
    double elbo = 0.0;
    double total = 0.0;

    std::string to_json() const;
};

// Per-row KL(q || p) between diagonal Gaussians, closed form. [k x 1]
ag::Var kl_gaussian(const GaussianParams& q, const GaussianParams& p);

// Per-row KL(q || p) from logits. [k x 1]
ag::Var kl_categorical_logits(const ag::Var& q_logits, const ag::Var& p_logits);

// Probability-vector form with the 0 * log(0/.) = 0 convention; returns
// +infinity when p has a zero where q > 0.
double kl_categorical(const Eigen::VectorXd& q, const Eigen::VectorXd& p);

// ELBO for one session from its already-computed pieces.
ag::Var elbo_terms(const ag::Var& recon, const ag::Var& kl_c_sum, const ag::Var& kl_zi_sum,
                   const ag::Var& kl_zs, double kl_weight);

// log( e^{cos(z, z_shuf)} / (e^{cos(z, z_shuf)} + e^{cos(z, z_neg)}) )
ag::Var loss_hid(const ag::Var& z_s, const ag::Var& z_s_shuf, const ag::Var& z_s_neg);

// sum over verb tokens of log softmax(W_verb z^I_t)[verb class]
ag::Var loss_dir(const ag::Var& z_i, const ag::Var& w_verb,
                 const std::vector<std::pair<int, int>>& verb_targets);

// Pairwise diagonal-Gaussian log densities: entry (i, j) = log q(z_i | params_j).
ag::Var pairwise_gaussian_log_density(const ag::Var& samples, const ag::Var& mus,
                                      const ag::Var& log_vars);

// Minibatch-weighted entropy estimate from a [B x B] log-density matrix:
// H ~= -(1/B) sum_i log( (1/(M*B)) sum_j q(z_i | u_j) ), log-sum-exp stabilized.
ag::Var entropy_estimate(const ag::Var& log_density, long data_size);

// total = elbo + alpha * (l_hid + l_dir + l_mim)
ag::Var total_loss(const ag::Var& elbo, const ag::Var& l_hid, const ag::Var& l_dir,
                   const ag::Var& l_mim, double alpha);

}  // namespace flowgen
