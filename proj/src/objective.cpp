#include "flowgen/objective.hpp"

#include <cmath>
#include <sstream>

namespace flowgen {

using ag::Mat;
using ag::Var;

std::string LossBreakdown::to_json() const {
    std::ostringstream s;
    s.precision(10);
    s << "{\"reconstruction\":" << reconstruction << ",\"kl_c\":" << kl_c
      << ",\"kl_zI\":" << kl_zI << ",\"kl_zS\":" << kl_zS << ",\"l_hid\":" << l_hid
      << ",\"l_dir\":" << l_dir << ",\"l_mim\":" << l_mim << ",\"elbo\":" << elbo
      << ",\"total\":" << total << "}";
    return s.str();
}

Var kl_gaussian(const GaussianParams& q, const GaussianParams& p) {
    // 0.5 * sum_d [ lv_p - lv_q + exp(lv_q - lv_p) + (mu_q - mu_p)^2 exp(-lv_p) - 1 ]
    Var dlv = ag::sub(p.log_var, q.log_var);
    Var ratio = ag::exp(ag::neg(dlv));
    Var dm = ag::sub(q.mu, p.mu);
    Var quad = ag::mul(ag::square(dm), ag::exp(ag::neg(p.log_var)));
    Var inner = ag::add_scalar(ag::add(ag::add(dlv, ratio), quad), -1.0);
    return ag::scale(ag::sum_rows(inner), 0.5);
}

Var kl_categorical_logits(const Var& q_logits, const Var& p_logits) {
    Var lq = ag::log_softmax_rows(q_logits);
    Var lp = ag::log_softmax_rows(p_logits);
    Var q = ag::softmax_rows(q_logits);
    return ag::sum_rows(ag::mul(q, ag::sub(lq, lp)));
}

double kl_categorical(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        if (q(i) <= 0.0) continue;
        if (p(i) <= 0.0) return std::numeric_limits<double>::infinity();
        kl += q(i) * std::log(q(i) / p(i));
    }
    return kl;
}

Var elbo_terms(const Var& recon, const Var& kl_c_sum, const Var& kl_zi_sum, const Var& kl_zs,
               double kl_weight) {
    Var kl = ag::add(ag::add(kl_c_sum, kl_zi_sum), kl_zs);
    return ag::sub(recon, ag::scale(kl, kl_weight));
}

Var loss_hid(const Var& z_s, const Var& z_s_shuf, const Var& z_s_neg) {
    Var s_pos = ag::cosine(z_s, z_s_shuf);
    Var s_neg = ag::cosine(z_s, z_s_neg);
    Var lse = ag::logsumexp_rows(ag::concat_cols({s_pos, s_neg}));
    return ag::sub(s_pos, lse);
}

Var loss_dir(const Var& z_i, const Var& w_verb,
             const std::vector<std::pair<int, int>>& verb_targets) {
    if (verb_targets.empty()) return ag::constant(Mat::Zero(1, 1));
    Var logp = ag::log_softmax_rows(ag::matmul(z_i, w_verb));
    return ag::gather_sum(logp, verb_targets);
}

Var pairwise_gaussian_log_density(const Var& samples, const Var& mus, const Var& log_vars) {
    const auto b = samples->value.rows();
    const auto d = samples->value.cols();
    if (mus->value.rows() != b || log_vars->value.rows() != b)
        throw std::invalid_argument("pairwise_gaussian_log_density: batch sizes disagree");
    Var prec = ag::exp(ag::neg(log_vars));  // [B x d]
    Var m1 = ag::matmul(ag::square(samples), ag::transpose(prec));                 // z^2 . P^T
    Var m2 = ag::matmul(samples, ag::transpose(ag::mul(mus, prec)));               // z . (mu P)^T
    Var v3 = ag::sum_rows(ag::mul(ag::square(mus), prec));                         // [B x 1]
    Var quad = ag::add_rowvec(ag::sub(m1, ag::scale(m2, 2.0)), ag::transpose(v3));  // [B x B]
    Var lv_sum = ag::sum_rows(log_vars);  // [B x 1]
    Var logdet = ag::add_rowvec(ag::constant(Mat::Zero(b, b)), ag::transpose(lv_sum));
    const double c = static_cast<double>(d) * std::log(2.0 * M_PI);
    return ag::scale(ag::add_scalar(ag::add(quad, logdet), c), -0.5);
}

Var entropy_estimate(const Var& log_density, long data_size) {
    const auto b = log_density->value.rows();
    if (b < 1) throw std::invalid_argument("entropy_estimate: empty batch");
    if (!log_density->value.allFinite())
        throw std::domain_error("entropy_estimate: non-finite log density");
    Var lse = ag::logsumexp_rows(log_density);  // [B x 1]
    double log_mb = std::log(static_cast<double>(data_size) * static_cast<double>(b));
    Var mean_lse = ag::scale(ag::sum(lse), 1.0 / static_cast<double>(b));
    return ag::neg(ag::add_scalar(mean_lse, -log_mb));
}

Var total_loss(const Var& elbo, const Var& l_hid, const Var& l_dir, const Var& l_mim,
               double alpha) {
    Var dis = ag::add(ag::add(l_hid, l_dir), l_mim);
    return ag::add(elbo, ag::scale(dis, alpha));
}

}  // namespace flowgen
