#include "flowgen/latent.hpp"

#include <cmath>

namespace flowgen {

using ag::Mat;
using ag::Var;

double anneal_temperature(long step, const TempSchedule& schedule) {
    return std::max(schedule.tau_min, schedule.tau_init * std::exp(-schedule.rate * step));
}

ag::Mat standard_normal(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = dist(rng);
    return m;
}

Var gumbel_sample_with_noise(const Var& logits, double tau, const Mat& noise, bool hard) {
    if (tau <= 0.0) throw std::domain_error("gumbel_sample: temperature must be positive");
    Var perturbed = ag::add(logits, ag::constant(noise));
    Var soft = ag::softmax_rows(ag::scale(perturbed, 1.0 / tau));
    return hard ? ag::straight_through_rows(soft) : soft;
}

Var gumbel_sample(const Var& logits, double tau, std::mt19937_64& rng, bool hard) {
    std::uniform_real_distribution<double> unit(std::nextafter(0.0, 1.0), 1.0);
    Mat g(logits->value.rows(), logits->value.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = -std::log(-std::log(unit(rng)));
    return gumbel_sample_with_noise(logits, tau, g, hard);
}

Var reparameterize(const GaussianParams& params, const Mat& eps) {
    return ag::add(params.mu, ag::mul(params.sigma(), ag::constant(eps)));
}

Var reparameterize(const GaussianParams& params, std::mt19937_64& rng) {
    return reparameterize(params, standard_normal(static_cast<int>(params.mu->value.rows()),
                                                  static_cast<int>(params.mu->value.cols()),
                                                  rng));
}

Mlp::Mlp(ParamStore& params, const std::string& prefix, int in, int hidden, int out,
         std::mt19937_64& rng) {
    w1_ = params.create(prefix + ".w1", in, hidden, 0.02, rng);
    b1_ = params.create_zeros(prefix + ".b1", 1, hidden);
    w2_ = params.create(prefix + ".w2", hidden, out, 0.02, rng);
    b2_ = params.create_zeros(prefix + ".b2", 1, out);
}

Var Mlp::forward(const Var& x) const {
    Var h = ag::tanh(ag::add_rowvec(ag::matmul(x, w1_), b1_));
    return ag::add_rowvec(ag::matmul(h, w2_), b2_);
}

GaussianHead::GaussianHead(ParamStore& params, const std::string& prefix, int in, int hidden,
                           int d_z, std::mt19937_64& rng)
    : mlp_(params, prefix, in, hidden, 2 * d_z, rng), d_z_(d_z) {}

GaussianParams GaussianHead::forward(const Var& x) const {
    Var out = mlp_.forward(x);
    return {ag::slice_cols(out, 0, d_z_), ag::slice_cols(out, d_z_, d_z_)};
}

FlowPrior::FlowPrior(ParamStore& params, int num_states, int d, int layers, int heads,
                     int max_positions, std::mt19937_64& rng)
    : num_states_(num_states),
      state_emb_(params.create("flow.state_emb", num_states, d, 0.02, rng)),
      start_(params.create("flow.start", 1, d, 0.02, rng)),
      trans_(params, "flow.trans", layers, heads, d, 2 * d, max_positions, 0.0, rng),
      head_(params, "flow.mlp", d, num_states, num_states, rng) {}

Var FlowPrior::embed(const Var& states_soft) const {
    if (states_soft->value.cols() != num_states_)
        throw ModelError("flow prior: state vector width differs from N");
    return ag::matmul(states_soft, state_emb_);
}

Var FlowPrior::embed_hard(const std::vector<int>& states) const {
    for (int s : states)
        if (s < 0 || s >= num_states_)
            throw ModelError("state index out of range: " + std::to_string(s));
    return ag::gather_rows(state_emb_, states);
}

Var FlowPrior::prior_logits(const Var& states_soft) const {
    const int n = static_cast<int>(states_soft->value.rows());
    std::vector<Var> rows{start_};
    if (n > 1) rows.push_back(embed(ag::slice_rows(states_soft, 0, n - 1)));
    Var h = trans_.forward(ag::concat_rows(rows));
    return head_.forward(h);
}

Var FlowPrior::next_logits(const std::vector<int>& state_prefix) const {
    std::vector<Var> rows{start_};
    if (!state_prefix.empty()) rows.push_back(embed_hard(state_prefix));
    Var h = trans_.forward(ag::concat_rows(rows));
    int last = static_cast<int>(h->value.rows()) - 1;
    return head_.forward(ag::slice_rows(h, last, 1));
}

LatentHeads::LatentHeads(ParamStore& params, int d, int d_z, int num_states,
                         std::mt19937_64& rng)
    : c_head_(params, "post.c", d, num_states, num_states, rng),
      zs_head_(params, "post.zs", d, d, d_z, rng),
      zi_head_(params, "post.zi", d, d, d_z, rng),
      prior_i_head_(params, "prior.zi", 2 * d, d, d_z, rng),
      h0_(params.create("latent.h0", 1, d, 0.02, rng)) {}

Var LatentHeads::posterior_c_logits(const Var& h_phi) const { return c_head_.forward(h_phi); }

GaussianParams LatentHeads::posterior_z_s(const Var& h_phi) const {
    const double n = static_cast<double>(h_phi->value.rows());
    Var mean_vec = ag::scale(ag::matmul(ag::constant(Mat::Ones(1, h_phi->value.rows())), h_phi),
                             1.0 / n);
    return zs_head_.forward(mean_vec);
}

GaussianParams LatentHeads::posterior_z_i(const Var& h_phi) const {
    return zi_head_.forward(h_phi);
}

GaussianParams LatentHeads::prior_z_i(const Var& h_prev, const Var& e_c) const {
    return prior_i_head_.forward(ag::concat_cols({h_prev, e_c}));
}

GaussianParams prior_z_s(int d_z) {
    return {ag::constant(Mat::Zero(1, d_z)), ag::constant(Mat::Zero(1, d_z))};
}

}  // namespace flowgen
