#include "flowgen/model.hpp"

#include <cmath>

namespace flowgen {

using ag::Mat;
using ag::Var;

VerbVocab VerbVocab::build(const Vocabulary& vocab, const std::set<std::string>& lexicon) {
    VerbVocab vv;
    for (const auto& verb : lexicon) {
        if (!vocab.contains(verb)) continue;
        int tid = vocab.id(verb);
        vv.class_of_token[tid] = vv.size++;
    }
    return vv;
}

int VerbVocab::verb_class(int token_id) const {
    auto it = class_of_token.find(token_id);
    return it == class_of_token.end() ? 0 : it->second;  // [UNK-VERB]
}

DialogueModel::DialogueModel(const ModelConfig& cfg, int vocab_size, int verb_vocab_size,
                             std::uint64_t seed)
    : cfg_(cfg), vocab_size_(vocab_size), verb_vocab_size_(verb_vocab_size) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int d = cfg_.d;
    const int d_z = cfg_.latent_dim();
    backbone_ = std::make_unique<Backbone>(params_, "backbone", cfg_.layers, cfg_.heads, d,
                                           cfg_.ffn, vocab_size, cfg_.max_positions,
                                           cfg_.dropout, rng);
    // Lightweight inference encoder: half the backbone depth, own parameters.
    int inf_layers = std::max(1, cfg_.layers / 2);
    infenc_ = std::make_unique<Backbone>(params_, "infenc", inf_layers, cfg_.heads, d, cfg_.ffn,
                                         vocab_size, cfg_.max_positions, cfg_.dropout, rng);
    flow_ = std::make_unique<FlowPrior>(params_, cfg_.num_states, d, cfg_.flow_layers,
                                        cfg_.flow_heads, cfg_.max_positions, rng);
    heads_ = std::make_unique<LatentHeads>(params_, d, d_z, cfg_.num_states, rng);
    w_i_ = params_.create("fuse.wi", d_z, d, 0.02, rng);
    w_s_ = params_.create("fuse.ws", d_z, d, 0.02, rng);
    w_c_ = params_.create("fuse.wc", d, d, 0.02, rng);
    w_verb_ = params_.create("dir.w_verb", d_z, verb_vocab_size, 0.02, rng);
}

UtteranceVectors DialogueModel::infer_utterances(const EncodedSession& enc) const {
    Var h = infenc_->encode(enc.ids);
    return infenc_->pool(h, enc.spans);
}

std::pair<std::vector<int>, Eigen::MatrixXd> DialogueModel::posterior_states(
    const EncodedSession& enc) const {
    auto uv = infer_utterances(enc);
    Var logits = heads_->posterior_c_logits(uv.vectors);
    Mat probs(logits->value.rows(), logits->value.cols());
    std::vector<int> states;
    for (Eigen::Index r = 0; r < logits->value.rows(); ++r) {
        Eigen::ArrayXd row = logits->value.row(r).array();
        double m = row.maxCoeff();
        Eigen::ArrayXd e = (row - m).exp();
        probs.row(r) = (e / e.sum()).matrix().transpose();
        Eigen::Index best = 0;
        probs.row(r).maxCoeff(&best);  // first maximum: lower index wins ties
        states.push_back(static_cast<int>(best));
    }
    return {states, probs};
}

Var DialogueModel::fuse_logits(const Var& base, const Var& z_i, const Var& z_s,
                               const Var& e_c) const {
    Var emb_t = ag::transpose(backbone_->token_embedding());
    Var out = base;
    if (z_i) out = ag::add_rowvec(out, ag::matmul(ag::matmul(z_i, w_i_), emb_t));
    if (z_s) out = ag::add_rowvec(out, ag::matmul(ag::matmul(z_s, w_s_), emb_t));
    if (e_c) out = ag::add_rowvec(out, ag::matmul(ag::matmul(e_c, w_c_), emb_t));
    return out;
}

struct DialogueModel::SessionTerms {
    Var recon, kl_c, kl_zi, kl_zs, l_hid, l_dir;
    // MIM inputs (empty Vars when the pathway is off)
    Var z_s_sample, z_s_mu, z_s_lv;
    Var z_i_sample, z_i_mu, z_i_lv;  // [n x d_z]
    int n = 0;
    LatentBundle bundle;
};

DialogueModel::SessionTerms DialogueModel::forward_session(const PreparedSession& ps,
                                                           double tau, double kl_weight,
                                                           std::mt19937_64& rng,
                                                           bool training) {
    (void)kl_weight;
    const auto& enc = ps.enc;
    const int n = static_cast<int>(enc.spans.size());
    const auto& abl = cfg_.ablation;
    SessionTerms st;
    st.n = n;
    Var zero = ag::constant(Mat::Zero(1, 1));
    st.recon = zero;
    st.kl_c = zero;
    st.kl_zi = zero;
    st.kl_zs = zero;
    st.l_hid = zero;
    st.l_dir = zero;

    std::mt19937_64* drop = training ? &rng : nullptr;
    Var hidden = backbone_->encode(enc.ids, training, drop);
    auto pooled = backbone_->pool(hidden, enc.spans);
    Var h_phi = infenc_->pool(infenc_->encode(enc.ids, training, drop), enc.spans).vectors;

    // h_{t-1} rows with the trainable start state at t=1
    std::vector<Var> prev_rows{heads_->start_state()};
    if (n > 1) prev_rows.push_back(ag::slice_rows(pooled.vectors, 0, n - 1));
    Var h_prev = ag::concat_rows(prev_rows);

    // Discrete flow
    Var c_sample, e_c, q_c_logits;
    if (abl.use_c) {
        q_c_logits = heads_->posterior_c_logits(h_phi);
        c_sample = gumbel_sample(q_c_logits, tau, rng, cfg_.gumbel_hard);
        Var prior_logits = flow_->prior_logits(c_sample);
        st.kl_c = ag::sum(kl_categorical_logits(q_c_logits, prior_logits));
        e_c = flow_->embed(c_sample);
        st.bundle.q_c_probs = ag::softmax_rows(q_c_logits)->value;
        st.bundle.prior_c_probs = ag::softmax_rows(prior_logits)->value;
        st.bundle.c_samples = c_sample->value;
    }

    // z^I: posterior, prior conditioned on [h_{t-1}; e(c_t)] (zeros when no c)
    Var z_i;
    if (abl.use_zI) {
        GaussianParams post_i = heads_->posterior_z_i(h_phi);
        Var e_for_prior = abl.use_c ? e_c : ag::constant(Mat::Zero(n, cfg_.d));
        if (abl.use_c && cfg_.exact_c_expectation) {
            Var q_probs = ag::softmax_rows(q_c_logits);
            Var acc = zero;
            for (int s = 0; s < cfg_.num_states; ++s) {
                Var e_s = flow_->embed_hard(std::vector<int>(static_cast<size_t>(n), s));
                GaussianParams prior_s = heads_->prior_z_i(h_prev, e_s);
                Var kl_s = kl_gaussian(post_i, prior_s);  // [n x 1]
                acc = ag::add(acc, ag::sum(ag::mul(kl_s, ag::slice_cols(q_probs, s, 1))));
            }
            st.kl_zi = acc;
        } else {
            GaussianParams prior_i = heads_->prior_z_i(h_prev, e_for_prior);
            st.kl_zi = ag::sum(kl_gaussian(post_i, prior_i));
        }
        z_i = reparameterize(post_i, rng);
        st.z_i_sample = z_i;
        st.z_i_mu = post_i.mu;
        st.z_i_lv = post_i.log_var;
        st.bundle.z_i_mu = post_i.mu->value;
        st.bundle.z_i_sample = z_i->value;
    }

    // z^S
    Var z_s;
    if (abl.use_zS) {
        GaussianParams post_s = heads_->posterior_z_s(h_phi);
        st.kl_zs = ag::sum(kl_gaussian(post_s, prior_z_s(cfg_.latent_dim())));
        z_s = reparameterize(post_s, rng);
        st.z_s_sample = z_s;
        st.z_s_mu = post_s.mu;
        st.z_s_lv = post_s.log_var;
        st.bundle.z_s_mu = post_s.mu->value.row(0).transpose();
        st.bundle.z_s_sample = z_s->value.row(0).transpose();
    }

    // Reconstruction with fused logits, per utterance block
    Var base = backbone_->lm_logits(hidden);
    Var emb_t = ag::transpose(backbone_->token_embedding());
    Var latent_rows;  // [n x V], constant within each utterance
    if (z_i) latent_rows = ag::matmul(ag::matmul(z_i, w_i_), emb_t);
    if (z_s) {
        Var zs_row = ag::matmul(ag::matmul(z_s, w_s_), emb_t);
        latent_rows = latent_rows ? ag::add_rowvec(latent_rows, zs_row)
                                  : ag::add_rowvec(ag::constant(Mat::Zero(n, vocab_size_)), zs_row);
    }
    if (cfg_.state_decoder && abl.use_c) {
        Var ec_rows = ag::matmul(ag::matmul(e_c, w_c_), emb_t);
        latent_rows = latent_rows ? ag::add(latent_rows, ec_rows) : ec_rows;
    }
    Var recon = zero;
    for (int t = 0; t < n; ++t) {
        auto [s, e] = enc.spans[static_cast<size_t>(t)];
        int len = e - s;
        Var block = ag::slice_rows(base, s - 1, len);
        if (latent_rows) block = ag::add_rowvec(block, ag::slice_rows(latent_rows, t, 1));
        Var logp = ag::log_softmax_rows(block);
        // row r of the block sits at position s-1+r and predicts token s+r
        std::vector<std::pair<int, int>> targets;
        targets.reserve(static_cast<size_t>(len));
        for (int r = 0; r < len; ++r) targets.emplace_back(r, enc.ids[static_cast<size_t>(s + r)]);
        Var ll = ag::gather_sum(logp, targets);
        recon = ag::add(recon, ll);
    }
    st.recon = recon;

    // Disentanglement objectives
    if (abl.use_disentangle) {
        if (abl.use_zS) {
            auto z_of = [&](const EncodedSession& other) {
                Var hp = infenc_->pool(infenc_->encode(other.ids, training, drop), other.spans)
                             .vectors;
                return reparameterize(heads_->posterior_z_s(hp), rng);
            };
            st.l_hid = loss_hid(z_s, z_of(ps.shuf), z_of(ps.neg));
        }
        if (abl.use_zI) st.l_dir = loss_dir(z_i, w_verb_, ps.verb_targets);
    }
    return st;
}

ForwardResult DialogueModel::forward(const std::vector<PreparedSession>& batch, double tau,
                                     double kl_weight, double alpha, long corpus_size,
                                     std::mt19937_64& rng, bool training) {
    if (batch.empty()) throw ModelError("forward: empty batch");
    const auto& abl = cfg_.ablation;
    std::vector<SessionTerms> terms;
    terms.reserve(batch.size());
    for (const auto& ps : batch)
        terms.push_back(forward_session(ps, tau, kl_weight, rng, training));

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Var zero = ag::constant(Mat::Zero(1, 1));
    Var recon = zero, kl_c = zero, kl_zi = zero, kl_zs = zero, l_hid = zero, l_dir = zero;
    for (const auto& st : terms) {
        recon = ag::add(recon, st.recon);
        kl_c = ag::add(kl_c, st.kl_c);
        kl_zi = ag::add(kl_zi, st.kl_zi);
        kl_zs = ag::add(kl_zs, st.kl_zs);
        l_hid = ag::add(l_hid, st.l_hid);
        l_dir = ag::add(l_dir, st.l_dir);
    }
    recon = ag::scale(recon, inv_b);
    kl_c = ag::scale(kl_c, inv_b);
    kl_zi = ag::scale(kl_zi, inv_b);
    kl_zs = ag::scale(kl_zs, inv_b);
    l_hid = ag::scale(l_hid, inv_b);
    l_dir = ag::scale(l_dir, inv_b);

    // Mutual-information regularizer via minibatch-weighted entropy estimates,
    // per utterance index over the sessions that reach it.
    Var l_mim = zero;
    bool mim_active = abl.use_disentangle && abl.use_zS && abl.use_zI;
    if (mim_active) {
        int max_n = 0;
        for (const auto& st : terms) max_n = std::max(max_n, st.n);
        for (int t = 0; t < max_n; ++t) {
            std::vector<const SessionTerms*> subset;
            for (const auto& st : terms)
                if (st.n > t) subset.push_back(&st);
            if (subset.size() < 2) continue;
            std::vector<Var> zs_s, zs_m, zs_v, zi_s, zi_m, zi_v;
            for (const auto* st : subset) {
                zs_s.push_back(st->z_s_sample);
                zs_m.push_back(st->z_s_mu);
                zs_v.push_back(st->z_s_lv);
                zi_s.push_back(ag::slice_rows(st->z_i_sample, t, 1));
                zi_m.push_back(ag::slice_rows(st->z_i_mu, t, 1));
                zi_v.push_back(ag::slice_rows(st->z_i_lv, t, 1));
            }
            Var dens_s = pairwise_gaussian_log_density(ag::concat_rows(zs_s),
                                                       ag::concat_rows(zs_m),
                                                       ag::concat_rows(zs_v));
            Var dens_i = pairwise_gaussian_log_density(ag::concat_rows(zi_s),
                                                       ag::concat_rows(zi_m),
                                                       ag::concat_rows(zi_v));
            Var h_s = entropy_estimate(dens_s, corpus_size);
            Var h_i = entropy_estimate(dens_i, corpus_size);
            Var h_joint = entropy_estimate(ag::add(dens_s, dens_i), corpus_size);
            Var mi = ag::sub(ag::add(h_s, h_i), h_joint);
            l_mim = ag::sub(l_mim, mi);
        }
    }

    Var elbo_weighted = elbo_terms(recon, kl_c, kl_zi, kl_zs, kl_weight);
    double a = abl.use_disentangle ? alpha : 0.0;
    Var total = total_loss(elbo_weighted, l_hid, l_dir, l_mim, a);

    ForwardResult out;
    out.total = total;
    out.breakdown.reconstruction = ag::scalar(recon);
    out.breakdown.kl_c = ag::scalar(kl_c);
    out.breakdown.kl_zI = ag::scalar(kl_zi);
    out.breakdown.kl_zS = ag::scalar(kl_zs);
    out.breakdown.l_hid = abl.use_disentangle && abl.use_zS ? ag::scalar(l_hid) : 0.0;
    out.breakdown.l_dir = abl.use_disentangle && abl.use_zI ? ag::scalar(l_dir) : 0.0;
    out.breakdown.l_mim = mim_active ? ag::scalar(l_mim) : 0.0;
    out.breakdown.elbo = out.breakdown.reconstruction - out.breakdown.kl_c -
                         out.breakdown.kl_zI - out.breakdown.kl_zS;
    out.breakdown.total = ag::scalar(total);
    for (auto& st : terms) out.bundles.push_back(std::move(st.bundle));
    return out;
}

}  // namespace flowgen
