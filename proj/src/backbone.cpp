#include "flowgen/backbone.hpp"

namespace flowgen {

using ag::Var;

TransformerStack::TransformerStack(ParamStore& params, const std::string& prefix, int layers,
                                   int heads, int d, int ffn, int max_positions, double dropout,
                                   std::mt19937_64& rng)
    : layers_(layers), heads_(heads), d_(d), ffn_(ffn), max_positions_(max_positions),
      dropout_(dropout) {
    if (d % heads != 0) throw ConfigError("transformer width must divide head count");
    const double std = 0.02;
    pos_emb_ = params.create(prefix + ".pos_emb", max_positions, d, std, rng);
    lnf_g_ = params.create_ones(prefix + ".lnf.g", 1, d);
    lnf_b_ = params.create_zeros(prefix + ".lnf.b", 1, d);
    for (int l = 0; l < layers; ++l) {
        std::string p = prefix + ".layer" + std::to_string(l);
        Layer lay;
        lay.ln1_g = params.create_ones(p + ".ln1.g", 1, d);
        lay.ln1_b = params.create_zeros(p + ".ln1.b", 1, d);
        lay.ln2_g = params.create_ones(p + ".ln2.g", 1, d);
        lay.ln2_b = params.create_zeros(p + ".ln2.b", 1, d);
        lay.wq = params.create(p + ".attn.wq", d, d, std, rng);
        lay.bq = params.create_zeros(p + ".attn.bq", 1, d);
        lay.wk = params.create(p + ".attn.wk", d, d, std, rng);
        lay.bk = params.create_zeros(p + ".attn.bk", 1, d);
        lay.wv = params.create(p + ".attn.wv", d, d, std, rng);
        lay.bv = params.create_zeros(p + ".attn.bv", 1, d);
        lay.wo = params.create(p + ".attn.wo", d, d, std, rng);
        lay.bo = params.create_zeros(p + ".attn.bo", 1, d);
        lay.w1 = params.create(p + ".ffn.w1", d, ffn, std, rng);
        lay.b1 = params.create_zeros(p + ".ffn.b1", 1, ffn);
        lay.w2 = params.create(p + ".ffn.w2", ffn, d, std, rng);
        lay.b2 = params.create_zeros(p + ".ffn.b2", 1, d);
        layers_params_.push_back(std::move(lay));
    }
}

Var TransformerStack::forward(const Var& x, bool training, std::mt19937_64* drop_rng) const {
    const int t = static_cast<int>(x->value.rows());
    if (t > max_positions_)
        throw ModelError("sequence length " + std::to_string(t) + " exceeds max_positions " +
                         std::to_string(max_positions_));
    const int dh = d_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Var h = ag::add(x, ag::slice_rows(pos_emb_, 0, t));
    auto drop = [&](const Var& v) {
        return (training && drop_rng) ? ag::dropout(v, dropout_, *drop_rng, true) : v;
    };
    for (const auto& lay : layers_params_) {
        Var n1 = ag::layer_norm_rows(h, lay.ln1_g, lay.ln1_b);
        Var q = ag::add_rowvec(ag::matmul(n1, lay.wq), lay.bq);
        Var k = ag::add_rowvec(ag::matmul(n1, lay.wk), lay.bk);
        Var v = ag::add_rowvec(ag::matmul(n1, lay.wv), lay.bv);
        std::vector<Var> heads_out;
        heads_out.reserve(static_cast<size_t>(heads_));
        for (int hd = 0; hd < heads_; ++hd) {
            Var qh = ag::slice_cols(q, hd * dh, dh);
            Var kh = ag::slice_cols(k, hd * dh, dh);
            Var vh = ag::slice_cols(v, hd * dh, dh);
            Var scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), scale);
            Var attn = ag::causal_softmax_rows(scores);
            heads_out.push_back(ag::matmul(attn, vh));
        }
        Var merged = ag::concat_cols(heads_out);
        Var attn_out = ag::add_rowvec(ag::matmul(merged, lay.wo), lay.bo);
        h = ag::add(h, drop(attn_out));
        Var n2 = ag::layer_norm_rows(h, lay.ln2_g, lay.ln2_b);
        Var ff = ag::add_rowvec(
            ag::matmul(ag::gelu(ag::add_rowvec(ag::matmul(n2, lay.w1), lay.b1)), lay.w2),
            lay.b2);
        h = ag::add(h, drop(ff));
    }
    return ag::layer_norm_rows(h, lnf_g_, lnf_b_);
}

UtteranceVectors attentive_pool(const Var& hidden, const std::vector<std::pair<int, int>>& spans,
                                const Var& query) {
    UtteranceVectors out;
    std::vector<Var> pooled;
    pooled.reserve(spans.size());
    for (auto [start, end] : spans) {
        int len = end - start;
        if (len <= 0) throw ModelError("attentive_pool: empty span");
        if (start < 0 || end > hidden->value.rows())
            throw ModelError("attentive_pool: span outside the hidden tensor");
        Var span = ag::slice_rows(hidden, start, len);          // [len x d]
        Var logits = ag::transpose(ag::matmul(span, ag::transpose(query)));  // [1 x len]
        Var alpha = ag::softmax_rows(logits);
        pooled.push_back(ag::matmul(alpha, span));              // [1 x d]
        out.weights.push_back(alpha->value.row(0).transpose());
    }
    out.vectors = ag::concat_rows(pooled);
    return out;
}

Backbone::Backbone(ParamStore& params, const std::string& prefix, int layers, int heads, int d,
                   int ffn, int vocab_size, int max_positions, double dropout,
                   std::mt19937_64& rng)
    : vocab_size_(vocab_size),
      tok_emb_(params.create(prefix + ".tok_emb", vocab_size, d, 0.02, rng)),
      query_(params.create(prefix + ".pool_q", 1, d, 0.02, rng)),
      stack_(params, prefix + ".trans", layers, heads, d, ffn, max_positions, dropout, rng) {}

Var Backbone::encode(const std::vector<int>& ids, bool training,
                     std::mt19937_64* drop_rng) const {
    for (int id : ids)
        if (id < 0 || id >= vocab_size_)
            throw ModelError("token id out of vocabulary range: " + std::to_string(id));
    Var x = ag::gather_rows(tok_emb_, ids);
    return stack_.forward(x, training, drop_rng);
}

UtteranceVectors Backbone::pool(const Var& hidden,
                                const std::vector<std::pair<int, int>>& spans) const {
    return attentive_pool(hidden, spans, query_);
}

Var Backbone::lm_logits(const Var& hidden) const {
    return ag::matmul(hidden, ag::transpose(tok_emb_));
}

}  // namespace flowgen
