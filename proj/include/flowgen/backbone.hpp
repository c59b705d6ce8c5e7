#pragma once

#include "flowgen/autograd.hpp"
#include "flowgen/config.hpp"
#include "flowgen/corpus.hpp"
#include "flowgen/params.hpp"

#include <string>
#include <utility>
#include <vector>

namespace flowgen {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Pre-norm causal transformer over continuous input rows. Shared by the
// generation backbone, the inference encoder, and the flow-prior network.
class TransformerStack {
public:
    TransformerStack(ParamStore& params, const std::string& prefix, int layers, int heads,
                     int d, int ffn, int max_positions, double dropout, std::mt19937_64& rng);

    // x: [T x d]. Adds learned absolute position embeddings, runs the causal
    // blocks, applies the final layer norm.
    ag::Var forward(const ag::Var& x, bool training = false,
                    std::mt19937_64* drop_rng = nullptr) const;

    int d() const { return d_; }
    int max_positions() const { return max_positions_; }

private:
    struct Layer {
        ag::Var ln1_g, ln1_b, ln2_g, ln2_b;
        ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
        ag::Var w1, b1, w2, b2;
    };

    int layers_, heads_, d_, ffn_, max_positions_;
    double dropout_;
    ag::Var pos_emb_;
    ag::Var lnf_g_, lnf_b_;
    std::vector<Layer> layers_params_;
};

// Pooled utterance vectors with their attention weights kept for inspection.
struct UtteranceVectors {
    ag::Var vectors;                       // [n x d]
    std::vector<Eigen::VectorXd> weights;  // per utterance, over its span
};

// h_t = sum_i alpha_{t,i} h_{t,i}, alpha = softmax over q . h_{t,i}
// restricted to the span ([EOS] positions included).
UtteranceVectors attentive_pool(const ag::Var& hidden,
                                const std::vector<std::pair<int, int>>& spans,
                                const ag::Var& query);

// Token encoder: embeddings + TransformerStack + pooling query + tied
// vocabulary projection.
class Backbone {
public:
    Backbone(ParamStore& params, const std::string& prefix, int layers, int heads, int d,
             int ffn, int vocab_size, int max_positions, double dropout, std::mt19937_64& rng);

    ag::Var encode(const std::vector<int>& ids, bool training = false,
                   std::mt19937_64* drop_rng = nullptr) const;  // [T x d]

    UtteranceVectors pool(const ag::Var& hidden,
                          const std::vector<std::pair<int, int>>& spans) const;

    // p_{t,i} = W_v h_{t,i}, no bias; W_v is the tied token embedding.
    ag::Var lm_logits(const ag::Var& hidden) const;

    ag::Var token_embedding() const { return tok_emb_; }
    ag::Var pool_query() const { return query_; }
    int vocab_size() const { return vocab_size_; }
    int d() const { return stack_.d(); }

private:
    int vocab_size_;
    ag::Var tok_emb_;  // [V x d], doubles as the output projection
    ag::Var query_;    // [1 x d]
    TransformerStack stack_;
};

}  // namespace flowgen
