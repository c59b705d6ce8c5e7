#include "flowgen/evalkit.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace flowgen {

using nlohmann::json;

namespace {

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts count_ngrams(const TokenSeq& seq, int n) {
    NgramCounts counts;
    if (static_cast<int>(seq.size()) >= n)
        for (size_t i = 0; i + n <= seq.size(); ++i)
            ++counts[std::vector<std::string>(seq.begin() + static_cast<long>(i),
                                              seq.begin() + static_cast<long>(i + n))];
    return counts;
}

long lcs_length(const TokenSeq& a, const TokenSeq& b) {
    std::vector<long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double f1(double overlap, double hyp_len, double ref_len) {
    if (hyp_len == 0 || ref_len == 0) return 0.0;
    double p = overlap / hyp_len, r = overlap / ref_len;
    return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

void check_pairs(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
    if (hyps.empty()) throw EvalError("metric inputs are empty");
    if (hyps.size() != refs.size())
        throw EvalError("hypothesis/reference counts differ: " + std::to_string(hyps.size()) +
                        " vs " + std::to_string(refs.size()));
}

}  // namespace

std::string MetricReport::to_json() const {
    json j;
    j["bleu_1"] = bleu_1;
    j["bleu_2"] = bleu_2;
    j["bleu_3"] = bleu_3;
    j["bleu_4"] = bleu_4;
    j["rouge_1"] = rouge_1;
    j["rouge_2"] = rouge_2;
    j["rouge_l"] = rouge_l;
    j["distinct_1"] = distinct_1;
    j["distinct_2"] = distinct_2;
    j["corpus_size"] = corpus_size;
    j["config_hash"] = config_hash;
    return j.dump(2);
}

double bleu_n(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
              int n, double epsilon) {
    check_pairs(hypotheses, references);
    if (n < 1) throw EvalError("bleu order must be >= 1");

    long hyp_len = 0, ref_len = 0;
    std::vector<double> matched(static_cast<size_t>(n), 0.0);
    std::vector<double> total(static_cast<size_t>(n), 0.0);
    for (size_t i = 0; i < hypotheses.size(); ++i) {
        hyp_len += static_cast<long>(hypotheses[i].size());
        ref_len += static_cast<long>(references[i].size());
        for (int k = 1; k <= n; ++k) {
            auto h = count_ngrams(hypotheses[i], k);
            auto r = count_ngrams(references[i], k);
            for (const auto& [gram, cnt] : h) {
                auto it = r.find(gram);
                // Clipped precision: credit at most the reference count.
                if (it != r.end())
                    matched[static_cast<size_t>(k - 1)] +=
                        static_cast<double>(std::min(cnt, it->second));
                total[static_cast<size_t>(k - 1)] += static_cast<double>(cnt);
            }
        }
    }

    double log_prec = 0.0;
    for (int k = 0; k < n; ++k) {
        size_t idx = static_cast<size_t>(k);
        if (total[idx] == 0.0) return 0.0;  // hypotheses too short for this order
        double num = matched[idx] > 0.0 ? matched[idx] : epsilon;
        log_prec += std::log(num / total[idx]) / static_cast<double>(n);
    }
    if (hyp_len == 0) return 0.0;
    double bp = hyp_len < ref_len
                    ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                    : 1.0;
    return bp * std::exp(log_prec);
}

RougeScores rouge(const std::vector<TokenSeq>& hypotheses,
                  const std::vector<TokenSeq>& references) {
    check_pairs(hypotheses, references);
    RougeScores out;
    for (size_t i = 0; i < hypotheses.size(); ++i) {
        const auto& h = hypotheses[i];
        const auto& r = references[i];
        for (int n : {1, 2}) {
            auto hc = count_ngrams(h, n);
            auto rc = count_ngrams(r, n);
            double overlap = 0, htot = 0, rtot = 0;
            for (const auto& [gram, cnt] : hc) {
                htot += static_cast<double>(cnt);
                auto it = rc.find(gram);
                if (it != rc.end()) overlap += static_cast<double>(std::min(cnt, it->second));
            }
            for (const auto& [gram, cnt] : rc) rtot += static_cast<double>(cnt);
            double score = f1(overlap, htot, rtot);
            (n == 1 ? out.r1 : out.r2) += score;
        }
        out.rl += f1(static_cast<double>(lcs_length(h, r)), static_cast<double>(h.size()),
                     static_cast<double>(r.size()));
    }
    double m = static_cast<double>(hypotheses.size());
    out.r1 /= m;
    out.r2 /= m;
    out.rl /= m;
    return out;
}

double distinct_n(const std::vector<TokenSeq>& hypotheses, int n) {
    std::set<std::vector<std::string>> unique;
    long total = 0;
    for (const auto& h : hypotheses)
        for (const auto& [gram, cnt] : count_ngrams(h, n)) {
            unique.insert(gram);
            total += cnt;
        }
    if (total == 0) throw EvalError("distinct-" + std::to_string(n) + ": no n-grams in input");
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

MetricReport evaluate_pairs(const std::vector<TokenSeq>& hypotheses,
                            const std::vector<TokenSeq>& references) {
    MetricReport rep;
    rep.bleu_1 = bleu_n(hypotheses, references, 1);
    rep.bleu_2 = bleu_n(hypotheses, references, 2);
    rep.bleu_3 = bleu_n(hypotheses, references, 3);
    rep.bleu_4 = bleu_n(hypotheses, references, 4);
    auto r = rouge(hypotheses, references);
    rep.rouge_1 = r.r1;
    rep.rouge_2 = r.r2;
    rep.rouge_l = r.rl;
    // Degenerate hypothesis sets (e.g. an untrained model emitting empty
    // strings) report 0 rather than aborting the whole evaluation.
    auto safe_distinct = [&](int n) {
        try {
            return distinct_n(hypotheses, n);
        } catch (const EvalError&) {
            return 0.0;
        }
    };
    rep.distinct_1 = safe_distinct(1);
    rep.distinct_2 = safe_distinct(2);
    rep.corpus_size = static_cast<long>(hypotheses.size());
    return rep;
}

StateAssignment assign_states(const std::vector<DialogueSession>& corpus,
                              const DialogueModel& model, const Vocabulary& vocab) {
    StateAssignment out;
    for (const auto& session : corpus) {
        EncodedSession enc = concat_session(session, vocab);
        auto [states, probs] = model.posterior_states(enc);
        for (size_t t = 0; t < states.size(); ++t) {
            StateAssignment::Row row;
            row.session_id = session.session_id;
            row.turn = static_cast<int>(t);
            row.state = states[t];
            row.probability = probs(static_cast<Eigen::Index>(t), states[t]);
            row.utterance = session.utterances[t];
            out.rows.push_back(std::move(row));
        }
    }
    return out;
}

TransitionMatrix transition_matrix(const StateAssignment& assignments, int num_states) {
    TransitionMatrix out;
    out.probs = Eigen::MatrixXd::Zero(num_states, num_states);
    out.occupancy = Eigen::VectorXd::Zero(num_states);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(num_states, num_states);
    for (size_t i = 0; i < assignments.rows.size(); ++i) {
        const auto& row = assignments.rows[i];
        out.occupancy(row.state) += 1.0;
        if (i + 1 < assignments.rows.size()) {
            const auto& next = assignments.rows[i + 1];
            if (next.session_id == row.session_id && next.turn == row.turn + 1)
                counts(row.state, next.state) += 1.0;
        }
    }
    for (int s = 0; s < num_states; ++s) {
        double row_sum = counts.row(s).sum();
        if (row_sum > 0.0)
            out.probs.row(s) = counts.row(s) / row_sum;
        if (out.occupancy(s) == 0.0) out.empty_states.push_back(s);
    }
    return out;
}

double adjusted_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size())
        throw EvalError("label lists differ in length: " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
    if (a.empty()) throw EvalError("label lists are empty");
    const double n = static_cast<double>(a.size());

    std::map<int, long> ca, cb;
    std::map<std::pair<int, int>, long> cab;
    for (size_t i = 0; i < a.size(); ++i) {
        ++ca[a[i]];
        ++cb[b[i]];
        ++cab[{a[i], b[i]}];
    }

    double h_a = 0, h_b = 0;
    for (const auto& [k, c] : ca) h_a -= c / n * std::log(c / n);
    for (const auto& [k, c] : cb) h_b -= c / n * std::log(c / n);

    double mi = 0;
    for (const auto& [kv, c] : cab) {
        double pij = c / n;
        double pi = ca.at(kv.first) / n, pj = cb.at(kv.second) / n;
        mi += pij * std::log(pij / (pi * pj));
    }

    // Expected MI under the permutation model (hypergeometric over the
    // contingency table), computed with log-factorials for stability.
    auto lf = [](double x) { return std::lgamma(x + 1.0); };
    double emi = 0;
    for (const auto& [ki, ai_] : ca)
        for (const auto& [kj, bj_] : cb) {
            double ai = static_cast<double>(ai_), bj = static_cast<double>(bj_);
            long lo = std::max<long>(1, static_cast<long>(ai + bj - n));
            long hi = static_cast<long>(std::min(ai, bj));
            for (long nij = lo; nij <= hi; ++nij) {
                double t = static_cast<double>(nij);
                double term = t / n * std::log(n * t / (ai * bj));
                double log_p = lf(ai) + lf(bj) + lf(n - ai) + lf(n - bj) - lf(n) - lf(t) -
                               lf(ai - t) - lf(bj - t) - lf(n - ai - bj + t);
                emi += term * std::exp(log_p);
            }
        }

    double denom = 0.5 * (h_a + h_b) - emi;
    if (std::abs(denom) < 1e-12) return h_a == 0.0 && h_b == 0.0 ? 1.0 : 0.0;
    return (mi - emi) / denom;
}

double structure_recovery_score(const StateAssignment& assignments,
                                const std::vector<int>& ground_truth_labels) {
    std::vector<int> states;
    states.reserve(assignments.rows.size());
    for (const auto& row : assignments.rows) states.push_back(row.state);
    return adjusted_mutual_information(states, ground_truth_labels);
}

void export_structure(const StateAssignment& assignments, const TransitionMatrix& matrix,
                      const std::string& clusters_json_path, const std::string& dot_path,
                      int top_k) {
    const int n = static_cast<int>(matrix.probs.rows());
    std::vector<std::vector<const StateAssignment::Row*>> by_state(static_cast<size_t>(n));
    for (const auto& row : assignments.rows)
        if (row.state >= 0 && row.state < n) by_state[static_cast<size_t>(row.state)].push_back(&row);

    json clusters = json::array();
    for (int s = 0; s < n; ++s) {
        auto& rows = by_state[static_cast<size_t>(s)];
        if (rows.empty()) continue;
        std::stable_sort(rows.begin(), rows.end(),
                         [](const StateAssignment::Row* x, const StateAssignment::Row* y) {
                             if (x->probability != y->probability)
                                 return x->probability > y->probability;
                             if (x->session_id != y->session_id)
                                 return x->session_id < y->session_id;
                             return x->turn < y->turn;
                         });
        json entry;
        entry["state"] = s;
        entry["count"] = rows.size();
        json utts = json::array();
        for (size_t i = 0; i < rows.size() && i < static_cast<size_t>(top_k); ++i) {
            std::ostringstream text;
            for (size_t w = 0; w < rows[i]->utterance.size(); ++w)
                text << (w ? " " : "") << rows[i]->utterance[w];
            utts.push_back({{"session_id", rows[i]->session_id},
                            {"turn", rows[i]->turn},
                            {"probability", rows[i]->probability},
                            {"text", text.str()}});
        }
        entry["utterances"] = std::move(utts);
        clusters.push_back(std::move(entry));
    }
    std::ofstream cf(clusters_json_path);
    if (!cf) throw EvalError("cannot write " + clusters_json_path);
    cf << clusters.dump(2) << "\n";

    std::ofstream df(dot_path);
    if (!df) throw EvalError("cannot write " + dot_path);
    df << "digraph flow {\n";
    for (int s = 0; s < n; ++s)
        df << "  s" << s << " [label=\"state " << s << "\\nvisits "
           << static_cast<long>(matrix.occupancy(s)) << "\"];\n";
    std::ostringstream edges;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (matrix.probs(i, j) > 0.0) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.4f", matrix.probs(i, j));
                edges << "  s" << i << " -> s" << j << " [label=\"" << buf << "\"];\n";
            }
    df << edges.str() << "}\n";
}

}  // namespace flowgen
