#pragma once

#include "flowgen/model.hpp"

#include <string>
#include <vector>

namespace flowgen {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using TokenSeq = std::vector<std::string>;

struct MetricReport {
    double bleu_1 = 0, bleu_2 = 0, bleu_3 = 0, bleu_4 = 0;
    double rouge_1 = 0, rouge_2 = 0, rouge_l = 0;
    double distinct_1 = 0, distinct_2 = 0;
    long corpus_size = 0;
    std::string config_hash;

    std::string to_json() const;
};

// Corpus-level BLEU with uniform weights up to n and add-epsilon smoothing
// on zero n-gram counts.
double bleu_n(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
              int n, double epsilon = 1e-9);

struct RougeScores {
    double r1 = 0, r2 = 0, rl = 0;
};
// Unigram/bigram overlap F1 and LCS-based F1, averaged over pairs.
RougeScores rouge(const std::vector<TokenSeq>& hypotheses,
                  const std::vector<TokenSeq>& references);

double distinct_n(const std::vector<TokenSeq>& hypotheses, int n);

MetricReport evaluate_pairs(const std::vector<TokenSeq>& hypotheses,
                            const std::vector<TokenSeq>& references);

struct StateAssignment {
    struct Row {
        std::string session_id;
        int turn = 0;
        int state = 0;
        double probability = 0.0;
        TokenSeq utterance;
    };
    std::vector<Row> rows;
};

StateAssignment assign_states(const std::vector<DialogueSession>& corpus,
                              const DialogueModel& model, const Vocabulary& vocab);

struct TransitionMatrix {
    Eigen::MatrixXd probs;          // row-stochastic where occupied, zero rows flagged
    Eigen::VectorXd occupancy;      // state visit counts
    std::vector<int> empty_states;  // zero-occupancy row indices
};

TransitionMatrix transition_matrix(const StateAssignment& assignments, int num_states);

// Adjusted mutual information between the assignment states and ground-truth
// labels; 1 for a bijective relabeling, ~0 at chance.
double adjusted_mutual_information(const std::vector<int>& a, const std::vector<int>& b);

double structure_recovery_score(const StateAssignment& assignments,
                                const std::vector<int>& ground_truth_labels);

// Per-state utterance clusters (top-k by posterior confidence) as JSON and
// the transition graph as DOT.
void export_structure(const StateAssignment& assignments, const TransitionMatrix& matrix,
                      const std::string& clusters_json_path, const std::string& dot_path,
                      int top_k = 10);

}  // namespace flowgen
