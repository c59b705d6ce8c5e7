#pragma once

#include "flowgen/corpus.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace flowgen {

struct SynthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Ground-truth Markov-chain dialogue generator: each latent state owns a set
// of utterance templates; sessions roll the chain and sample one template per
// turn. Emits the corpus plus the true state labels.
struct SynthSpec {
    int num_states = 4;
    Eigen::MatrixXd transition;  // [K x K] row-stochastic; empty -> random from seed
    Eigen::VectorXd initial;     // [K]; empty -> uniform
    std::vector<std::vector<std::vector<std::string>>> templates;  // [state][template][token]
    int sessions = 1000;
    int turns = 6;
    std::uint64_t seed = 1;

    void validate() const;
    static SynthSpec from_json_file(const std::string& path);
};

struct SynthCorpus {
    std::vector<DialogueSession> sessions;
    std::vector<std::vector<int>> labels;  // true state per turn, parallel to sessions
};

Eigen::MatrixXd random_stochastic_matrix(int k, std::uint64_t seed);

// Built-in template banks; different variants use disjoint vocabularies so
// two domains can share a state machine while sharing no surface tokens.
std::vector<std::vector<std::vector<std::string>>> default_templates(int k, int variant);

SynthCorpus synthesize(const SynthSpec& spec);

void write_synth(const SynthCorpus& corpus, const std::string& corpus_path,
                 const std::string& labels_path);

// Labels file: JSONL of {"id", "states"}.
std::vector<std::vector<int>> load_labels(const std::string& path);

}  // namespace flowgen
