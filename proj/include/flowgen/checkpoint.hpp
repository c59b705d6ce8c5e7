#pragma once

#include "flowgen/model.hpp"

#include <string>

namespace flowgen {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Adam first/second-moment state keyed like the parameter store.
struct AdamState {
    std::map<std::string, ag::Mat> m;
    std::map<std::string, ag::Mat> v;
    long step = 0;
};

// A checkpoint is a directory: manifest.json (config snapshot, shapes, step,
// rng state) + params.bin (raw little-endian doubles, bit-exact round trip)
// + optional adam.bin.
void save_checkpoint(const std::string& dir, const DialogueModel& model, const Config& config,
                     long step, const AdamState* adam, const std::string& rng_state);

struct LoadedCheckpoint {
    Config config;
    std::unique_ptr<DialogueModel> model;
    AdamState adam;
    bool has_adam = false;
    long step = 0;
    std::string rng_state;
    int vocab_size = 0;
    int verb_vocab_size = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace flowgen
