#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace flowgen {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Which latent pathways and objectives are active. Presets mirror the
// ablation variants; no_zS and no_zI can also be combined.
struct Ablation {
    bool use_c = true;
    bool use_zS = true;
    bool use_zI = true;
    bool use_disentangle = true;

    static Ablation parse(const std::string& name);
    std::string name() const;
};

struct ModelConfig {
    // corpus
    int history_window = 7;   // utterances of context kept before the response
    int max_utt_tokens = 32;
    int vocab_max = 10000;

    // backbone
    int layers = 4;
    int heads = 4;
    int d = 128;
    int ffn = 512;
    int max_positions = 512;
    double dropout = 0.0;

    // latent structure
    int num_states = 8;       // N
    int flow_layers = 2;
    int flow_heads = 2;
    int d_z = -1;             // -1: inherit d
    bool gumbel_hard = true;  // straight-through hardening
    bool exact_c_expectation = false;  // enumerate all N states in the z^I KL
    bool state_decoder = false;        // condition decoding directly on e(c_t)

    // Gumbel temperature schedule
    double tau_init = 1.0;
    double tau_min = 0.5;
    double anneal_rate = 4e-5;

    Ablation ablation;

    int latent_dim() const { return d_z > 0 ? d_z : d; }
    void validate() const;
};

struct TrainConfig {
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int batch_size = 8;
    int max_steps = 500;
    double alpha = 1.0;  // weight on the disentanglement losses
    bool freeze_flow = false;
    int eval_every = 100;
    std::uint64_t seed = 1;
    int early_stop_patience = 5;
    bool kl_warmup = true;
    double kl_warmup_frac = 0.1;

    void validate() const;
};

struct DecodeConfig {
    int beam_size = 5;
    int max_new_tokens = 32;
    double length_penalty = 0.7;
    bool deterministic_latents = true;
    bool sample_states = false;   // sample c_t from the flow prior instead of argmax
    double state_temperature = 1.0;
    bool prior_zS = false;        // draw z^S from N(0, I) instead of the posterior
    std::uint64_t seed = 1;

    void validate() const;
};

// Flat dotted-key configuration file: one `key = value` per line, `#`
// comments. Unknown keys are hard errors naming the offending key.
struct Config {
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;

    static Config from_file(const std::string& path);
    static Config from_text(const std::string& text);
    void set(const std::string& key, const std::string& value);
    std::map<std::string, std::string> to_flat() const;
};

}  // namespace flowgen
