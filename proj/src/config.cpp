#include "flowgen/config.hpp"

#include <fstream>
#include <sstream>

namespace flowgen {

Ablation Ablation::parse(const std::string& name) {
    Ablation a;
    if (name == "full") return a;
    if (name == "no_c") { a.use_c = false; return a; }
    if (name == "no_zS") { a.use_zS = false; return a; }
    if (name == "no_zI") { a.use_zI = false; return a; }
    if (name == "no_zS_zI") { a.use_zS = false; a.use_zI = false; return a; }
    if (name == "no_disentangle") { a.use_disentangle = false; return a; }
    throw ConfigError("unknown ablation variant: " + name);
}

std::string Ablation::name() const {
    if (!use_zS && !use_zI) return "no_zS_zI";
    if (!use_c) return "no_c";
    if (!use_zS) return "no_zS";
    if (!use_zI) return "no_zI";
    if (!use_disentangle) return "no_disentangle";
    return "full";
}

void ModelConfig::validate() const {
    if (d % heads != 0) throw ConfigError("model.d must be divisible by model.heads");
    if (num_states < 2) throw ConfigError("model.num_states must be >= 2");
    if (history_window < 1) throw ConfigError("model.history_window must be >= 1");
    if (max_utt_tokens < 1) throw ConfigError("model.max_utt_tokens must be >= 1");
    if (tau_min <= 0.0 || tau_init < tau_min)
        throw ConfigError("temperature schedule requires 0 < tau_min <= tau_init");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must be in [0,1)");
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train.lr must be positive");
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
    if (max_steps < 1) throw ConfigError("train.max_steps must be >= 1");
}

void DecodeConfig::validate() const {
    if (beam_size < 1) throw ConfigError("decode.beam_size must be >= 1");
    if (max_new_tokens < 1) throw ConfigError("decode.max_new_tokens must be >= 1");
    if (state_temperature <= 0.0)
        throw ConfigError("decode.state_temperature must be > 0");
    if (length_penalty < 0.0) throw ConfigError("decode.length_penalty must be >= 0");
}

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config key " + key + ": expected boolean, got '" + v + "'");
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
    // model
    if (key == "model.history_window") model.history_window = to_int(key, value);
    else if (key == "model.max_utt_tokens") model.max_utt_tokens = to_int(key, value);
    else if (key == "model.vocab_max") model.vocab_max = to_int(key, value);
    else if (key == "model.layers") model.layers = to_int(key, value);
    else if (key == "model.heads") model.heads = to_int(key, value);
    else if (key == "model.d") model.d = to_int(key, value);
    else if (key == "model.ffn") model.ffn = to_int(key, value);
    else if (key == "model.max_positions") model.max_positions = to_int(key, value);
    else if (key == "model.dropout") model.dropout = to_double(key, value);
    else if (key == "model.num_states") model.num_states = to_int(key, value);
    else if (key == "model.flow_layers") model.flow_layers = to_int(key, value);
    else if (key == "model.flow_heads") model.flow_heads = to_int(key, value);
    else if (key == "model.d_z") model.d_z = to_int(key, value);
    else if (key == "model.gumbel_hard") model.gumbel_hard = to_bool(key, value);
    else if (key == "model.exact_c_expectation") model.exact_c_expectation = to_bool(key, value);
    else if (key == "model.state_decoder") model.state_decoder = to_bool(key, value);
    else if (key == "model.tau_init") model.tau_init = to_double(key, value);
    else if (key == "model.tau_min") model.tau_min = to_double(key, value);
    else if (key == "model.anneal_rate") model.anneal_rate = to_double(key, value);
    else if (key == "model.ablation") model.ablation = Ablation::parse(value);
    // train
    else if (key == "train.lr") train.lr = to_double(key, value);
    else if (key == "train.adam_beta1") train.adam_beta1 = to_double(key, value);
    else if (key == "train.adam_beta2") train.adam_beta2 = to_double(key, value);
    else if (key == "train.adam_eps") train.adam_eps = to_double(key, value);
    else if (key == "train.grad_clip") train.grad_clip = to_double(key, value);
    else if (key == "train.batch_size") train.batch_size = to_int(key, value);
    else if (key == "train.max_steps") train.max_steps = to_int(key, value);
    else if (key == "train.alpha") train.alpha = to_double(key, value);
    else if (key == "train.freeze_flow") train.freeze_flow = to_bool(key, value);
    else if (key == "train.eval_every") train.eval_every = to_int(key, value);
    else if (key == "train.seed") train.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "train.early_stop_patience") train.early_stop_patience = to_int(key, value);
    else if (key == "train.kl_warmup") train.kl_warmup = to_bool(key, value);
    else if (key == "train.kl_warmup_frac") train.kl_warmup_frac = to_double(key, value);
    // decode
    else if (key == "decode.beam_size") decode.beam_size = to_int(key, value);
    else if (key == "decode.max_new_tokens") decode.max_new_tokens = to_int(key, value);
    else if (key == "decode.length_penalty") decode.length_penalty = to_double(key, value);
    else if (key == "decode.deterministic_latents") decode.deterministic_latents = to_bool(key, value);
    else if (key == "decode.sample_states") decode.sample_states = to_bool(key, value);
    else if (key == "decode.state_temperature") decode.state_temperature = to_double(key, value);
    else if (key == "decode.prior_zS") decode.prior_zS = to_bool(key, value);
    else if (key == "decode.seed") decode.seed = static_cast<std::uint64_t>(to_int(key, value));
    else
        throw ConfigError("unknown config key: " + key);
}

Config Config::from_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.model.validate();
    cfg.train.validate();
    cfg.decode.validate();
    return cfg;
}

Config Config::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
}

std::map<std::string, std::string> Config::to_flat() const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    auto d = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    std::map<std::string, std::string> m;
    m["model.history_window"] = std::to_string(model.history_window);
    m["model.max_utt_tokens"] = std::to_string(model.max_utt_tokens);
    m["model.vocab_max"] = std::to_string(model.vocab_max);
    m["model.layers"] = std::to_string(model.layers);
    m["model.heads"] = std::to_string(model.heads);
    m["model.d"] = std::to_string(model.d);
    m["model.ffn"] = std::to_string(model.ffn);
    m["model.max_positions"] = std::to_string(model.max_positions);
    m["model.dropout"] = d(model.dropout);
    m["model.num_states"] = std::to_string(model.num_states);
    m["model.flow_layers"] = std::to_string(model.flow_layers);
    m["model.flow_heads"] = std::to_string(model.flow_heads);
    m["model.d_z"] = std::to_string(model.d_z);
    m["model.gumbel_hard"] = b(model.gumbel_hard);
    m["model.exact_c_expectation"] = b(model.exact_c_expectation);
    m["model.state_decoder"] = b(model.state_decoder);
    m["model.tau_init"] = d(model.tau_init);
    m["model.tau_min"] = d(model.tau_min);
    m["model.anneal_rate"] = d(model.anneal_rate);
    m["model.ablation"] = model.ablation.name();
    m["train.lr"] = d(train.lr);
    m["train.adam_beta1"] = d(train.adam_beta1);
    m["train.adam_beta2"] = d(train.adam_beta2);
    m["train.adam_eps"] = d(train.adam_eps);
    m["train.grad_clip"] = d(train.grad_clip);
    m["train.batch_size"] = std::to_string(train.batch_size);
    m["train.max_steps"] = std::to_string(train.max_steps);
    m["train.alpha"] = d(train.alpha);
    m["train.freeze_flow"] = b(train.freeze_flow);
    m["train.eval_every"] = std::to_string(train.eval_every);
    m["train.seed"] = std::to_string(train.seed);
    m["train.early_stop_patience"] = std::to_string(train.early_stop_patience);
    m["train.kl_warmup"] = b(train.kl_warmup);
    m["train.kl_warmup_frac"] = d(train.kl_warmup_frac);
    m["decode.beam_size"] = std::to_string(decode.beam_size);
    m["decode.max_new_tokens"] = std::to_string(decode.max_new_tokens);
    m["decode.length_penalty"] = d(decode.length_penalty);
    m["decode.deterministic_latents"] = b(decode.deterministic_latents);
    m["decode.sample_states"] = b(decode.sample_states);
    m["decode.state_temperature"] = d(decode.state_temperature);
    m["decode.prior_zS"] = b(decode.prior_zS);
    m["decode.seed"] = std::to_string(decode.seed);
    return m;
}

}  // namespace flowgen
