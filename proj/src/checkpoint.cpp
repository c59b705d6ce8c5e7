#include "flowgen/checkpoint.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace flowgen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_mat(std::ofstream& f, const ag::Mat& m) {
    std::int64_t rows = m.rows(), cols = m.cols();
    f.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    f.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double v = m(r, c);
            f.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
}

ag::Mat read_mat(std::ifstream& f) {
    std::int64_t rows = 0, cols = 0;
    f.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    f.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!f || rows < 0 || cols < 0) throw CheckpointError("corrupt tensor header");
    ag::Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            double v = 0;
            f.read(reinterpret_cast<char*>(&v), sizeof(v));
            m(r, c) = v;
        }
    if (!f) throw CheckpointError("corrupt tensor payload");
    return m;
}

}  // namespace

void save_checkpoint(const std::string& dir, const DialogueModel& model, const Config& config,
                     long step, const AdamState* adam, const std::string& rng_state) {
    fs::create_directories(dir);
    const auto& params = model.params();

    json manifest;
    manifest["step"] = step;
    manifest["rng_state"] = rng_state;
    manifest["vocab_size"] = model.vocab_size();
    manifest["verb_vocab_size"] = model.verb_vocab_size();
    manifest["config"] = config.to_flat();
    manifest["params"] = params.names();
    manifest["has_adam"] = adam != nullptr;
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw CheckpointError("cannot write checkpoint manifest in " + dir);
    mf << manifest.dump(2) << "\n";

    std::ofstream pf(dir + "/params.bin", std::ios::binary);
    if (!pf) throw CheckpointError("cannot write params.bin in " + dir);
    for (const auto& name : params.names()) write_mat(pf, params.get(name)->value);

    if (adam) {
        std::ofstream af(dir + "/adam.bin", std::ios::binary);
        if (!af) throw CheckpointError("cannot write adam.bin in " + dir);
        std::int64_t astep = adam->step;
        af.write(reinterpret_cast<const char*>(&astep), sizeof(astep));
        for (const auto& name : params.names()) {
            write_mat(af, adam->m.at(name));
            write_mat(af, adam->v.at(name));
        }
    }
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw CheckpointError("checkpoint manifest not found in " + dir);
    json manifest = json::parse(mf);

    LoadedCheckpoint out;
    out.step = manifest.at("step").get<long>();
    out.rng_state = manifest.at("rng_state").get<std::string>();
    out.vocab_size = manifest.at("vocab_size").get<int>();
    out.verb_vocab_size = manifest.at("verb_vocab_size").get<int>();
    for (auto& [key, value] : manifest.at("config").items())
        out.config.set(key, value.get<std::string>());

    out.model = std::make_unique<DialogueModel>(out.config.model, out.vocab_size,
                                                out.verb_vocab_size, out.config.train.seed);
    auto names = manifest.at("params").get<std::vector<std::string>>();
    if (names != out.model->params().names())
        throw CheckpointError("checkpoint/config mismatch: parameter lists differ in " + dir);

    std::ifstream pf(dir + "/params.bin", std::ios::binary);
    if (!pf) throw CheckpointError("params.bin not found in " + dir);
    for (const auto& name : names) {
        ag::Mat m = read_mat(pf);
        auto var = out.model->params().get(name);
        if (m.rows() != var->value.rows() || m.cols() != var->value.cols())
            throw CheckpointError("checkpoint/config mismatch: shape of " + name + " differs");
        var->value = std::move(m);
    }

    out.has_adam = manifest.value("has_adam", false);
    if (out.has_adam) {
        std::ifstream af(dir + "/adam.bin", std::ios::binary);
        if (!af) throw CheckpointError("adam.bin not found in " + dir);
        std::int64_t astep = 0;
        af.read(reinterpret_cast<char*>(&astep), sizeof(astep));
        out.adam.step = astep;
        for (const auto& name : names) {
            out.adam.m[name] = read_mat(af);
            out.adam.v[name] = read_mat(af);
        }
    }
    return out;
}

}  // namespace flowgen
