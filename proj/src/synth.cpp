#include "flowgen/synth.hpp"

#include <json.hpp>

#include <fstream>
#include <random>
#include <sstream>

namespace flowgen {

using nlohmann::json;

void SynthSpec::validate() const {
    if (num_states < 2) throw SynthError("synth spec needs num_states >= 2");
    if (sessions < 1 || turns < 1) throw SynthError("synth spec needs sessions >= 1, turns >= 1");
    if (transition.size() != 0) {
        if (transition.rows() != num_states || transition.cols() != num_states)
            throw SynthError("transition matrix must be num_states x num_states");
        for (int r = 0; r < num_states; ++r) {
            if (transition.row(r).minCoeff() < 0.0)
                throw SynthError("transition matrix has a negative entry in row " +
                                 std::to_string(r));
            if (std::abs(transition.row(r).sum() - 1.0) > 1e-9)
                throw SynthError("transition matrix row " + std::to_string(r) +
                                 " does not sum to 1");
        }
    }
    if (initial.size() != 0 &&
        (initial.size() != num_states || initial.minCoeff() < 0.0 ||
         std::abs(initial.sum() - 1.0) > 1e-9))
        throw SynthError("initial distribution must be a length-num_states distribution");
    if (static_cast<int>(templates.size()) != num_states)
        throw SynthError("need one template bank per state");
    for (size_t s = 0; s < templates.size(); ++s) {
        if (templates[s].empty())
            throw SynthError("state " + std::to_string(s) + " has no templates");
        for (const auto& t : templates[s])
            if (t.empty()) throw SynthError("state " + std::to_string(s) + " has an empty template");
    }
}

SynthSpec SynthSpec::from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw SynthError("cannot read synth spec " + path);
    json j = json::parse(f);
    SynthSpec spec;
    spec.num_states = j.at("num_states").get<int>();
    spec.sessions = j.value("sessions", spec.sessions);
    spec.turns = j.value("turns", spec.turns);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("transition")) {
        auto rows = j.at("transition").get<std::vector<std::vector<double>>>();
        spec.transition.resize(static_cast<Eigen::Index>(rows.size()),
                               static_cast<Eigen::Index>(rows.empty() ? 0 : rows[0].size()));
        for (size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows[0].size())
                throw SynthError("ragged transition matrix in " + path);
            for (size_t c = 0; c < rows[r].size(); ++c)
                spec.transition(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    rows[r][c];
        }
    }
    if (j.contains("initial")) {
        auto v = j.at("initial").get<std::vector<double>>();
        spec.initial = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("templates")) {
        for (const auto& bank : j.at("templates")) {
            std::vector<std::vector<std::string>> out_bank;
            for (const auto& tmpl : bank) out_bank.push_back(tokenize(tmpl.get<std::string>()));
            spec.templates.push_back(std::move(out_bank));
        }
    } else {
        spec.templates = default_templates(spec.num_states, j.value("template_variant", 0));
    }
    return spec;
}

Eigen::MatrixXd random_stochastic_matrix(int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Eigen::MatrixXd m(k, k);
    for (int r = 0; r < k; ++r) {
        for (int c = 0; c < k; ++c) m(r, c) = u(rng);
        m.row(r) /= m.row(r).sum();
    }
    return m;
}

std::vector<std::vector<std::vector<std::string>>> default_templates(int k, int variant) {
    static const char* kActs[] = {"greet", "ask",    "inform", "close",
                                  "offer", "confirm", "thank",  "clarify"};
    const std::string suffix = "v" + std::to_string(variant);
    std::vector<std::vector<std::vector<std::string>>> banks;
    for (int s = 0; s < k; ++s) {
        std::string base = std::string(kActs[s % 8]) + (s >= 8 ? std::to_string(s / 8) : "") +
                           suffix;
        std::vector<std::vector<std::string>> bank;
        for (int t = 0; t < 4; ++t) {
            std::vector<std::string> tmpl;
            int len = 3 + t % 3;
            for (int w = 0; w < len; ++w)
                tmpl.push_back(base + "w" + std::to_string(t) + std::to_string(w));
            bank.push_back(std::move(tmpl));
        }
        banks.push_back(std::move(bank));
    }
    return banks;
}

SynthCorpus synthesize(const SynthSpec& spec) {
    spec.validate();
    Eigen::MatrixXd trans = spec.transition.size() != 0
                                ? spec.transition
                                : random_stochastic_matrix(spec.num_states, spec.seed);
    Eigen::VectorXd init =
        spec.initial.size() != 0
            ? spec.initial
            : Eigen::VectorXd::Constant(spec.num_states, 1.0 / spec.num_states);

    std::mt19937_64 rng(spec.seed);
    auto draw = [&](const Eigen::VectorXd& p) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double x = u(rng), acc = 0.0;
        for (int i = 0; i < p.size(); ++i) {
            acc += p(i);
            if (x < acc) return i;
        }
        return static_cast<int>(p.size()) - 1;
    };

    SynthCorpus out;
    for (int s = 0; s < spec.sessions; ++s) {
        DialogueSession session;
        std::ostringstream id;
        id << "synth-" << std::setw(5) << std::setfill('0') << s;
        session.session_id = id.str();
        std::vector<int> states;
        int state = draw(init);
        for (int t = 0; t < spec.turns; ++t) {
            if (t > 0) state = draw(trans.row(state).transpose());
            states.push_back(state);
            const auto& bank = spec.templates[static_cast<size_t>(state)];
            std::uniform_int_distribution<size_t> pick(0, bank.size() - 1);
            session.utterances.push_back(bank[pick(rng)]);
        }
        out.sessions.push_back(std::move(session));
        out.labels.push_back(std::move(states));
    }
    return out;
}

void write_synth(const SynthCorpus& corpus, const std::string& corpus_path,
                 const std::string& labels_path) {
    std::ofstream cf(corpus_path);
    if (!cf) throw SynthError("cannot write " + corpus_path);
    std::ofstream lf(labels_path);
    if (!lf) throw SynthError("cannot write " + labels_path);
    for (size_t i = 0; i < corpus.sessions.size(); ++i) {
        const auto& s = corpus.sessions[i];
        json utts = json::array();
        for (const auto& u : s.utterances) {
            std::ostringstream text;
            for (size_t w = 0; w < u.size(); ++w) text << (w ? " " : "") << u[w];
            utts.push_back(text.str());
        }
        cf << json{{"id", s.session_id}, {"utterances", utts}}.dump() << "\n";
        lf << json{{"id", s.session_id}, {"states", corpus.labels[i]}}.dump() << "\n";
    }
}

std::vector<std::vector<int>> load_labels(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw SynthError("cannot read labels " + path);
    std::vector<std::vector<int>> labels;
    std::string line;
    long line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            labels.push_back(j.at("states").get<std::vector<int>>());
        } catch (const json::exception& e) {
            throw SynthError("labels " + path + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    return labels;
}

}  // namespace flowgen
