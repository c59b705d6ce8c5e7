#include "flowgen/params.hpp"

#include <stdexcept>

namespace flowgen {

ag::Var ParamStore::insert(const std::string& name, ag::Mat value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto v = ag::leaf(std::move(value));
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    vars_[name] = v;
    frozen_[name] = false;
    return v;
}

ag::Var ParamStore::create(const std::string& name, int rows, int cols, double init_std,
                           std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, init_std);
    ag::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = dist(rng);
    return insert(name, std::move(m));
}

ag::Var ParamStore::create_zeros(const std::string& name, int rows, int cols) {
    return insert(name, ag::Mat::Zero(rows, cols));
}

ag::Var ParamStore::create_ones(const std::string& name, int rows, int cols) {
    return insert(name, ag::Mat::Ones(rows, cols));
}

ag::Var ParamStore::get(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, v] : vars_) v->grad.resize(0, 0);
}

long ParamStore::total_scalars() const {
    long n = 0;
    for (const auto& [name, v] : vars_) n += static_cast<long>(v->value.size());
    return n;
}

void ParamStore::freeze_prefix(const std::string& prefix) {
    bool any = false;
    for (const auto& name : names_) {
        if (name.rfind(prefix, 0) == 0) {
            frozen_[name] = true;
            any = true;
        }
    }
    if (!any) throw std::invalid_argument("freeze: no parameter matches prefix " + prefix);
}

void ParamStore::unfreeze_all() {
    for (auto& [name, f] : frozen_) f = false;
}

bool ParamStore::is_frozen(const std::string& name) const {
    auto it = frozen_.find(name);
    return it != frozen_.end() && it->second;
}

std::vector<std::string> ParamStore::frozen_names() const {
    std::vector<std::string> out;
    for (const auto& name : names_)
        if (is_frozen(name)) out.push_back(name);
    return out;
}

}  // namespace flowgen
