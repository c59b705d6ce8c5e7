#pragma once

#include "flowgen/autograd.hpp"

#include <map>
#include <string>
#include <vector>

namespace flowgen {

// Named parameter registry. Insertion order is stable so optimizer state,
// checkpoints, and the gradient-flow audit all key off the same list.
class ParamStore {
public:
    ag::Var create(const std::string& name, int rows, int cols, double init_std,
                   std::mt19937_64& rng);
    ag::Var create_zeros(const std::string& name, int rows, int cols);
    ag::Var create_ones(const std::string& name, int rows, int cols);

    ag::Var get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::string>& names() const { return names_; }
    size_t size() const { return names_.size(); }

    void zero_grads();
    long total_scalars() const;

    // Prefix-based freezing: frozen parameters keep requires_grad but are
    // skipped by the optimizer.
    void freeze_prefix(const std::string& prefix);
    void unfreeze_all();
    bool is_frozen(const std::string& name) const;
    std::vector<std::string> frozen_names() const;

private:
    ag::Var insert(const std::string& name, ag::Mat value);

    std::vector<std::string> names_;
    std::map<std::string, ag::Var> vars_;
    std::map<std::string, int> index_;
    std::map<std::string, bool> frozen_;
};

}  // namespace flowgen
