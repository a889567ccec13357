#pragma once

#include "reinpp/param_store.hpp"
#include "reinpp/tape.hpp"

#include <map>

namespace reinpp {

// Mounts ParamStore entries onto a tape as leaves, one node per name.
// Trainable entries get gradients; frozen entries are constants.
class Binding {
public:
    Binding(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

    Var operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        Var v = tape_.leaf(store_.get(name), store_.trainable(name));
        cache_.emplace(name, v);
        return v;
    }

    // Gradients of every mounted trainable entry, after Tape::backward.
    GradMap grads() const {
        GradMap out;
        for (const auto& [name, var] : cache_)
            if (tape_.needs_grad(var)) out.emplace(name, tape_.grad(var));
        return out;
    }

private:
    Tape& tape_;
    const ParamStore& store_;
    std::map<std::string, Var> cache_;
};

}  // namespace reinpp
