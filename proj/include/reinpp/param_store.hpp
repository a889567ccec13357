#pragma once

#include "reinpp/tensor.hpp"

#include <functional>
#include <map>
#include <string>

namespace reinpp {

struct ParamEntry {
    Tensor value;
    bool trainable = true;
};

// Named parameter arrays. Iteration order is lexicographic by name (std::map).
// Shapes are fixed at insertion; set() enforces that.
class ParamStore {
public:
    void add(const std::string& name, Tensor value, bool trainable);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    void set(const std::string& name, const Tensor& value);
    bool trainable(const std::string& name) const;

    const std::map<std::string, ParamEntry>& entries() const { return entries_; }
    std::map<std::string, ParamEntry>& entries() { return entries_; }

    std::size_t size() const { return entries_.size(); }
    std::size_t total_params() const;

    // Entries whose name satisfies the predicate, copied.
    ParamStore subset(const std::function<bool(const std::string&)>& keep) const;
    ParamStore subset_prefix(const std::string& prefix) const;

    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

    bool operator==(const ParamStore& o) const;

private:
    std::map<std::string, ParamEntry> entries_;
};

using GradMap = std::map<std::string, Tensor>;

void grad_accumulate(GradMap& into, const GradMap& from, double coeff = 1.0);

}  // namespace reinpp
