#include "reinpp/param_store.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace reinpp {

namespace {
constexpr char kMagic[5] = {'R', 'E', 'I', 'N', '1'};

template <typename T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
}  // namespace

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (entries_.count(name)) throw std::invalid_argument("ParamStore: duplicate entry " + name);
    entries_.emplace(name, ParamEntry{std::move(value), trainable});
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: missing entry " + name);
    return it->second.value;
}

void ParamStore::set(const std::string& name, const Tensor& value) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: missing entry " + name);
    if (it->second.value.shape != value.shape)
        throw std::invalid_argument("ParamStore: shape change rejected for " + name);
    it->second.value = value;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: missing entry " + name);
    return it->second.trainable;
}

std::size_t ParamStore::total_params() const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_) n += e.value.numel();
    return n;
}

ParamStore ParamStore::subset(const std::function<bool(const std::string&)>& keep) const {
    ParamStore out;
    for (const auto& [k, e] : entries_)
        if (keep(k)) out.add(k, e.value, e.trainable);
    return out;
}

ParamStore ParamStore::subset_prefix(const std::string& prefix) const {
    return subset([&](const std::string& n) { return n.rfind(prefix, 0) == 0; });
}

void ParamStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write(kMagic, 5);
    for (const auto& [name, e] : entries_) {
        write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_raw<std::uint8_t>(os, e.trainable ? 1 : 0);
        write_raw<std::uint8_t>(os, static_cast<std::uint8_t>(e.value.ndim()));
        for (auto d : e.value.shape) write_raw<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(e.value.data.data()),
                 static_cast<std::streamsize>(e.value.data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0)
        throw std::runtime_error("checkpoint: unknown magic in " + path);
    ParamStore ps;
    while (true) {
        std::uint32_t nlen;
        is.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
        if (is.eof()) break;
        if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const bool trainable = read_raw<std::uint8_t>(is) != 0;
        const auto ndim = read_raw<std::uint8_t>(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(read_raw<std::uint64_t>(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated data for " + name);
        ps.add(name, std::move(t), trainable);
    }
    return ps;
}

bool ParamStore::operator==(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    auto it = entries_.begin();
    auto jt = o.entries_.begin();
    for (; it != entries_.end(); ++it, ++jt) {
        if (it->first != jt->first) return false;
        if (it->second.trainable != jt->second.trainable) return false;
        if (it->second.value.shape != jt->second.value.shape) return false;
        if (std::memcmp(it->second.value.data.data(), jt->second.value.data.data(),
                        it->second.value.data.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

void grad_accumulate(GradMap& into, const GradMap& from, double coeff) {
    for (const auto& [name, g] : from) {
        auto it = into.find(name);
        if (it == into.end()) {
            Tensor t = Tensor::zeros(g.shape);
            for (std::size_t i = 0; i < g.data.size(); ++i) t.data[i] = coeff * g.data[i];
            into.emplace(name, std::move(t));
        } else {
            if (it->second.shape != g.shape) throw std::invalid_argument("grad_accumulate: shape mismatch " + name);
            for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += coeff * g.data[i];
        }
    }
}

}  // namespace reinpp
