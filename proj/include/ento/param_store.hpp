#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ento/error.hpp"
#include "ento/rng.hpp"
#include "ento/tensor.hpp"

namespace ento {

/// How a parameter is initialised. `FanInUniform` draws U(-1/sqrt(fan_in),
/// 1/sqrt(fan_in)) from a generator seeded by (store seed, name).
struct InitSpec {
    enum class Kind { FanInUniform, Constant };
    Kind kind = Kind::Constant;
    double value = 0.0;
    std::size_t fan_in = 1;

    static InitSpec fan_in_uniform(std::size_t fan_in) { return {Kind::FanInUniform, 0.0, fan_in}; }
    static InitSpec constant(double v) { return {Kind::Constant, v, 1}; }
};

template <class T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
        InitSpec init;
    };

    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Registers and initialises a new parameter. Names must be unique.
    Tensor<T>& add(std::string name, Shape shape, InitSpec init) {
        if (index_.count(name) != 0) throw InvalidArgument("duplicate parameter name: " + name);
        Entry e{name, Tensor<T>(shape), Tensor<T>(shape), init};
        initialise(e);
        index_.emplace(name, entries_.size());
        entries_.push_back(std::move(e));
        return entries_.back().value;
    }

    bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

    std::size_t index_of(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw InvalidArgument("unknown parameter: " + std::string(name));
        return it->second;
    }

    Entry& entry(std::size_t i) { return entries_.at(i); }
    const Entry& entry(std::size_t i) const { return entries_.at(i); }
    Entry& entry(std::string_view name) { return entries_[index_of(name)]; }
    const Entry& entry(std::string_view name) const { return entries_[index_of(name)]; }

    Tensor<T>& value(std::string_view name) { return entry(name).value; }
    const Tensor<T>& value(std::string_view name) const { return entry(name).value; }
    Tensor<T>& grad(std::string_view name) { return entry(name).grad; }
    const Tensor<T>& grad(std::string_view name) const { return entry(name).grad; }

    /// Registration order.
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    void zero_grad() {
        for (auto& e : entries_) e.grad.fill(T(0));
    }

    /// Element count over entries accepted by `filter`.
    std::size_t element_count(const std::function<bool(const std::string&)>& filter = {}) const {
        std::size_t total = 0;
        for (const auto& e : entries_) {
            if (!filter || filter(e.name)) total += e.value.numel();
        }
        return total;
    }

    /// Re-runs every initialiser with the store seed.
    void reinitialise() {
        for (auto& e : entries_) initialise(e);
    }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out(seed_);
        for (const auto& e : entries_) {
            out.add(e.name, e.value.shape(), e.init) = e.value.template cast<U>();
        }
        return out;
    }

    /// Copies values (not gradients) from a store with identical names and shapes.
    template <class U>
    void assign_from(const ParamStore<U>& other) {
        for (auto& e : entries_) {
            const auto& src = other.entry(e.name);
            require_same_shape(e.value.shape(), src.value.shape(), "ParamStore::assign_from");
            e.value = src.value.template cast<T>();
        }
    }

private:
    void initialise(Entry& e) const {
        if (e.init.kind == InitSpec::Kind::Constant) {
            e.value.fill(static_cast<T>(e.init.value));
            return;
        }
        Rng rng(mix_seed(seed_, fnv1a(e.name)));
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.init.fan_in));
        for (auto& v : e.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    }

    std::uint64_t seed_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace ento
