#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "melreport/errors.hpp"
#include "melreport/tensor.hpp"

namespace melreport {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T{0}); }
};

// Named parameter registry. Insertion order is preserved and addresses are
// stable, so graph leaves and optimizer state may hold raw pointers.
template <class T>
class ParamStore {
public:
    using value_type = T;

    ParamStore() = default;
    ParamStore(const ParamStore& other) { copy_from(other); }
    ParamStore& operator=(const ParamStore& other)
    {
        if (this != &other) {
            params_.clear();
            index_.clear();
            copy_from(other);
        }
        return *this;
    }
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true)
    {
        if (index_.contains(name)) throw ContractError("parameter '" + name + "' already registered");
        auto p = std::make_unique<Parameter<T>>();
        p->name = name;
        p->grad = Tensor<T>(value.rows, value.cols);
        p->value = std::move(value);
        p->trainable = trainable;
        index_.emplace(name, params_.size());
        params_.push_back(std::move(p));
        return *params_.back();
    }

    [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }

    Parameter<T>& get(const std::string& name)
    {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return *params_[it->second];
    }
    const Parameter<T>& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }

    Parameter<T>* find(const std::string& name)
    {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : params_[it->second].get();
    }

    void remove(const std::string& name)
    {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        params_.erase(params_.begin() + static_cast<std::ptrdiff_t>(it->second));
        rebuild_index();
    }

    [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
    [[nodiscard]] std::size_t scalar_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

    template <class Fn>
    void for_each(Fn&& fn)
    {
        for (auto& p : params_) fn(*p);
    }
    template <class Fn>
    void for_each(Fn&& fn) const
    {
        for (const auto& p : params_) fn(static_cast<const Parameter<T>&>(*p));
    }

    void zero_grad()
    {
        for (auto& p : params_) p->zero_grad();
    }

    // Copy values (and trainability) from a store of another precision with
    // identical names.
    template <class U>
    [[nodiscard]] ParamStore<U> cast() const
    {
        ParamStore<U> out;
        for (const auto& p : params_) out.add(p->name, p->value.template cast<U>(), p->trainable);
        return out;
    }

private:
    void copy_from(const ParamStore& other)
    {
        for (const auto& p : other.params_) {
            auto& q = add(p->name, p->value, p->trainable);
            q.grad = p->grad;
        }
    }
    void rebuild_index()
    {
        index_.clear();
        for (std::size_t i = 0; i < params_.size(); ++i) index_.emplace(params_[i]->name, i);
    }

    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

// Initializers. All draw from the caller's generator so model construction is
// reproducible from a single seed.
template <class T>
Tensor<T> normal_tensor(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<T> t(rows, cols);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

template <class T>
Tensor<T> uniform_tensor(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> t(rows, cols);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace melreport
