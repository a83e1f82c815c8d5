#pragma once

#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mumu/mat.hpp"
#include "mumu/tape.hpp"

namespace mumu {

/// Named parameter tensors in registration order.
template <typename T>
class ParamStore {
  public:
    std::shared_ptr<Mat<T>> add(const std::string &name, Mat<T> m) {
        if (tensors_.count(name)) throw InvalidInput("param exists: " + name);
        auto p = std::make_shared<Mat<T>>(std::move(m));
        names_.push_back(name);
        tensors_[name] = p;
        return p;
    }

    bool has(const std::string &name) const { return tensors_.count(name) > 0; }

    Mat<T> &at(const std::string &name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw InvalidInput("unknown param: " + name);
        return *it->second;
    }

    const Mat<T> &at(const std::string &name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw InvalidInput("unknown param: " + name);
        return *it->second;
    }

    std::shared_ptr<const Mat<T>> handle(const std::string &name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw InvalidInput("unknown param: " + name);
        return it->second;
    }

    const std::vector<std::string> &names() const { return names_; }

    std::vector<std::string> with_prefix(const std::string &prefix) const {
        std::vector<std::string> out;
        for (const auto &n : names_)
            if (n.rfind(prefix, 0) == 0) out.push_back(n);
        return out;
    }

    size_t param_count() const {
        size_t n = 0;
        for (const auto &name : names_) n += tensors_.at(name)->size();
        return n;
    }

    size_t param_count(const std::string &prefix) const {
        size_t n = 0;
        for (const auto &name : with_prefix(prefix)) n += tensors_.at(name)->size();
        return n;
    }

  private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::shared_ptr<Mat<T>>> tensors_;
};

/// Per-forward context: a tape, the store, and the set of trainable names.
/// Leaves are cached so each parameter appears once per tape.
template <typename T>
struct TapeCtx {
    Tape<T> &tape;
    const ParamStore<T> &store;
    const std::set<std::string> *trainable; // nullptr -> everything trainable

    TapeCtx(Tape<T> &t, const ParamStore<T> &s, const std::set<std::string> *tr = nullptr)
        : tape(t), store(s), trainable(tr) {}

    typename Tape<T>::Id param(const std::string &name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        bool rg = trainable == nullptr || trainable->count(name) > 0;
        auto id = tape.leaf(store.handle(name), rg);
        cache_[name] = id;
        return id;
    }

    bool touched(const std::string &name) const { return cache_.count(name) > 0; }

    /// gradient by parameter name; zeros when the param was never touched
    Mat<T> grad(const std::string &name) const {
        auto it = cache_.find(name);
        if (it == cache_.end()) {
            const Mat<T> &m = store.at(name);
            return Mat<T>::zeros(m.rows, m.cols);
        }
        return tape.grad_of(it->second);
    }

  private:
    std::unordered_map<std::string, typename Tape<T>::Id> cache_;
};

} // namespace mumu
