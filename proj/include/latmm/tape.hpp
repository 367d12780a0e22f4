#pragma once

#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "latmm/tensor.hpp"

namespace latmm {

/// One named trainable tensor with its persistent gradient accumulator.
struct Param {
    Tensor value;
    Tensor grad;

    Param() = default;
    explicit Param(Tensor v) : value(std::move(v)), grad(value.shape) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0f); }
};

/// Ordered, named collection of trainable parameters.
class ParameterStore {
public:
    Param& add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        index_[name] = params_.size();
        params_.emplace_back(name, std::make_unique<Param>(std::move(init)));
        return *params_.back().second;
    }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
        return *params_[it->second].second;
    }
    const Param& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no such parameter: " + name);
        return *params_[it->second].second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    size_t size() const { return params_.size(); }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [name, p] : params_) n += p->value.size();
        return n;
    }

    void zero_grads() {
        for (auto& [name, p] : params_) p->zero_grad();
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (auto& [name, p] : params_) fn(name, *p);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (const auto& [name, p] : params_) fn(name, *p);
    }

private:
    // unique_ptr keeps Param addresses stable across add() calls; Tape holds raw pointers.
    std::vector<std::pair<std::string, std::unique_ptr<Param>>> params_;
    std::map<std::string, size_t> index_;
};

/// Reverse-mode tape. Ops append nodes in topological order; backward() walks
/// the list once in reverse, then flushes leaf gradients into bound Params.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&, int)> back;  // (tape, own node id); empty for leaves
    };

    int leaf(Tensor t, bool requires_grad = false) {
        return push(std::move(t), requires_grad, nullptr);
    }

    /// Leaf backed by a trainable parameter; backward() accumulates into p.grad.
    int leaf_param(Param& p) {
        int id = push(p.value, true, nullptr);
        bound_.push_back({&p, id});
        return id;
    }

    int push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> back) {
#ifndef NDEBUG
        value.check_finite("op");
#endif
        Node n;
        n.grad = Tensor(value.shape);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    void backward(int loss_id) {
        if (backward_done_) throw std::logic_error("backward called twice on the same tape");
        if (val(loss_id).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
        backward_done_ = true;
        grad(loss_id)[0] = 1.0f;
        for (int i = loss_id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.requires_grad && n.back) n.back(*this, i);
        }
        for (auto& [p, id] : bound_) {
            const Tensor& g = grad(id);
            for (int64_t k = 0; k < g.size(); ++k) p->grad[k] += g[k];
        }
    }

    size_t num_nodes() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::vector<std::pair<Param*, int>> bound_;
    bool backward_done_ = false;
};

}  // namespace latmm
