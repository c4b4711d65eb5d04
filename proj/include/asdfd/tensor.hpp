#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "asdfd/common.hpp"
#include "asdfd/rng.hpp"

namespace asdfd {

template <class S>
class Tensor;

// Reverse-mode autodiff node. A Tensor is a shared handle to one of these;
// ops link outputs to their parents and attach a backward closure. Graphs are
// built per forward pass and freed when the root goes out of scope; leaf
// parameters keep their grad buffers across passes.
template <class S>
struct TensorData {
    std::vector<int> shape;
    std::vector<S> values;
    std::vector<S> grad;  // empty until first needed, then zero-initialised
    bool requires_grad = false;
    bool frozen = false;
    std::vector<Tensor<S>> parents;
    std::function<void(TensorData<S>&)> backfn;

    size_t numel() const { return values.size(); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), S(0));
    }
};

// Thread-local switch: when disabled, ops compute values only and the result
// never requires grad (used for evaluation and frozen-teacher forwards).
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData<S>>()) {}

    explicit Tensor(std::vector<int> shape) : d_(std::make_shared<TensorData<S>>()) {
        d_->shape = std::move(shape);
        d_->values.assign(checked_numel(d_->shape), S(0));
    }

    Tensor(std::vector<int> shape, std::vector<S> values) : d_(std::make_shared<TensorData<S>>()) {
        size_t n = checked_numel(shape);
        if (values.size() != n) throw shape_error("tensor: value count does not match shape");
        d_->shape = std::move(shape);
        d_->values = std::move(values);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, S value) {
        Tensor t(std::move(shape));
        for (auto& v : t.d_->values) v = value;
        return t;
    }

    static Tensor scalar(S value) { return Tensor({}, {value}); }

    static Tensor randn(std::vector<int> shape, Rng& rng, double mu = 0.0, double sigma = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.d_->values) v = static_cast<S>(rng.normal(mu, sigma));
        return t;
    }

    // A Tensor is a shared handle: const-ness of the handle does not protect
    // the underlying storage, mirroring the usual tensor-library semantics.
    const std::vector<int>& shape() const { return d_->shape; }
    size_t numel() const { return d_->values.size(); }
    int dim(int i) const { return d_->shape.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(d_->shape.size()); }

    std::vector<S>& values() const { return d_->values; }
    S* data() const { return d_->values.data(); }

    std::vector<S>& grad() const {
        d_->ensure_grad();
        return d_->grad;
    }
    const std::vector<S>& grad_view() const { return d_->grad; }
    bool has_grad() const { return d_->grad.size() == d_->values.size(); }

    bool requires_grad() const { return d_->requires_grad; }
    const Tensor& set_requires_grad(bool v) const {
        d_->requires_grad = v;
        return *this;
    }

    bool frozen() const { return d_->frozen; }
    const Tensor& set_frozen(bool v) const {
        d_->frozen = v;
        return *this;
    }

    void zero_grad() const {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), S(0));
    }

    S item() const {
        if (numel() != 1) throw shape_error("item: tensor is not scalar");
        return d_->values[0];
    }

    // Detached copy: same values, fresh storage, no graph history.
    Tensor clone_detached() const {
        Tensor t;
        t.d_->shape = d_->shape;
        t.d_->values = d_->values;
        return t;
    }

    TensorData<S>* node() const { return d_.get(); }

    // Ops use this to register the output in the graph. No-op when grad mode
    // is off or no parent participates.
    void attach(std::vector<Tensor<S>> parents, std::function<void(TensorData<S>&)> backfn) const {
        if (!grad_mode_flag()) return;
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (!any) return;
        d_->requires_grad = true;
        d_->parents = std::move(parents);
        d_->backfn = std::move(backfn);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < d_->shape.size(); ++i) os << (i ? "," : "") << d_->shape[i];
        os << ")";
        return os.str();
    }

private:
    static size_t checked_numel(const std::vector<int>& shape) {
        size_t n = 1;
        for (int s : shape) {
            if (s < 0) throw shape_error("tensor: negative dimension");
            n *= static_cast<size_t>(s);
        }
        return n;
    }

    std::shared_ptr<TensorData<S>> d_;
};

// Populates grad buffers of every requires_grad ancestor of `root` with
// d(root)/d(tensor). Repeated calls accumulate. Deterministic: traversal
// follows the recorded parent order, so a fixed graph gives a fixed
// accumulation order.
template <class S>
void backward(const Tensor<S>& root) {
    if (root.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root.requires_grad()) return;

    // Iterative post-order DFS for the topological order.
    std::vector<TensorData<S>*> topo;
    std::unordered_set<const TensorData<S>*> visited;
    struct Frame {
        TensorData<S>* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.node(), 0});
    visited.insert(root.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorData<S>* p = f.node->parents[f.next_parent++].node();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad();
    root.node()->grad[0] += S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorData<S>* n = *it;
        if (n->backfn) {
            n->ensure_grad();
            n->backfn(*n);
        }
    }
}

template <class S>
void zero_grads(std::vector<Tensor<S>>& params) {
    for (auto& p : params) p.zero_grad();
}

// Bit-exact checksum over tensor values (order-sensitive).
template <class S>
uint64_t checksum(const Tensor<S>& t, uint64_t h = 1469598103934665603ull) {
    return fnv1a(t.data(), t.numel() * sizeof(S), h);
}

template <class S>
uint64_t checksum(const std::vector<Tensor<S>>& ts) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& t : ts) h = checksum(t, h);
    return h;
}

}  // namespace asdfd
