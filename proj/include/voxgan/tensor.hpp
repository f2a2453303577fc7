#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "voxgan/prng.hpp"

namespace voxgan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Raised whenever operand extents disagree; the message names the op and both shapes.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string& op, const Shape& expected, const Shape& actual)
        : std::invalid_argument("shape mismatch in " + op + ": expected " + shape_str(expected) +
                                ", got " + shape_str(actual)) {}
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

class AutodiffError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class Tape;

/// Dense row-major array of doubles (last axis fastest). Copies share storage until written.
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(values))) {
        if (shape_.size() > 5) throw ShapeError("tensor rank " + std::to_string(shape_.size()) + " exceeds 5");
        if (shape_numel(shape_) != data_->size())
            throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor full(Shape shape, double v) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }
    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return Tensor({}, {v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_->size(); }

    std::span<const double> data() const { return *data_; }
    std::span<double> mutable_data() {
        detach();
        return *data_;
    }
    double operator[](std::size_t i) const { return (*data_)[i]; }
    double item() const {
        if (numel() != 1) throw ShapeError("item", {}, shape_);
        return (*data_)[0];
    }

    bool requires_grad() const { return node_.has_value(); }
    std::optional<std::size_t> node_id() const { return node_; }

    /// Same values, detached from any tape.
    Tensor detached() const {
        Tensor t = *this;
        t.node_.reset();
        return t;
    }

    /// Storage identity, used by tests to confirm sharing.
    const void* storage() const { return data_.get(); }

private:
    friend class Tape;

    void detach() {
        if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
    }

    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::optional<std::size_t> node_;
};

/// Vector-Jacobian product: given the upstream gradient and which inputs need one,
/// returns one gradient per input (entries for inputs that were not requested are ignored).
using VjpFn = std::function<std::vector<Tensor>(const Tensor& upstream, const std::vector<bool>& need)>;

/// Gradients produced by one backward pass, indexed by tape node.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::vector<std::optional<Tensor>> by_node, std::vector<Shape> shapes)
        : by_node_(std::move(by_node)), shapes_(std::move(shapes)) {}

    bool has(const Tensor& leaf) const {
        const auto id = leaf.node_id();
        return id && *id < by_node_.size() && by_node_[*id].has_value();
    }

    /// Gradient for a watched tensor; zeros when the root does not depend on it.
    Tensor of(const Tensor& leaf) const {
        const auto id = leaf.node_id();
        if (!id || *id >= by_node_.size()) throw AutodiffError("tensor is not recorded on this tape");
        if (by_node_[*id]) return *by_node_[*id];
        return Tensor::zeros(shapes_[*id]);
    }

    std::size_t size() const { return by_node_.size(); }

private:
    std::vector<std::optional<Tensor>> by_node_;
    std::vector<Shape> shapes_;
};

/// Records differentiable operations in topological order. Single owner; not shared.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Registers a leaf that gradients should flow to.
    Tensor watch(Tensor t) {
        check_open();
        t.node_ = nodes_.size();
        nodes_.push_back(Node{{}, nullptr, t.shape()});
        return t;
    }

    /// Records `out` as produced from `inputs` when any input is on this tape.
    Tensor record(Tensor out, const std::vector<const Tensor*>& inputs, VjpFn vjp) {
        std::vector<std::optional<std::size_t>> ids;
        ids.reserve(inputs.size());
        bool any = false;
        for (const Tensor* in : inputs) {
            ids.push_back(in->node_);
            any = any || in->node_.has_value();
        }
        out.node_.reset();
        if (!any) return out;
        check_open();
        for (const auto& id : ids)
            if (id && *id >= nodes_.size()) throw AutodiffError("input recorded on a different tape");
        out.node_ = nodes_.size();
        nodes_.push_back(Node{std::move(ids), std::move(vjp), out.shape()});
        return out;
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Reverse sweep from a scalar root. Each node is visited once; fan-out gradients add.
    Gradients backward(const Tensor& root) {
        if (consumed_) throw AutodiffError("tape already consumed");
        if (root.numel() != 1) throw AutodiffError("backward root must be scalar, got shape " + shape_str(root.shape()));
        if (!root.node_ || *root.node_ >= nodes_.size())
            throw AutodiffError("backward root does not depend on any watched tensor");
        consumed_ = true;

        std::vector<std::optional<Tensor>> grads(nodes_.size());
        grads[*root.node_] = Tensor::full(root.shape(), 1.0);
        for (std::size_t k = *root.node_ + 1; k-- > 0;) {
            Node& node = nodes_[k];
            if (!node.vjp || !grads[k]) continue;
            std::vector<bool> need(node.inputs.size());
            for (std::size_t i = 0; i < need.size(); ++i) need[i] = node.inputs[i].has_value();
            std::vector<Tensor> g_in = node.vjp(*grads[k], need);
            for (std::size_t i = 0; i < node.inputs.size(); ++i) {
                if (!node.inputs[i]) continue;
                const std::size_t id = *node.inputs[i];
                if (g_in[i].shape() != nodes_[id].shape)
                    throw ShapeError("backward of node " + std::to_string(k), nodes_[id].shape, g_in[i].shape());
                if (!grads[id]) {
                    grads[id] = std::move(g_in[i]).detached();
                } else {
                    auto dst = grads[id]->mutable_data();
                    auto src = g_in[i].data();
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                }
            }
            node.vjp = nullptr;  // release saved activations
        }
        std::vector<Shape> shapes;
        shapes.reserve(nodes_.size());
        for (const auto& n : nodes_) shapes.push_back(n.shape);
        return Gradients(std::move(grads), std::move(shapes));
    }

private:
    struct Node {
        std::vector<std::optional<std::size_t>> inputs;
        VjpFn vjp;
        Shape shape;
    };

    void check_open() const {
        if (consumed_) throw AutodiffError("tape already consumed");
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

/// i.i.d. standard normal draws (Box-Muller pairs, cosine then sine) from the stream.
inline Tensor sample_normal(Prng& prng, const Shape& shape) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; i += 2) {
        const auto [c, s] = prng.normal_pair();
        v[i] = c;
        if (i + 1 < n) v[i + 1] = s;
    }
    return Tensor(shape, std::move(v));
}

}  // namespace voxgan
