#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hglm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node;

// One recorded primitive application. `apply` reads the output node's grad and
// accumulates into the grads of `inputs`.
struct GradFn {
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node& out)> apply;
};

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass touches the node
    bool requires_grad = false;
    std::shared_ptr<GradFn> grad_fn;  // null for leaves and for untracked results

    void ensure_grad();
};

}  // namespace detail

// Dense row-major fp64 tensor with optional reverse-mode gradient tracking.
//
// A Tensor is a cheap handle; copies share storage. Use `clone()` for a deep
// copy. Results of primitives on tensors that require grad are recorded and
// `backward()` on a scalar walks the record in reverse topological order.
class Tensor {
public:
    Tensor();

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;
    bool defined() const { return static_cast<bool>(node_); }

    std::span<const double> data() const;
    // Mutable access is for leaves only (initialization, optimizer updates).
    std::span<double> mutable_data();

    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Populates grads on every requires_grad leaf reachable from this scalar.
    // Grads accumulate additively; the recorded graph is released afterwards.
    void backward() const;

    Tensor clone() const;    // deep copy of data (and requires_grad), no history
    Tensor detach() const;   // shares nothing, no history, requires_grad=false

    // Internal: used by primitives.
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Disables recording for the lifetime of the guard (evaluation passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_mode_enabled();

}  // namespace hglm
