#pragma once

// Random small problems for every differentiable op kind, shared by the unit and
// acceptance suites. Each case draws fresh shapes from the trial index.

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "voxgan/params.hpp"

namespace voxgan::testing {

struct OpCase {
    GraphFn fn;
    std::vector<Tensor> inputs;
};

struct OpKind {
    std::string name;
    std::function<OpCase(Prng&)> make;
};

inline std::size_t ext(Prng& p, std::size_t lo, std::size_t hi) { return lo + p.below(hi - lo + 1); }

inline std::vector<OpKind> all_op_kinds() {
    std::vector<OpKind> kinds;
    auto binary_bcast = [](Prng& p) {
        const Shape a{ext(p, 1, 3), ext(p, 1, 4), ext(p, 1, 4)};
        Shape b(a.begin() + static_cast<std::ptrdiff_t>(p.below(3)), a.end());
        if (!b.empty() && p.uniform() < 0.5) b[0] = 1;
        return std::pair{a, b};
    };
    kinds.push_back({"add", [=](Prng& p) {
                         auto [a, b] = binary_bcast(p);
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::add(t, x[0], x[1]); },
                                       {random_tensor(p, a), random_tensor(p, b)}};
                     }});
    kinds.push_back({"sub", [=](Prng& p) {
                         auto [a, b] = binary_bcast(p);
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::sub(t, x[1], x[0]); },
                                       {random_tensor(p, a), random_tensor(p, b)}};
                     }});
    kinds.push_back({"mul", [=](Prng& p) {
                         auto [a, b] = binary_bcast(p);
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::mul(t, x[0], x[1]); },
                                       {random_tensor(p, a), random_tensor(p, b)}};
                     }});
    kinds.push_back({"div", [=](Prng& p) {
                         auto [a, b] = binary_bcast(p);
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::div(t, x[0], x[1]); },
                                       {random_tensor(p, a), random_tensor(p, b, 0.5, 2.0)}};
                     }});
    kinds.push_back({"scale", [](Prng& p) {
                         const double s = p.uniform(-2, 2);
                         return OpCase{[s](Tape& t, const std::vector<Tensor>& x) { return op::scale(t, x[0], s); },
                                       {random_tensor(p, {ext(p, 1, 5), ext(p, 1, 5)})}};
                     }});
    kinds.push_back({"matmul", [](Prng& p) {
                         const std::size_t m = ext(p, 1, 4), k = ext(p, 1, 4), n = ext(p, 1, 4);
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::matmul(t, x[0], x[1]); },
                                       {random_tensor(p, {m, k}), random_tensor(p, {k, n})}};
                     }});
    kinds.push_back({"linear", [](Prng& p) {
                         const std::size_t n = ext(p, 1, 4), in = ext(p, 1, 5), out = ext(p, 1, 4);
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::linear(t, x[0], x[1], x[2]); },
                                       {random_tensor(p, {n, in}), random_tensor(p, {out, in}), random_tensor(p, {out})}};
                     }});
    kinds.push_back({"reshape", [](Prng& p) {
                         const std::size_t a = ext(p, 1, 4), b = ext(p, 1, 4), c = ext(p, 1, 3);
                         return OpCase{[=](Tape& t, const std::vector<Tensor>& x) {
                                           return op::mul(t, op::reshape(t, x[0], {c, a * b}), op::reshape(t, x[0], {c, a * b}));
                                       },
                                       {random_tensor(p, {a, b, c})}};
                     }});
    kinds.push_back({"permute", [](Prng& p) {
                         const Shape s{ext(p, 1, 3), ext(p, 1, 4), ext(p, 1, 3)};
                         std::vector<std::size_t> perm{0, 1, 2};
                         for (std::size_t i = 3; i > 1; --i) std::swap(perm[i - 1], perm[p.below(i)]);
                         return OpCase{[perm](Tape& t, const std::vector<Tensor>& x) { return op::permute(t, x[0], perm); },
                                       {random_tensor(p, s)}};
                     }});
    kinds.push_back({"broadcast_to", [](Prng& p) {
                         const std::size_t a = ext(p, 1, 3), b = ext(p, 1, 4), c = ext(p, 2, 3);
                         return OpCase{[=](Tape& t, const std::vector<Tensor>& x) { return op::broadcast_to(t, x[0], {c, a, b}); },
                                       {random_tensor(p, {1, a, b})}};
                     }});
    kinds.push_back({"concat", [](Prng& p) {
                         const std::size_t axis = p.below(3);
                         Shape s1{ext(p, 1, 3), ext(p, 1, 3), ext(p, 1, 3)}, s2 = s1;
                         s2[axis] = ext(p, 1, 3);
                         return OpCase{[axis](Tape& t, const std::vector<Tensor>& x) {
                                           return op::concat(t, {x[0], op::scale(t, x[1], 2.0)}, axis);
                                       },
                                       {random_tensor(p, s1), random_tensor(p, s2)}};
                     }});
    kinds.push_back({"slice", [](Prng& p) {
                         const Shape s{ext(p, 1, 3), ext(p, 2, 5), ext(p, 1, 3)};
                         const std::size_t start = p.below(s[1] - 1), len = 1 + p.below(s[1] - start);
                         return OpCase{[=](Tape& t, const std::vector<Tensor>& x) { return op::slice(t, x[0], 1, start, len); },
                                       {random_tensor(p, s)}};
                     }});
    kinds.push_back({"relu", [](Prng& p) {
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::relu(t, x[0]); },
                                       {random_signed_away(p, {ext(p, 1, 4), ext(p, 1, 6)})}};
                     }});
    kinds.push_back({"leaky_relu", [](Prng& p) {
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::leaky_relu(t, x[0], 0.2); },
                                       {random_signed_away(p, {ext(p, 1, 4), ext(p, 1, 6)})}};
                     }});
    kinds.push_back({"tanh", [](Prng& p) {
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::tanh(t, x[0]); },
                                       {random_tensor(p, {ext(p, 1, 4), ext(p, 1, 6)}, -2, 2)}};
                     }});
    kinds.push_back({"sigmoid", [](Prng& p) {
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::sigmoid(t, x[0]); },
                                       {random_tensor(p, {ext(p, 1, 4), ext(p, 1, 6)}, -3, 3)}};
                     }});
    kinds.push_back({"mean", [](Prng& p) {
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::mean(t, op::mul(t, x[0], x[0])); },
                                       {random_tensor(p, {ext(p, 1, 4), ext(p, 1, 5)})}};
                     }});
    kinds.push_back({"sum", [](Prng& p) {
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::sum(t, op::mul(t, x[0], x[0])); },
                                       {random_tensor(p, {ext(p, 1, 4), ext(p, 1, 5)})}};
                     }});
    kinds.push_back({"global_avg_pool", [](Prng& p) {
                         return OpCase{[](Tape& t, const std::vector<Tensor>& x) { return op::global_avg_pool(t, x[0]); },
                                       {random_tensor(p, {ext(p, 1, 3), ext(p, 1, 3), ext(p, 1, 4), ext(p, 1, 4)})}};
                     }});
    kinds.push_back({"instance_norm", [](Prng& p) {
                         const std::size_t c = ext(p, 1, 3);
                         return OpCase{[c](Tape& t, const std::vector<Tensor>& x) { return op::instance_norm(t, x[0], c, 1e-5); },
                                       {random_tensor(p, {ext(p, 1, 2), c, ext(p, 2, 4), ext(p, 2, 4)})}};
                     }});
    auto conv_case = [](std::size_t spatial, bool transposed) {
        return [=](Prng& p) {
            const std::size_t n = ext(p, 1, 2), cin = ext(p, 1, 3), cout = ext(p, 1, 3);
            const std::size_t stride = ext(p, 1, 2), k = ext(p, 1, 3), pad = p.below(std::min<std::size_t>(k, 2));
            Shape xs{n, cin}, ws{transposed ? cin : cout, transposed ? cout : cin};
            for (std::size_t d = 0; d < spatial; ++d) {
                xs.push_back(ext(p, std::max<std::size_t>(k, 2), spatial == 3 ? 4 : 5));
                ws.push_back(k);
            }
            GraphFn fn = [=](Tape& t, const std::vector<Tensor>& x) {
                const op::ConvOptions o{stride, pad};
                if (transposed) {
                    if (spatial == 1) return op::conv_transpose1d(t, x[0], x[1], &x[2], o);
                    if (spatial == 2) return op::conv_transpose2d(t, x[0], x[1], &x[2], o);
                    return op::conv_transpose3d(t, x[0], x[1], &x[2], o);
                }
                if (spatial == 1) return op::conv1d(t, x[0], x[1], &x[2], o);
                if (spatial == 2) return op::conv2d(t, x[0], x[1], &x[2], o);
                return op::conv3d(t, x[0], x[1], &x[2], o);
            };
            return OpCase{fn, {random_tensor(p, xs), random_tensor(p, ws), random_tensor(p, {cout})}};
        };
    };
    kinds.push_back({"conv1d", conv_case(1, false)});
    kinds.push_back({"conv2d", conv_case(2, false)});
    kinds.push_back({"conv3d", conv_case(3, false)});
    kinds.push_back({"conv_transpose1d", conv_case(1, true)});
    kinds.push_back({"conv_transpose2d", conv_case(2, true)});
    kinds.push_back({"conv_transpose3d", conv_case(3, true)});
    return kinds;
}

/// Worst relative error over `trials` random shapes of one op kind.
inline double worst_gradcheck(const OpKind& kind, std::size_t trials, std::uint64_t seed) {
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        Prng p(derive_seed(seed, fnv1a(kind.name), trial));
        OpCase c = kind.make(p);
        worst = std::max(worst, gradcheck(c.fn, c.inputs, trial + 11).max_rel_err);
    }
    return worst;
}

}  // namespace voxgan::testing
