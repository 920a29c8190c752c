#include "hglm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "hglm/error.hpp"

namespace hglm::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using NodePtr = std::shared_ptr<detail::Node>;

MutMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool wants_grad(const NodePtr& n) { return n->requires_grad; }

// Builds the result node and records `backward` when any input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> inputs,
                   std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    const bool track =
        grad_mode_enabled() && std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
    if (track) {
        node->requires_grad = true;
        node->grad_fn = std::make_shared<detail::GradFn>(detail::GradFn{std::move(inputs), std::move(backward)});
    }
    return Tensor(std::move(node));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                              shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                              shape_to_string(b.shape()));
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ValidationError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) + " . " +
                              shape_to_string(b.shape()));
    }
    std::vector<double> out(m * n);
    as_matrix(out, m, n).noalias() = as_matrix(a.node()->data, m, k) * as_matrix(b.node()->data, k, n);
    NodePtr an = a.node(), bn = b.node();
    return make_result({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::Node& o) {
        auto g = as_matrix(o.grad, m, n);
        if (wants_grad(an)) {
            an->ensure_grad();
            as_matrix(an->grad, m, k).noalias() += g * as_matrix(bn->data, k, n).transpose();
        }
        if (wants_grad(bn)) {
            bn->ensure_grad();
            as_matrix(bn->grad, k, n).noalias() += as_matrix(an->data, m, k).transpose() * g;
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const std::size_t m = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in) {
        throw ValidationError("linear: input " + shape_to_string(x.shape()) + " does not fit weight " +
                              shape_to_string(w.shape()));
    }
    std::vector<double> out(m * out_dim);
    as_matrix(out, m, out_dim).noalias() =
        as_matrix(x.node()->data, m, in) * as_matrix(w.node()->data, out_dim, in).transpose();
    NodePtr xn = x.node(), wn = w.node();
    return make_result({m, out_dim}, std::move(out), {xn, wn}, [xn, wn, m, in, out_dim](detail::Node& o) {
        auto g = as_matrix(o.grad, m, out_dim);
        if (wants_grad(xn)) {
            xn->ensure_grad();
            as_matrix(xn->grad, m, in).noalias() += g * as_matrix(wn->data, out_dim, in);
        }
        if (wants_grad(wn)) {
            wn->ensure_grad();
            as_matrix(wn->grad, out_dim, in).noalias() += g.transpose() * as_matrix(xn->data, m, in);
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    as_matrix(out, n, m) = as_matrix(a.node()->data, m, n).transpose();
    NodePtr an = a.node();
    return make_result({n, m}, std::move(out), {an}, [an, m, n](detail::Node& o) {
        an->ensure_grad();
        as_matrix(an->grad, m, n) += as_matrix(o.grad, n, m).transpose();
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto& ad = a.node()->data;
    const auto& bd = b.node()->data;
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& o) {
        for (const NodePtr& in : {an, bn}) {
            if (!wants_grad(in)) continue;
            in->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) in->grad[i] += o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto& ad = a.node()->data;
    const auto& bd = b.node()->data;
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& o) {
        if (wants_grad(an)) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
        }
        if (wants_grad(bn)) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    const auto& ad = a.node()->data;
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
    NodePtr an = a.node();
    return make_result(a.shape(), std::move(out), {an}, [an, s](detail::Node& o) {
        an->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * s;
    });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    NodePtr an = a.node();
    return make_result({1}, {total}, {an}, [an](detail::Node& o) {
        an->ensure_grad();
        const double g = o.grad[0];
        for (double& v : an->grad) v += g;
    });
}

Tensor silu(const Tensor& x) {
    const auto& xd = x.node()->data;
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * sigmoid(xd[i]);
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {xn}, [xn](detail::Node& o) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double s = sigmoid(xn->data[i]);
            xn->grad[i] += o.grad[i] * (s + xn->data[i] * s * (1.0 - s));
        }
    });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps) {
    require_rank(gamma, 1, "rmsnorm");
    if (x.rank() == 0 || x.shape().back() != gamma.dim(0)) {
        throw ValidationError("rmsnorm: last dimension of " + shape_to_string(x.shape()) + " does not match gamma " +
                              shape_to_string(gamma.shape()));
    }
    if (!(eps >= 0.0)) throw ValidationError("rmsnorm: eps must be non-negative");
    const std::size_t d = gamma.dim(0);
    const std::size_t rows = x.numel() / d;
    const auto& xd = x.node()->data;
    const auto& gd = gamma.node()->data;
    std::vector<double> out(xd.size());
    std::vector<double> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * d;
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += row[j] * row[j];
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
        inv_rms[r] = inv;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = row[j] * inv * gd[j];
    }
    NodePtr xn = x.node(), gn = gamma.node();
    return make_result(x.shape(), std::move(out), {xn, gn},
                       [xn, gn, d, rows, inv_rms = std::move(inv_rms)](detail::Node& o) {
                           if (wants_grad(xn)) xn->ensure_grad();
                           if (wants_grad(gn)) gn->ensure_grad();
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* row = xn->data.data() + r * d;
                               const double* g = o.grad.data() + r * d;
                               const double inv = inv_rms[r];
                               if (wants_grad(gn)) {
                                   for (std::size_t j = 0; j < d; ++j) gn->grad[j] += g[j] * row[j] * inv;
                               }
                               if (wants_grad(xn)) {
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) dot += g[j] * gn->data[j] * row[j];
                                   const double coeff = inv * inv * inv * dot / static_cast<double>(d);
                                   double* dx = xn->grad.data() + r * d;
                                   for (std::size_t j = 0; j < d; ++j) dx[j] += inv * g[j] * gn->data[j] - coeff * row[j];
                               }
                           }
                       });
}

Tensor softmax(const Tensor& x, int axis) {
    const int rank = static_cast<int>(x.rank());
    const int ax = axis < 0 ? axis + rank : axis;
    if (ax < 0 || ax >= rank) {
        throw ValidationError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_to_string(x.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= x.shape()[i];
    for (int i = ax + 1; i < rank; ++i) inner *= x.shape()[i];
    const std::size_t n = x.shape()[ax];
    const auto& xd = x.node()->data;
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = xd[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(xd[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
        }
    }
    NodePtr xn = x.node();
    auto y = out;
    return make_result(x.shape(), std::move(out), {xn}, [xn, y = std::move(y), outer, inner, n](detail::Node& o) {
        xn->ensure_grad();
        for (std::size_t ob = 0; ob < outer; ++ob) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = ob * n * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += o.grad[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t idx = base + j * inner;
                    xn->grad[idx] += y[idx] * (o.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require_rank(table, 2, "embedding");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw ValidationError("embedding: empty id list");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw ValidationError("token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                                  " is outside vocabulary of size " + std::to_string(vocab));
        }
    }
    const auto& td = table.node()->data;
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    NodePtr tn = table.node();
    std::vector<int> saved(ids.begin(), ids.end());
    return make_result({ids.size(), d}, std::move(out), {tn}, [tn, d, saved = std::move(saved)](detail::Node& o) {
        tn->ensure_grad();
        for (std::size_t i = 0; i < saved.size(); ++i) {
            double* dst = tn->grad.data() + static_cast<std::size_t>(saved[i]) * d;
            const double* src = o.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Tensor rope(const Tensor& x, std::span<const std::size_t> positions, std::size_t head_dim, double theta) {
    require_rank(x, 2, "rope");
    const std::size_t rows = x.dim(0), width = x.dim(1);
    if (head_dim == 0 || head_dim % 2 != 0) throw ValidationError("rope: head_dim must be even and positive");
    if (width % head_dim != 0) {
        throw ValidationError("rope: width " + std::to_string(width) + " is not a multiple of head_dim " +
                              std::to_string(head_dim));
    }
    if (positions.size() != rows) {
        throw ValidationError("rope: " + std::to_string(positions.size()) + " positions for " + std::to_string(rows) +
                              " rows");
    }
    const std::size_t half = head_dim / 2;
    std::vector<double> inv_freq(half);
    for (std::size_t i = 0; i < half; ++i) {
        inv_freq[i] = std::pow(theta, -static_cast<double>(2 * i) / static_cast<double>(head_dim));
    }
    // cos/sin table per (row, pair)
    std::vector<double> cos_t(rows * half), sin_t(rows * half);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double angle = static_cast<double>(positions[r]) * inv_freq[i];
            cos_t[r * half + i] = std::cos(angle);
            sin_t[r * half + i] = std::sin(angle);
        }
    }
    const auto& xd = x.node()->data;
    std::vector<double> out(xd.size());
    const std::size_t heads = width / head_dim;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t base = r * width + h * head_dim;
            for (std::size_t i = 0; i < half; ++i) {
                const double c = cos_t[r * half + i], s = sin_t[r * half + i];
                const double a = xd[base + 2 * i], b = xd[base + 2 * i + 1];
                out[base + 2 * i] = a * c - b * s;
                out[base + 2 * i + 1] = a * s + b * c;
            }
        }
    }
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), {xn},
                       [xn, rows, width, heads, head_dim, half, cos_t = std::move(cos_t),
                        sin_t = std::move(sin_t)](detail::Node& o) {
                           xn->ensure_grad();
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t h = 0; h < heads; ++h) {
                                   const std::size_t base = r * width + h * head_dim;
                                   for (std::size_t i = 0; i < half; ++i) {
                                       const double c = cos_t[r * half + i], s = sin_t[r * half + i];
                                       const double ga = o.grad[base + 2 * i], gb = o.grad[base + 2 * i + 1];
                                       xn->grad[base + 2 * i] += ga * c + gb * s;
                                       xn->grad[base + 2 * i + 1] += -ga * s + gb * c;
                                   }
                               }
                           }
                       });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len, std::size_t n_heads) {
    require_rank(q, 2, "causal_attention");
    require_same_shape(q, k, "causal_attention");
    require_same_shape(q, v, "causal_attention");
    const std::size_t rows = q.dim(0), width = q.dim(1);
    if (seq_len == 0 || rows % seq_len != 0) {
        throw ValidationError("causal_attention: " + std::to_string(rows) + " rows is not a multiple of seq_len " +
                              std::to_string(seq_len));
    }
    if (n_heads == 0 || width % n_heads != 0) {
        throw ValidationError("causal_attention: width " + std::to_string(width) + " not divisible by " +
                              std::to_string(n_heads) + " heads");
    }
    const std::size_t batch = rows / seq_len, hd = width / n_heads, T = seq_len;
    const double scl = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto& qd = q.node()->data;
    const auto& kd = k.node()->data;
    const auto& vd = v.node()->data;
    std::vector<double> out(rows * width, 0.0);
    // probs[((b*H + h)*T + t)*T + j], zero above the diagonal
    std::vector<double> probs(batch * n_heads * T * T, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            double* P = probs.data() + (b * n_heads + h) * T * T;
            for (std::size_t t = 0; t < T; ++t) {
                const double* qt = qd.data() + (b * T + t) * width + h * hd;
                double* pt = P + t * T;
                double mx = 0.0;
                for (std::size_t j = 0; j <= t; ++j) {
                    const double* kj = kd.data() + (b * T + j) * width + h * hd;
                    double s = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) s += qt[c] * kj[c];
                    s *= scl;
                    pt[j] = s;
                    mx = (j == 0) ? s : std::max(mx, s);
                }
                double z = 0.0;
                for (std::size_t j = 0; j <= t; ++j) {
                    pt[j] = std::exp(pt[j] - mx);
                    z += pt[j];
                }
                double* ot = out.data() + (b * T + t) * width + h * hd;
                for (std::size_t j = 0; j <= t; ++j) {
                    pt[j] /= z;
                    const double* vj = vd.data() + (b * T + j) * width + h * hd;
                    for (std::size_t c = 0; c < hd; ++c) ot[c] += pt[j] * vj[c];
                }
            }
        }
    }
    NodePtr qn = q.node(), kn = k.node(), vn = v.node();
    return make_result(
        q.shape(), std::move(out), {qn, kn, vn},
        [qn, kn, vn, batch, n_heads, T, hd, width, scl, probs = std::move(probs)](detail::Node& o) {
            // Scratch grads keep the loops branch-free; only wanted ones are committed.
            std::vector<double> gq(qn->data.size(), 0.0), gk(kn->data.size(), 0.0), gv(vn->data.size(), 0.0);
            std::vector<double> dp(T);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const double* P = probs.data() + (b * n_heads + h) * T * T;
                    for (std::size_t t = 0; t < T; ++t) {
                        const std::size_t row_t = (b * T + t) * width + h * hd;
                        const double* go = o.grad.data() + row_t;
                        const double* pt = P + t * T;
                        double dot = 0.0;
                        for (std::size_t j = 0; j <= t; ++j) {
                            const std::size_t row_j = (b * T + j) * width + h * hd;
                            double s = 0.0;
                            for (std::size_t c = 0; c < hd; ++c) {
                                s += go[c] * vn->data[row_j + c];
                                gv[row_j + c] += pt[j] * go[c];
                            }
                            dp[j] = s;
                            dot += pt[j] * s;
                        }
                        for (std::size_t j = 0; j <= t; ++j) {
                            const std::size_t row_j = (b * T + j) * width + h * hd;
                            const double ds = pt[j] * (dp[j] - dot) * scl;
                            for (std::size_t c = 0; c < hd; ++c) {
                                gq[row_t + c] += ds * kn->data[row_j + c];
                                gk[row_j + c] += ds * qn->data[row_t + c];
                            }
                        }
                    }
                }
            }
            const std::pair<const NodePtr*, const std::vector<double>*> commits[] = {{&qn, &gq}, {&kn, &gk}, {&vn, &gv}};
            for (const auto& [np, g] : commits) {
                const NodePtr& in = *np;
                if (!wants_grad(in)) continue;
                in->ensure_grad();
                for (std::size_t i = 0; i < g->size(); ++i) in->grad[i] += (*g)[i];
            }
        });
}

Tensor language_model_loss(const Tensor& logits, std::span<const int> targets, double zloss_coeff, LossParts* parts) {
    require_rank(logits, 2, "language_model_loss");
    const std::size_t n = logits.dim(0), vocab = logits.dim(1);
    if (targets.size() != n) {
        throw ValidationError("language_model_loss: " + std::to_string(targets.size()) + " targets for " +
                              std::to_string(n) + " positions");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
            throw ValidationError("target id " + std::to_string(targets[i]) + " at position " + std::to_string(i) +
                                  " is outside vocabulary of size " + std::to_string(vocab));
        }
    }
    const auto& ld = logits.node()->data;
    std::vector<double> probs(ld.size());
    std::vector<double> log_z(n);
    double ce = 0.0, zz = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = ld.data() + i * vocab;
        double mx = row[0];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            const double e = std::exp(row[j] - mx);
            probs[i * vocab + j] = e;
            s += e;
        }
        for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] /= s;
        log_z[i] = mx + std::log(s);
        ce += log_z[i] - row[targets[i]];
        zz += log_z[i] * log_z[i];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    ce *= inv_n;
    zz *= inv_n;
    if (parts) {
        parts->cross_entropy = ce;
        parts->z_term = zz;
    }
    NodePtr ln = logits.node();
    std::vector<int> saved(targets.begin(), targets.end());
    return make_result({1}, {ce + zloss_coeff * zz}, {ln},
                       [ln, n, vocab, inv_n, zloss_coeff, probs = std::move(probs), log_z = std::move(log_z),
                        saved = std::move(saved)](detail::Node& o) {
                           ln->ensure_grad();
                           const double g = o.grad[0];
                           for (std::size_t i = 0; i < n; ++i) {
                               const double zc = 2.0 * zloss_coeff * log_z[i];
                               double* dst = ln->grad.data() + i * vocab;
                               const double* p = probs.data() + i * vocab;
                               for (std::size_t j = 0; j < vocab; ++j) dst[j] += g * inv_n * p[j] * (1.0 + zc);
                               dst[saved[i]] -= g * inv_n;
                           }
                       });
}

}  // namespace hglm::ops
