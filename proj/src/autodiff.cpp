#include "mul/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace mul::ad {

namespace {

void check(bool ok, const char* msg) {
    if (!ok) throw std::runtime_error(std::string("autodiff: ") + msg);
}

}  // namespace

Tensor& Graph::grad_of(Node& n) {
    if (!n.has_grad) {
        n.grad = Tensor::zeros(n.val.shape);
        n.has_grad = true;
    }
    return n.grad;
}

Var Graph::make(Tensor val) {
    nodes_.push_back(Node{std::move(val), Tensor{}, false, nullptr});
    return &nodes_.back();
}

Var Graph::param(Parameter& p) {
    Var n = make(p.value);
    if (grad_enabled_) {
        Parameter* pp = &p;
        n->back = [pp](Node& self) {
            for (int64_t i = 0; i < self.grad.numel(); ++i) pp->grad.data[i] += self.grad.data[i];
        };
    }
    return n;
}

Var Graph::constant(Tensor t) { return make(std::move(t)); }

void Graph::backward(Var loss) {
    check(grad_enabled_, "backward on a no-grad graph");
    check(loss->val.numel() == 1, "backward needs a scalar loss");
    grad_of(*loss).data[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->has_grad && it->back) it->back(*it);
    }
}

Var Graph::matmul(Var a, Var b) {
    check(a->val.ndim() == 2 && b->val.ndim() == 2, "matmul needs 2-d inputs");
    check(a->val.dim(1) == b->val.dim(0), "matmul inner dimensions differ");
    const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = a->val.row(i);
        double* orow = out.row(i);
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b->val.row(kk);
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [a, b, m, k, n](Node& self) {
            Tensor& ga = grad_of(*a);
            Tensor& gb = grad_of(*b);
            const Tensor& gy = self.grad;
            // dA = dY * B^T
            for (int i = 0; i < m; ++i) {
                const double* gyrow = gy.row(i);
                double* garow = ga.row(i);
                for (int kk = 0; kk < k; ++kk) {
                    const double* brow = b->val.row(kk);
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += gyrow[j] * brow[j];
                    garow[kk] += acc;
                }
            }
            // dB = A^T * dY
            for (int kk = 0; kk < k; ++kk) {
                double* gbrow = gb.row(kk);
                for (int i = 0; i < m; ++i) {
                    const double av = a->val.at(i, kk);
                    const double* gyrow = gy.row(i);
                    for (int j = 0; j < n; ++j) gbrow[j] += av * gyrow[j];
                }
            }
        };
    }
    return y;
}

Var Graph::matmul_nt(Var a, Var b) {
    check(a->val.ndim() == 2 && b->val.ndim() == 2, "matmul_nt needs 2-d inputs");
    check(a->val.dim(1) == b->val.dim(1), "matmul_nt inner dimensions differ");
    const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(0);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = a->val.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < n; ++j) {
            const double* brow = b->val.row(j);
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            orow[j] = acc;
        }
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [a, b, m, k, n](Node& self) {
            Tensor& ga = grad_of(*a);
            Tensor& gb = grad_of(*b);
            const Tensor& gy = self.grad;
            // dA = dY * B
            for (int i = 0; i < m; ++i) {
                const double* gyrow = gy.row(i);
                double* garow = ga.row(i);
                for (int j = 0; j < n; ++j) {
                    const double g = gyrow[j];
                    if (g == 0.0) continue;
                    const double* brow = b->val.row(j);
                    for (int kk = 0; kk < k; ++kk) garow[kk] += g * brow[kk];
                }
            }
            // dB = dY^T * A
            for (int j = 0; j < n; ++j) {
                double* gbrow = gb.row(j);
                for (int i = 0; i < m; ++i) {
                    const double g = gy.at(i, j);
                    if (g == 0.0) continue;
                    const double* arow = a->val.row(i);
                    for (int kk = 0; kk < k; ++kk) gbrow[kk] += g * arow[kk];
                }
            }
        };
    }
    return y;
}

Var Graph::add(Var a, Var b) {
    check(a->val.same_shape(b->val), "add shape mismatch");
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += b->val.data[i];
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [a, b](Node& self) {
            Tensor& ga = grad_of(*a);
            Tensor& gb = grad_of(*b);
            for (int64_t i = 0; i < self.grad.numel(); ++i) {
                ga.data[i] += self.grad.data[i];
                gb.data[i] += self.grad.data[i];
            }
        };
    }
    return y;
}

Var Graph::add_row_bias(Var a, Var bias) {
    check(a->val.ndim() == 2 && bias->val.ndim() == 1, "add_row_bias shapes");
    check(a->val.dim(1) == bias->val.dim(0), "add_row_bias dim mismatch");
    const int t = a->val.dim(0), d = a->val.dim(1);
    Tensor out = a->val;
    for (int i = 0; i < t; ++i) {
        double* row = out.row(i);
        for (int j = 0; j < d; ++j) row[j] += bias->val.data[j];
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [a, bias, t, d](Node& self) {
            Tensor& ga = grad_of(*a);
            Tensor& gb = grad_of(*bias);
            for (int i = 0; i < t; ++i) {
                const double* grow = self.grad.row(i);
                double* garow = ga.row(i);
                for (int j = 0; j < d; ++j) {
                    garow[j] += grow[j];
                    gb.data[j] += grow[j];
                }
            }
        };
    }
    return y;
}

Var Graph::scale(Var a, double s) {
    Tensor out = a->val;
    for (double& v : out.data) v *= s;
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [a, s](Node& self) {
            Tensor& ga = grad_of(*a);
            for (int64_t i = 0; i < self.grad.numel(); ++i) ga.data[i] += s * self.grad.data[i];
        };
    }
    return y;
}

Var Graph::gelu(Var a) {
    Tensor out = a->val;
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [a](Node& self) {
            Tensor& ga = grad_of(*a);
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (int64_t i = 0; i < self.grad.numel(); ++i) {
                const double x = a->val.data[i];
                const double d = 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
                                 x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
                ga.data[i] += d * self.grad.data[i];
            }
        };
    }
    return y;
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    check(x->val.ndim() == 2, "layer_norm needs 2-d input");
    const int t = x->val.dim(0), d = x->val.dim(1);
    check(gamma->val.numel() == d && beta->val.numel() == d, "layer_norm affine dims");
    Tensor out({t, d});
    Tensor xhat({t, d});
    std::vector<double> inv_sigma(t);
    for (int i = 0; i < t; ++i) {
        const double* row = x->val.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        double* xh = xhat.row(i);
        double* o = out.row(i);
        for (int j = 0; j < d; ++j) {
            xh[j] = (row[j] - mean) * is;
            o[j] = xh[j] * gamma->val.data[j] + beta->val.data[j];
        }
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [x, gamma, beta, t, d, xhat = std::move(xhat),
                   inv_sigma = std::move(inv_sigma)](Node& self) {
            Tensor& gx = grad_of(*x);
            Tensor& gg = grad_of(*gamma);
            Tensor& gb = grad_of(*beta);
            for (int i = 0; i < t; ++i) {
                const double* gy = self.grad.row(i);
                const double* xh = xhat.row(i);
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double dxh = gy[j] * gamma->val.data[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[j];
                    gg.data[j] += gy[j] * xh[j];
                    gb.data[j] += gy[j];
                }
                mean_dxhat /= d;
                mean_dxhat_xhat /= d;
                double* gxrow = gx.row(i);
                for (int j = 0; j < d; ++j) {
                    const double dxh = gy[j] * gamma->val.data[j];
                    gxrow[j] += (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat) * inv_sigma[i];
                }
            }
        };
    }
    return y;
}

Var Graph::softmax_rows(Var x) {
    check(x->val.ndim() == 2, "softmax needs 2-d input");
    const int t = x->val.dim(0), d = x->val.dim(1);
    Tensor out({t, d});
    for (int i = 0; i < t; ++i) {
        const double* row = x->val.row(i);
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        double* o = out.row(i);
        for (int j = 0; j < d; ++j) {
            o[j] = std::exp(row[j] - mx);
            total += o[j];
        }
        for (int j = 0; j < d; ++j) o[j] /= total;
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [x, t, d](Node& self) {
            Tensor& gx = grad_of(*x);
            for (int i = 0; i < t; ++i) {
                const double* gy = self.grad.row(i);
                const double* yv = self.val.row(i);
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += gy[j] * yv[j];
                double* gxrow = gx.row(i);
                for (int j = 0; j < d; ++j) gxrow[j] += yv[j] * (gy[j] - dot);
            }
        };
    }
    return y;
}

Var Graph::slice_cols(Var x, int c0, int c1) {
    check(x->val.ndim() == 2, "slice_cols needs 2-d input");
    check(0 <= c0 && c0 < c1 && c1 <= x->val.dim(1), "slice_cols bounds");
    const int t = x->val.dim(0), w = c1 - c0;
    Tensor out({t, w});
    for (int i = 0; i < t; ++i) {
        const double* row = x->val.row(i);
        std::copy(row + c0, row + c1, out.row(i));
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [x, c0, t, w](Node& self) {
            Tensor& gx = grad_of(*x);
            for (int i = 0; i < t; ++i) {
                const double* grow = self.grad.row(i);
                double* gxrow = gx.row(i);
                for (int j = 0; j < w; ++j) gxrow[c0 + j] += grow[j];
            }
        };
    }
    return y;
}

Var Graph::concat_cols(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_cols of nothing");
    const int t = xs[0]->val.dim(0);
    int total = 0;
    for (Var v : xs) {
        check(v->val.ndim() == 2 && v->val.dim(0) == t, "concat_cols row mismatch");
        total += v->val.dim(1);
    }
    Tensor out({t, total});
    int off = 0;
    for (Var v : xs) {
        const int w = v->val.dim(1);
        for (int i = 0; i < t; ++i)
            std::copy(v->val.row(i), v->val.row(i) + w, out.row(i) + off);
        off += w;
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [xs, t](Node& self) {
            int off2 = 0;
            for (Var v : xs) {
                const int w = v->val.dim(1);
                Tensor& gv = grad_of(*v);
                for (int i = 0; i < t; ++i) {
                    const double* grow = self.grad.row(i) + off2;
                    double* gvrow = gv.row(i);
                    for (int j = 0; j < w; ++j) gvrow[j] += grow[j];
                }
                off2 += w;
            }
        };
    }
    return y;
}

Var Graph::conv1d_valid(Var x, Var w, Var b, int stride) {
    check(x->val.ndim() == 2 && w->val.ndim() == 3, "conv1d shapes");
    const int t = x->val.dim(0), cin = x->val.dim(1);
    const int cout = w->val.dim(0), wcin = w->val.dim(1), k = w->val.dim(2);
    check(cin == wcin, "conv1d channel mismatch");
    check(b->val.numel() == cout, "conv1d bias size");
    check(t >= k, "input shorter than kernel");
    const int tout = (t - k) / stride + 1;
    Tensor out({tout, cout});
    for (int i = 0; i < tout; ++i) {
        double* orow = out.row(i);
        for (int o = 0; o < cout; ++o) {
            double acc = b->val.data[o];
            const double* wbase = w->val.data.data() + static_cast<size_t>(o) * cin * k;
            for (int c = 0; c < cin; ++c) {
                const double* wrow = wbase + static_cast<size_t>(c) * k;
                for (int kk = 0; kk < k; ++kk)
                    acc += x->val.at(i * stride + kk, c) * wrow[kk];
            }
            orow[o] = acc;
        }
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [x, w, b, stride, tout, cout, cin, k](Node& self) {
            Tensor& gx = grad_of(*x);
            Tensor& gw = grad_of(*w);
            Tensor& gb = grad_of(*b);
            for (int i = 0; i < tout; ++i) {
                const double* gyrow = self.grad.row(i);
                for (int o = 0; o < cout; ++o) {
                    const double g = gyrow[o];
                    if (g == 0.0) continue;
                    gb.data[o] += g;
                    const size_t wbase = static_cast<size_t>(o) * cin * k;
                    for (int c = 0; c < cin; ++c) {
                        for (int kk = 0; kk < k; ++kk) {
                            gw.data[wbase + static_cast<size_t>(c) * k + kk] +=
                                g * x->val.at(i * stride + kk, c);
                            gx.at(i * stride + kk, c) += g * w->val.data[wbase + static_cast<size_t>(c) * k + kk];
                        }
                    }
                }
            }
        };
    }
    return y;
}

Var Graph::conv1d_same_grouped(Var x, Var w, Var b, int groups) {
    check(x->val.ndim() == 2 && w->val.ndim() == 3, "grouped conv shapes");
    const int t = x->val.dim(0), c = x->val.dim(1);
    const int k = w->val.dim(2);
    check(k % 2 == 1, "grouped conv kernel must be odd");
    check(c % groups == 0, "channels not divisible by groups");
    const int gs = c / groups;
    check(w->val.dim(0) == c && w->val.dim(1) == gs, "grouped conv weight shape");
    check(b->val.numel() == c, "grouped conv bias size");
    const int pad = (k - 1) / 2;
    Tensor out({t, c});
    for (int i = 0; i < t; ++i) {
        double* orow = out.row(i);
        for (int o = 0; o < c; ++o) {
            const int g0 = (o / gs) * gs;
            double acc = b->val.data[o];
            const double* wbase = w->val.data.data() + static_cast<size_t>(o) * gs * k;
            for (int j = 0; j < gs; ++j) {
                const double* wrow = wbase + static_cast<size_t>(j) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const int src = i + kk - pad;
                    if (src < 0 || src >= t) continue;
                    acc += x->val.at(src, g0 + j) * wrow[kk];
                }
            }
            orow[o] = acc;
        }
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [x, w, b, t, c, gs, k, pad](Node& self) {
            Tensor& gx = grad_of(*x);
            Tensor& gw = grad_of(*w);
            Tensor& gb = grad_of(*b);
            for (int i = 0; i < t; ++i) {
                const double* gyrow = self.grad.row(i);
                for (int o = 0; o < c; ++o) {
                    const double g = gyrow[o];
                    if (g == 0.0) continue;
                    gb.data[o] += g;
                    const int g0 = (o / gs) * gs;
                    const size_t wbase = static_cast<size_t>(o) * gs * k;
                    for (int j = 0; j < gs; ++j) {
                        for (int kk = 0; kk < k; ++kk) {
                            const int src = i + kk - pad;
                            if (src < 0 || src >= t) continue;
                            gw.data[wbase + static_cast<size_t>(j) * k + kk] +=
                                g * x->val.at(src, g0 + j);
                            gx.at(src, g0 + j) += g * w->val.data[wbase + static_cast<size_t>(j) * k + kk];
                        }
                    }
                }
            }
        };
    }
    return y;
}

Var Graph::mask_rows(Var x, const std::vector<int>& rows, Var emb) {
    check(x->val.ndim() == 2, "mask_rows needs 2-d input");
    const int d = x->val.dim(1);
    check(emb->val.numel() == d, "mask embedding dimension mismatch");
    Tensor out = x->val;
    for (int r : rows) {
        check(r >= 0 && r < x->val.dim(0), "mask row out of range");
        std::copy(emb->val.data.begin(), emb->val.data.end(), out.row(r));
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [x, emb, rows, d](Node& self) {
            Tensor& gx = grad_of(*x);
            Tensor& ge = grad_of(*emb);
            std::vector<uint8_t> is_masked(x->val.dim(0), 0);
            for (int r : rows) is_masked[r] = 1;
            for (int i = 0; i < x->val.dim(0); ++i) {
                const double* grow = self.grad.row(i);
                if (is_masked[i]) {
                    for (int j = 0; j < d; ++j) ge.data[j] += grow[j];
                } else {
                    double* gxrow = gx.row(i);
                    for (int j = 0; j < d; ++j) gxrow[j] += grow[j];
                }
            }
        };
    }
    return y;
}

Var Graph::cosine_scores(Var u, Var e, double eps, double inv_tau) {
    check(u->val.ndim() == 2 && e->val.ndim() == 2, "cosine_scores shapes");
    check(u->val.dim(1) == e->val.dim(1), "cosine_scores dim mismatch");
    const int t = u->val.dim(0), p = u->val.dim(1), c = e->val.dim(0);
    std::vector<double> un(t), en(c);
    for (int i = 0; i < t; ++i) {
        double acc = 0.0;
        const double* row = u->val.row(i);
        for (int j = 0; j < p; ++j) acc += row[j] * row[j];
        un[i] = std::sqrt(acc);
    }
    for (int i = 0; i < c; ++i) {
        double acc = 0.0;
        const double* row = e->val.row(i);
        for (int j = 0; j < p; ++j) acc += row[j] * row[j];
        en[i] = std::sqrt(acc);
    }
    Tensor out({t, c});
    for (int i = 0; i < t; ++i) {
        const double* urow = u->val.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < c; ++j) {
            const double* erow = e->val.row(j);
            double dot = 0.0;
            for (int q = 0; q < p; ++q) dot += urow[q] * erow[q];
            orow[j] = inv_tau * dot / ((un[i] + eps) * (en[j] + eps));
        }
    }
    Var y = make(std::move(out));
    if (grad_enabled_) {
        y->back = [u, e, t, p, c, eps, inv_tau, un = std::move(un), en = std::move(en)](Node& self) {
            Tensor& gu = grad_of(*u);
            Tensor& ge = grad_of(*e);
            for (int i = 0; i < t; ++i) {
                const double* gy = self.grad.row(i);
                const double* urow = u->val.row(i);
                const double* srow = self.val.row(i);
                double* gurow = gu.row(i);
                for (int j = 0; j < c; ++j) {
                    const double g = gy[j];
                    if (g == 0.0) continue;
                    const double* erow = e->val.row(j);
                    double* gerow = ge.row(j);
                    const double denom = (un[i] + eps) * (en[j] + eps);
                    const double a = inv_tau / denom;
                    const double bu = un[i] > 0.0 ? srow[j] / (un[i] * (un[i] + eps)) : 0.0;
                    const double be = en[j] > 0.0 ? srow[j] / (en[j] * (en[j] + eps)) : 0.0;
                    for (int q = 0; q < p; ++q) {
                        gurow[q] += g * (a * erow[q] - bu * urow[q]);
                        gerow[q] += g * (a * urow[q] - be * erow[q]);
                    }
                }
            }
        };
    }
    return y;
}

Var Graph::ce_rows_sum(Var logits, const std::vector<int>& targets, const std::vector<int>& rows,
                       double weight) {
    check(logits->val.ndim() == 2, "ce needs 2-d logits");
    const int t = logits->val.dim(0), c = logits->val.dim(1);
    check(static_cast<int>(targets.size()) == t, "ce target length mismatch");
    // softmax over the selected rows, kept for backward
    Tensor probs({static_cast<int>(rows.size()), c});
    double total = 0.0;
    for (size_t r = 0; r < rows.size(); ++r) {
        const int i = rows[r];
        check(i >= 0 && i < t, "ce row out of range");
        const int z = targets[i];
        if (z < 0 || z >= c)
            throw std::runtime_error("target label " + std::to_string(z) +
                                     " out of range for " + std::to_string(c) + " classes");
        const double* row = logits->val.row(i);
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        double* prow = probs.row(static_cast<int>(r));
        for (int j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            lse += prow[j];
        }
        for (int j = 0; j < c; ++j) prow[j] /= lse;
        total += (mx + std::log(lse)) - row[z];
    }
    Var y = make(Tensor::scalar(weight * total));
    if (grad_enabled_) {
        y->back = [logits, targets, rows, weight, c, probs = std::move(probs)](Node& self) {
            Tensor& gl = grad_of(*logits);
            const double g = weight * self.grad.data[0];
            for (size_t r = 0; r < rows.size(); ++r) {
                const int i = rows[r];
                const double* prow = probs.row(static_cast<int>(r));
                double* grow = gl.row(i);
                for (int j = 0; j < c; ++j) grow[j] += g * prow[j];
                grow[targets[i]] -= g;
            }
        };
    }
    return y;
}

}  // namespace mul::ad
