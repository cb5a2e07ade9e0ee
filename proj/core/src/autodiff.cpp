#include "fergcn/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "fergcn/errors.hpp"

namespace fergcn {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddRowBias: return "add_row_bias";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSoftmax: return "softmax_vector";
    case OpKind::kMeanOverRows: return "mean_over_rows";
    case OpKind::kStopGradient: return "stop_gradient";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kSum: return "sum";
    case OpKind::kSelectRows: return "select_rows";
    case OpKind::kSelectCols: return "select_cols";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMeanPool2: return "mean_pool2";
  }
  return "unknown";
}

std::span<const OpKind> differentiable_ops() {
  static constexpr std::array kOps = {
      OpKind::kMatMul,     OpKind::kTranspose,    OpKind::kAdd,          OpKind::kSub,
      OpKind::kMul,        OpKind::kScale,        OpKind::kAddRowBias,   OpKind::kLeakyRelu,
      OpKind::kSigmoid,    OpKind::kTanh,         OpKind::kSoftmax,      OpKind::kMeanOverRows,
      OpKind::kStopGradient, OpKind::kCrossEntropy, OpKind::kSum,        OpKind::kSelectRows,
      OpKind::kSelectCols, OpKind::kConcatCols,   OpKind::kConcatRows,   OpKind::kReshape,
      OpKind::kConv2d,     OpKind::kMeanPool2,
  };
  return kOps;
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("non-finite constant recorded on tape");
  Record r;
  r.kind = OpKind::kConstant;
  r.value = std::move(value);
  r.value.drop_grad();
  records_.push_back(std::move(r));
  return {this, records_.size() - 1};
}

Var Tape::parameter(Tensor& param) {
  if (!param.all_finite()) throw NumericalError("non-finite parameter recorded on tape");
  Record r;
  r.kind = OpKind::kParameter;
  r.value = Tensor(param.shape(), std::vector<double>(param.values().begin(), param.values().end()));
  if (mode_ == Mode::kTraining) {
    r.param = &param;
    r.requires_grad = true;
  }
  records_.push_back(std::move(r));
  return {this, records_.size() - 1};
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError(std::string("operation ") + std::string(op_name(kind)) +
                         " produced a non-finite value");
  }
  Record r;
  r.kind = kind;
  r.inputs = std::move(inputs);
  r.value = std::move(value);
  for (auto id : r.inputs) {
    if (id >= records_.size()) throw IndexError("record input precedes its definition");
    r.requires_grad = r.requires_grad || records_[id].requires_grad;
  }
  if (r.requires_grad) r.backward = std::move(backward);
  records_.push_back(std::move(r));
  return {this, records_.size() - 1};
}

std::span<double> Tape::grad_sink(std::size_t id) {
  auto& r = records_[id];
  if (!r.requires_grad) return {};
  if (r.grad.empty()) r.grad.assign(r.value.size(), 0.0);
  return r.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw StateError("loss belongs to a different tape");
  const auto& lv = records_[loss.id].value;
  if (lv.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_to_string(lv.shape()));
  if (!records_[loss.id].requires_grad) return;
  grad_sink(loss.id)[0] += 1.0;
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    auto& r = records_[k];
    if (r.grad.empty()) continue;
    if (r.param != nullptr) {
      auto& g = r.param->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grad[i];
    } else if (r.backward) {
      r.backward(r.grad, *this);
    }
  }
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(x.shape()));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw StateError("variables belong to different tapes");
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double activate(const ActivationSpec& spec, double v) {
  switch (spec.kind) {
    case Activation::kLeakyRelu: return v > 0.0 ? v : spec.slope * v;
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-v));
    case Activation::kTanh: return std::tanh(v);
  }
  return v;
}

OpKind activation_kind(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return OpKind::kLeakyRelu;
    case Activation::kSigmoid: return OpKind::kSigmoid;
    case Activation::kTanh: return OpKind::kTanh;
  }
  return OpKind::kLeakyRelu;
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_to_string(av.shape()) + " by " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  gemm_nn(av.values().data(), bv.values().data(), out.values().data(), m, k, n);
  return a.tape->record(OpKind::kMatMul, {a.id, b.id}, std::move(out),
                        [ia = a.id, ib = b.id, m, k, n](std::span<const double> g, Tape& t) {
                          const auto& A = t.value(ia).values();
                          const auto& B = t.value(ib).values();
                          // dA = G * B^T
                          if (auto ga = t.grad_sink(ia); !ga.empty()) {
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t p = 0; p < k; ++p) {
                                double acc = 0.0;
                                for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                                ga[i * k + p] += acc;
                              }
                            }
                          }
                          // dB = A^T * G
                          if (auto gb = t.grad_sink(ib); !gb.empty()) {
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t p = 0; p < k; ++p) {
                                const double av = A[i * k + p];
                                for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                              }
                            }
                          }
                        });
}

Var transpose(Var x) {
  const Tensor& xv = x.value();
  require_matrix("transpose", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = xv.at(i, j);
  return x.tape->record(OpKind::kTranspose, {x.id}, std::move(out),
                        [ix = x.id, m, n](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
                        });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(OpKind::kAdd, {a.id, b.id}, std::move(out),
                        [ia = a.id, ib = b.id](std::span<const double> g, Tape& t) {
                          for (auto id : {ia, ib}) {
                            auto gx = t.grad_sink(id);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                          }
                        });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(OpKind::kSub, {a.id, b.id}, std::move(out),
                        [ia = a.id, ib = b.id](std::span<const double> g, Tape& t) {
                          auto ga = t.grad_sink(ia);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                          auto gb = t.grad_sink(ib);
                          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                        });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(OpKind::kMul, {a.id, b.id}, std::move(out),
                        [ia = a.id, ib = b.id](std::span<const double> g, Tape& t) {
                          const auto av = t.value(ia).values();
                          const auto bv = t.value(ib).values();
                          if (auto ga = t.grad_sink(ia); !ga.empty())
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                          if (auto gb = t.grad_sink(ib); !gb.empty())
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                        });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  out.drop_grad();
  for (auto& v : out.values()) v *= factor;
  return x.tape->record(OpKind::kScale, {x.id}, std::move(out),
                        [ix = x.id, factor](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[i];
                        });
}

Var add_row_bias(Var x, Var bias) {
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix("add_row_bias", xv);
  if (bv.rank() != 2 || bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row_bias: bias " + shape_to_string(bv.shape()) + " does not fit " +
                     shape_to_string(xv.shape()));
  }
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = xv;
  out.drop_grad();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  return x.tape->record(OpKind::kAddRowBias, {x.id, bias.id}, std::move(out),
                        [ix = x.id, ib = bias.id, m, n](std::span<const double> g, Tape& t) {
                          if (auto gx = t.grad_sink(ix); !gx.empty())
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                          if (auto gb = t.grad_sink(ib); !gb.empty())
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                        });
}

Var activation(ActivationSpec spec, Var x) {
  if (spec.kind == Activation::kLeakyRelu && !(spec.slope > 0.0 && spec.slope < 1.0)) {
    throw ConfigError("leaky_relu slope must lie in (0, 1), got " + std::to_string(spec.slope));
  }
  Tensor out = x.value();
  out.drop_grad();
  for (auto& v : out.values()) v = activate(spec, v);
  const OpKind kind = activation_kind(spec.kind);
  return x.tape->record(kind, {x.id}, std::move(out),
                        [ix = x.id, spec](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          const auto xv = t.value(ix).values();
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            double d = 1.0;
                            switch (spec.kind) {
                              // Derivative at exactly zero is the negative slope.
                              case Activation::kLeakyRelu: d = xv[i] > 0.0 ? 1.0 : spec.slope; break;
                              case Activation::kSigmoid: {
                                const double s = 1.0 / (1.0 + std::exp(-xv[i]));
                                d = s * (1.0 - s);
                                break;
                              }
                              case Activation::kTanh: {
                                const double th = std::tanh(xv[i]);
                                d = 1.0 - th * th;
                                break;
                              }
                            }
                            gx[i] += d * g[i];
                          }
                        });
}

Var leaky_relu(Var x, double slope) { return activation(ActivationSpec::leaky_relu(slope), x); }
Var sigmoid(Var x) { return activation(ActivationSpec::sigmoid(), x); }
Var tanh(Var x) { return activation(ActivationSpec::tanh(), x); }

namespace {

std::vector<double> stable_softmax(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

void require_row_vector(const char* op, const Tensor& x) {
  if (x.rank() != 2 || x.rows() != 1) {
    throw ShapeError(std::string(op) + ": expected a 1 x n row vector, got " + shape_to_string(x.shape()));
  }
}

}  // namespace

Var softmax_vector(Var x) {
  require_row_vector("softmax_vector", x.value());
  Tensor out(x.shape(), stable_softmax(x.value().values()));
  return x.tape->record(OpKind::kSoftmax, {x.id}, std::move(out),
                        [ix = x.id, self = x.tape->size()](std::span<const double> g, Tape& t) {
                          const auto y = t.value(self).values();
                          double dot = 0.0;
                          for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
                          auto gx = t.grad_sink(ix);
                          for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (g[i] - dot);
                        });
}

Var mean_over_rows(Var x) {
  const Tensor& xv = x.value();
  require_matrix("mean_over_rows", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv.at(i, j);
  for (auto& v : out.values()) v /= static_cast<double>(m);
  return x.tape->record(OpKind::kMeanOverRows, {x.id}, std::move(out),
                        [ix = x.id, m, n](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          const double inv = 1.0 / static_cast<double>(m);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * inv;
                        });
}

Var stop_gradient(Var x) {
  Tensor out = x.value();
  out.drop_grad();
  // The edge is recorded for topology but has no backward rule, so nothing
  // upstream receives a gradient through it.
  return x.tape->record(OpKind::kStopGradient, {x.id}, std::move(out), nullptr);
}

Var cross_entropy(Var logits, std::size_t label) {
  require_row_vector("cross_entropy", logits.value());
  const auto lv = logits.value().values();
  if (label >= lv.size()) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(lv.size()) + " classes");
  }
  const auto top = static_cast<std::size_t>(std::max_element(lv.begin(), lv.end()) - lv.begin());
  const double mx = lv[top];
  double rest = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i)
    if (i != top) rest += std::exp(lv[i] - mx);
  const double loss = std::log1p(rest) + (mx - lv[label]);
  return logits.tape->record(OpKind::kCrossEntropy, {logits.id}, Tensor({1, 1}, {loss}),
                             [ix = logits.id, label](std::span<const double> g, Tape& t) {
                               const auto p = stable_softmax(t.value(ix).values());
                               auto gx = t.grad_sink(ix);
                               for (std::size_t i = 0; i < p.size(); ++i)
                                 gx[i] += g[0] * (p[i] - (i == label ? 1.0 : 0.0));
                             });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape->record(OpKind::kSum, {x.id}, Tensor({1, 1}, {total}),
                        [ix = x.id](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          for (auto& v : gx) v += g[0];
                        });
}

Var select_rows(Var x, std::vector<std::size_t> rows) {
  const Tensor& xv = x.value();
  require_matrix("select_rows", xv);
  const std::size_t n = xv.cols();
  if (rows.empty()) throw ShapeError("select_rows: empty selection");
  Tensor out({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.rows()) {
      throw IndexError("select_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       shape_to_string(xv.shape()));
    }
    std::copy_n(xv.values().begin() + static_cast<std::ptrdiff_t>(rows[r] * n), n,
                out.values().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return x.tape->record(OpKind::kSelectRows, {x.id}, std::move(out),
                        [ix = x.id, rows = std::move(rows), n](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          for (std::size_t r = 0; r < rows.size(); ++r)
                            for (std::size_t j = 0; j < n; ++j) gx[rows[r] * n + j] += g[r * n + j];
                        });
}

Var select_cols(Var x, std::vector<std::size_t> cols) {
  const Tensor& xv = x.value();
  require_matrix("select_cols", xv);
  const std::size_t m = xv.rows(), n = xv.cols(), k = cols.size();
  if (cols.empty()) throw ShapeError("select_cols: empty selection");
  Tensor out({m, k});
  for (std::size_t c = 0; c < k; ++c) {
    if (cols[c] >= n) {
      throw IndexError("select_cols: column " + std::to_string(cols[c]) + " out of range for " +
                       shape_to_string(xv.shape()));
    }
    for (std::size_t i = 0; i < m; ++i) out.at(i, c) = xv.at(i, cols[c]);
  }
  return x.tape->record(OpKind::kSelectCols, {x.id}, std::move(out),
                        [ix = x.id, cols = std::move(cols), m, n](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          const std::size_t k = cols.size();
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t c = 0; c < k; ++c) gx[i * n + cols[c]] += g[i * k + c];
                        });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("concat_cols", av);
  require_matrix("concat_cols", bv);
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_cols: row mismatch " + shape_to_string(av.shape()) + " vs " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t m = av.rows(), p = av.cols(), q = bv.cols();
  Tensor out({m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) out.at(i, j) = av.at(i, j);
    for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = bv.at(i, j);
  }
  return a.tape->record(OpKind::kConcatCols, {a.id, b.id}, std::move(out),
                        [ia = a.id, ib = b.id, m, p, q](std::span<const double> g, Tape& t) {
                          if (auto ga = t.grad_sink(ia); !ga.empty())
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
                          if (auto gb = t.grad_sink(ib); !gb.empty())
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
                        });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape* tape = parts.front().tape;
  const std::size_t n = parts.front().value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.tape != tape) throw StateError("variables belong to different tapes");
    const Tensor& v = p.value();
    require_matrix("concat_rows", v);
    if (v.cols() != n) {
      throw ShapeError("concat_rows: column mismatch " + shape_to_string(v.shape()) + " vs " +
                       std::to_string(n) + " columns");
    }
    total += v.rows();
    ids.push_back(p.id);
  }
  Tensor out({total, n});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto src = p.value().values();
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += src.size();
  }
  auto inputs = ids;
  return tape->record(OpKind::kConcatRows, std::move(inputs), std::move(out),
                      [ids = std::move(ids)](std::span<const double> g, Tape& t) {
                        std::size_t offset = 0;
                        for (auto id : ids) {
                          const std::size_t len = t.value(id).size();
                          if (auto gx = t.grad_sink(id); !gx.empty())
                            for (std::size_t i = 0; i < len; ++i) gx[i] += g[offset + i];
                          offset += len;
                        }
                      });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape->record(OpKind::kReshape, {x.id}, std::move(out),
                        [ix = x.id](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                        });
}

Var conv2d(Var x, Var kernel, Var bias) {
  require_same_tape(x, kernel);
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 4 || kv.rank() != 4 || bv.rank() != 1) {
    throw ShapeError("conv2d: expected input [B,C,H,W], kernel [O,C,k,k], bias [O]; got " +
                     shape_to_string(xv.shape()) + ", " + shape_to_string(kv.shape()) + ", " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t cout = kv.dim(0), ksz = kv.dim(2);
  if (kv.dim(1) != cin || kv.dim(3) != ksz || ksz % 2 == 0 || bv.dim(0) != cout) {
    throw ShapeError("conv2d: kernel " + shape_to_string(kv.shape()) + " / bias " +
                     shape_to_string(bv.shape()) + " incompatible with input " + shape_to_string(xv.shape()));
  }
  const auto pad = static_cast<std::ptrdiff_t>(ksz / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const auto K = static_cast<std::ptrdiff_t>(ksz);
  // Walks every (output position, kernel tap) pair that lands inside the
  // input; `fn(out_index, in_index, kernel_index)`.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
          for (std::ptrdiff_t ky = 0; ky < K; ++ky)
            for (std::ptrdiff_t kx = 0; kx < K; ++kx) {
              const std::size_t kidx = ((o * cin + c) * ksz + static_cast<std::size_t>(ky)) * ksz +
                                       static_cast<std::size_t>(kx);
              const std::size_t in_base = (b * cin + c) * h * w;
              const std::size_t out_base = (b * cout + o) * h * w;
              const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, pad - ky);
              const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H + pad - ky);
              const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, pad - kx);
              const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W + pad - kx);
              for (std::ptrdiff_t y = y0; y < y1; ++y) {
                const std::ptrdiff_t iy = y + ky - pad;
                fn(out_base + static_cast<std::size_t>(y * W), in_base + static_cast<std::size_t>(iy * W),
                   kidx, x0, x1, kx - pad);
              }
            }
  };
  Tensor out({batch, cout, h, w});
  {
    auto ov = out.values();
    const auto in = xv.values();
    const auto kvals = kv.values();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < cout; ++o)
        std::fill_n(ov.begin() + static_cast<std::ptrdiff_t>((b * cout + o) * h * w), h * w, bv[o]);
    for_each_tap([&](std::size_t orow, std::size_t irow, std::size_t kidx, std::ptrdiff_t x0,
                     std::ptrdiff_t x1, std::ptrdiff_t shift) {
      const double kval = kvals[kidx];
      for (std::ptrdiff_t xx = x0; xx < x1; ++xx)
        ov[orow + static_cast<std::size_t>(xx)] += kval * in[irow + static_cast<std::size_t>(xx + shift)];
    });
  }
  return x.tape->record(
      OpKind::kConv2d, {x.id, kernel.id, bias.id}, std::move(out),
      [ix = x.id, ik = kernel.id, ib = bias.id, for_each_tap, batch, cout, h, w](std::span<const double> g,
                                                                                Tape& t) {
        const auto in = t.value(ix).values();
        const auto kvals = t.value(ik).values();
        auto gx = t.grad_sink(ix);
        auto gk = t.grad_sink(ik);
        if (!gx.empty() || !gk.empty()) {
          for_each_tap([&](std::size_t orow, std::size_t irow, std::size_t kidx, std::ptrdiff_t x0,
                           std::ptrdiff_t x1, std::ptrdiff_t shift) {
            double kacc = 0.0;
            const double kval = kvals[kidx];
            for (std::ptrdiff_t xx = x0; xx < x1; ++xx) {
              const double go = g[orow + static_cast<std::size_t>(xx)];
              const std::size_t ii = irow + static_cast<std::size_t>(xx + shift);
              kacc += go * in[ii];
              if (!gx.empty()) gx[ii] += go * kval;
            }
            if (!gk.empty()) gk[kidx] += kacc;
          });
        }
        if (auto gb = t.grad_sink(ib); !gb.empty()) {
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < cout; ++o) {
              const std::size_t base = (b * cout + o) * h * w;
              for (std::size_t i = 0; i < h * w; ++i) gb[o] += g[base + i];
            }
        }
      });
}

Var mean_pool2(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(2) % 2 != 0 || xv.dim(3) % 2 != 0) {
    throw ShapeError("mean_pool2: expected [B,C,H,W] with even H and W, got " + shape_to_string(xv.shape()));
  }
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({xv.dim(0), xv.dim(1), oh, ow});
  const auto in = xv.values();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x2 = 0; x2 < ow; ++x2) {
        const std::size_t i0 = p * h * w + (2 * y) * w + 2 * x2;
        out[p * oh * ow + y * ow + x2] = 0.25 * (in[i0] + in[i0 + 1] + in[i0 + w] + in[i0 + w + 1]);
      }
  return x.tape->record(OpKind::kMeanPool2, {x.id}, std::move(out),
                        [ix = x.id, planes, h, w, oh, ow](std::span<const double> g, Tape& t) {
                          auto gx = t.grad_sink(ix);
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t y = 0; y < oh; ++y)
                              for (std::size_t x2 = 0; x2 < ow; ++x2) {
                                const double v = 0.25 * g[p * oh * ow + y * ow + x2];
                                const std::size_t i0 = p * h * w + (2 * y) * w + 2 * x2;
                                gx[i0] += v;
                                gx[i0 + 1] += v;
                                gx[i0 + w] += v;
                                gx[i0 + w + 1] += v;
                              }
                        });
}

}  // namespace fergcn
