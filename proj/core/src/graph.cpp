#include "fergcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fergcn/errors.hpp"

namespace fergcn {

namespace {

std::vector<std::size_t> all_but(std::size_t n, std::size_t skip) {
  std::vector<std::size_t> idx;
  idx.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j)
    if (j != skip) idx.push_back(j);
  return idx;
}

Tensor uniform_tensor(Shape shape, double bound, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

void check_adjacency(const Tensor& features, const Tensor& adjacency) {
  const std::size_t n = features.rows();
  if (adjacency.rank() != 2 || adjacency.rows() != n || adjacency.cols() != n) {
    throw ShapeError("adjacency " + shape_to_string(adjacency.shape()) + " does not match " + std::to_string(n) +
                     " frame nodes");
  }
}

}  // namespace

Var neighbor_stack(Var features, std::size_t node) {
  const std::size_t n = features.value().rows();
  if (n < 2) throw IndexError("neighbor_stack: a single-frame graph has no neighbours");
  if (node >= n) throw IndexError("neighbor_stack: node " + std::to_string(node) + " out of range");
  return select_rows(features, all_but(n, node));
}

Var message_embed(Var neighbors, Var weight) { return matmul(neighbors, weight); }

Var node_update(Var features, Var adjacency, Var weight, std::size_t node, double slope) {
  check_adjacency(features.value(), adjacency.value());
  const std::size_t n = features.value().rows();
  if (node >= n) throw IndexError("node_update: node " + std::to_string(node) + " out of range");
  const Var a_row = select_rows(adjacency, {node});
  const Var self_message = matmul(select_rows(features, {node}), weight);
  if (n == 1) return leaky_relu(matmul(a_row, self_message), slope);
  // Neighbour messages and the self message are summed in frame order, so
  // every node accumulates its terms in the same sequence.
  const Var messages = message_embed(neighbor_stack(features, node), weight);
  std::vector<Var> stacked;
  std::vector<std::size_t> before(node), after(n - 1 - node);
  std::iota(before.begin(), before.end(), std::size_t{0});
  std::iota(after.begin(), after.end(), node);
  if (!before.empty()) stacked.push_back(select_rows(messages, before));
  stacked.push_back(self_message);
  if (!after.empty()) stacked.push_back(select_rows(messages, after));
  return leaky_relu(matmul(a_row, concat_rows(stacked)), slope);
}

Var gcn_forward(Var features, Var adjacency, Var weight, double slope) {
  check_adjacency(features.value(), adjacency.value());
  const std::size_t n = features.value().rows();
  const std::size_t d = features.value().cols();
  if (weight.value().rank() != 2 || weight.value().rows() != d || weight.value().cols() != d) {
    throw ShapeError("gcn weight " + shape_to_string(weight.shape()) + " must be " + std::to_string(d) + "x" +
                     std::to_string(d));
  }
  std::vector<Var> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(node_update(features, adjacency, weight, i, slope));
  return concat_rows(rows);
}

Tensor identity_adjacency(std::size_t frames) { return Tensor::identity(frames); }

GcnParams GcnParams::init(std::size_t dim, CounterRng& rng, double slope) {
  return {uniform_tensor({dim, dim}, std::sqrt(6.0 / static_cast<double>(2 * dim)), rng), slope};
}

BiLstmParams BiLstmParams::zeros(std::size_t dim, RecurrentCell cell) {
  if (dim % 2 != 0) throw ConfigError("recurrent layer needs an even feature dimension, got " + std::to_string(dim));
  const std::size_t half = dim / 2;
  BiLstmParams p;
  p.cell = cell;
  p.u_fwd = Tensor({half, 2 * dim});
  p.u_bwd = Tensor({half, 2 * dim});
  p.v_fwd = Tensor({dim, half});
  p.v_bwd = Tensor({dim, half});
  p.bias = Tensor({1, dim});
  p.s0_fwd = Tensor({1, dim});
  p.s0_bwd = Tensor({1, dim});
  if (cell == RecurrentCell::kGated) {
    p.gates_fwd = Tensor({3 * half, 2 * dim});
    p.gates_bwd = Tensor({3 * half, 2 * dim});
    p.gate_bias_fwd = Tensor({1, 3 * half});
    p.gate_bias_bwd = Tensor({1, 3 * half});
  }
  return p;
}

BiLstmParams BiLstmParams::init(std::size_t dim, CounterRng& rng, RecurrentCell cell) {
  BiLstmParams p = zeros(dim, cell);
  const std::size_t half = dim / 2;
  // The columns of U acting on the carried state start small and the input
  // columns start with unit-variance gain, so the recurrence does not wash
  // out the per-frame input at initialisation.
  const double state_bound = 0.25 * std::sqrt(3.0 / static_cast<double>(dim));
  const double input_bound = 2.0 * std::sqrt(3.0 / static_cast<double>(dim));
  const double v_bound = 2.0 * std::sqrt(3.0 / static_cast<double>(half));
  auto init_u = [&](Tensor& u) {
    for (std::size_t r = 0; r < u.rows(); ++r)
      for (std::size_t c = 0; c < u.cols(); ++c) {
        const double bound = c < dim ? state_bound : input_bound;
        u.at(r, c) = rng.uniform(-bound, bound);
      }
  };
  init_u(p.u_fwd);
  init_u(p.u_bwd);
  p.v_fwd = uniform_tensor(p.v_fwd.shape(), v_bound, rng);
  p.v_bwd = uniform_tensor(p.v_bwd.shape(), v_bound, rng);
  // Cancel the sigmoid's 0.5 offset so the outputs start centred on zero.
  for (std::size_t j = 0; j < dim; ++j) {
    double offset = 0.0;
    for (std::size_t k = 0; k < half; ++k) offset += 0.5 * (p.v_fwd.at(j, k) + p.v_bwd.at(j, k));
    p.bias[j] = -offset;
  }
  if (cell == RecurrentCell::kGated) {
    init_u(p.gates_fwd);
    init_u(p.gates_bwd);
    // Forget gates start open.
    for (std::size_t j = half; j < 2 * half; ++j) {
      p.gate_bias_fwd[j] = 1.0;
      p.gate_bias_bwd[j] = 1.0;
    }
  }
  return p;
}

namespace {

struct Direction {
  Var u_t;      // 2d x d/2
  Var v_t;      // d/2 x d
  Var state;    // 1 x d
  Var gates_t;  // gated only: 2d x 3(d/2)
  Var gate_bias;
  Var cell;     // gated only: 1 x d/2
};

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx;
  for (std::size_t j = begin; j < end; ++j) idx.push_back(j);
  return idx;
}

// One recurrent step; returns the directional projection V h, which is also
// the next hidden state.
Var step(Direction& dir, Var input, RecurrentCell cell, std::size_t half) {
  const Var z = concat_cols(dir.state, input);
  Var h;
  if (cell == RecurrentCell::kPlain) {
    h = sigmoid(matmul(z, dir.u_t));
  } else {
    const Var gates = sigmoid(add_row_bias(matmul(z, dir.gates_t), dir.gate_bias));
    const Var in_gate = select_cols(gates, range(0, half));
    const Var forget_gate = select_cols(gates, range(half, 2 * half));
    const Var out_gate = select_cols(gates, range(2 * half, 3 * half));
    const Var candidate = tanh(matmul(z, dir.u_t));
    dir.cell = add(mul(forget_gate, dir.cell), mul(in_gate, candidate));
    h = mul(out_gate, tanh(dir.cell));
  }
  dir.state = matmul(h, dir.v_t);
  return dir.state;
}

}  // namespace

Var bilstm_forward(Tape& tape, Var inputs, BiLstmParams& params) {
  const Tensor& in = inputs.value();
  if (in.rank() != 2) throw ShapeError("bilstm_forward expects an N x d matrix");
  const std::size_t n = in.rows();
  const std::size_t d = in.cols();
  if (d % 2 != 0) throw ConfigError("recurrent layer needs an even feature dimension, got " + std::to_string(d));
  if (params.dim() != d || params.u_fwd.cols() != 2 * d || params.u_fwd.rows() != d / 2) {
    throw ShapeError("recurrent parameters are sized for d=" + std::to_string(params.dim()) + ", input has d=" +
                     std::to_string(d));
  }
  const std::size_t half = d / 2;
  auto make_direction = [&](Tensor& u, Tensor& v, Tensor& s0, Tensor& gates, Tensor& gate_bias) {
    Direction dir;
    dir.u_t = transpose(tape.parameter(u));
    dir.v_t = transpose(tape.parameter(v));
    dir.state = tape.parameter(s0);
    if (params.cell == RecurrentCell::kGated) {
      dir.gates_t = transpose(tape.parameter(gates));
      dir.gate_bias = tape.parameter(gate_bias);
      dir.cell = tape.constant(Tensor({1, half}));
    }
    return dir;
  };
  Direction fwd = make_direction(params.u_fwd, params.v_fwd, params.s0_fwd, params.gates_fwd, params.gate_bias_fwd);
  Direction bwd = make_direction(params.u_bwd, params.v_bwd, params.s0_bwd, params.gates_bwd, params.gate_bias_bwd);
  const Var bias = tape.parameter(params.bias);

  std::vector<Var> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(select_rows(inputs, {i}));

  std::vector<Var> fwd_out(n), bwd_out(n);
  for (std::size_t i = 0; i < n; ++i) fwd_out[i] = step(fwd, rows[i], params.cell, half);
  for (std::size_t i = n; i-- > 0;) bwd_out[i] = step(bwd, rows[i], params.cell, half);

  std::vector<Var> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(tanh(add_row_bias(add(fwd_out[i], bwd_out[i]), bias)));
  return concat_rows(out);
}

GraphModuleParams GraphModuleParams::init(std::size_t dim, CounterRng& rng, RecurrentCell cell) {
  GraphModuleParams m;
  m.gcn = GcnParams::init(dim, rng);
  m.rnn = BiLstmParams::init(dim, rng, cell);
  return m;
}

void GraphModuleParams::collect(ParameterSet& out, const std::string& prefix) {
  out.push_back({prefix + "gcn_weight", &gcn.weight});
  out.push_back({prefix + "u_fwd", &rnn.u_fwd});
  out.push_back({prefix + "u_bwd", &rnn.u_bwd});
  out.push_back({prefix + "v_fwd", &rnn.v_fwd});
  out.push_back({prefix + "v_bwd", &rnn.v_bwd});
  out.push_back({prefix + "bias", &rnn.bias});
  out.push_back({prefix + "s0_fwd", &rnn.s0_fwd});
  out.push_back({prefix + "s0_bwd", &rnn.s0_bwd});
  if (rnn.cell == RecurrentCell::kGated) {
    out.push_back({prefix + "gates_fwd", &rnn.gates_fwd});
    out.push_back({prefix + "gates_bwd", &rnn.gates_bwd});
    out.push_back({prefix + "gate_bias_fwd", &rnn.gate_bias_fwd});
    out.push_back({prefix + "gate_bias_bwd", &rnn.gate_bias_bwd});
  }
}

Var graph_module_forward(Tape& tape, Var features, Var adjacency, GraphModuleParams& module) {
  const Var o = gcn_forward(features, adjacency, tape.parameter(module.gcn.weight), module.gcn.slope);
  return bilstm_forward(tape, o, module.rnn);
}

std::vector<Var> stacked_forward_all(Tape& tape, Var features, Var adjacency,
                                     std::span<GraphModuleParams> modules) {
  const std::size_t d = features.value().cols();
  for (const auto& m : modules) {
    if (m.gcn.weight.rank() != 2 || m.gcn.weight.rows() != d || m.rnn.dim() != d) {
      throw ConfigError("graph modules must all use feature dimension " + std::to_string(d));
    }
  }
  std::vector<Var> outputs;
  Var h = features;
  for (auto& m : modules) {
    h = graph_module_forward(tape, h, adjacency, m);
    outputs.push_back(h);
  }
  return outputs;
}

Var stacked_forward(Tape& tape, Var features, Var adjacency, std::span<GraphModuleParams> modules) {
  auto outs = stacked_forward_all(tape, features, adjacency, modules);
  return outs.empty() ? features : outs.back();
}

}  // namespace fergcn
