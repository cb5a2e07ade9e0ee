#pragma once

// Graph based spatial-temporal module: a GCN layer over the N frame nodes
// driven by a learnable N x N adjacency matrix, followed by a bidirectional
// recurrent layer. Several modules can be stacked over one shared adjacency.
//
// Frame features travel as N x d matrices (row i is frame i).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fergcn/autodiff.hpp"
#include "fergcn/optim.hpp"
#include "fergcn/rng.hpp"

namespace fergcn {

/// Rows of `features` except row `node`, in their original order.
/// Throws IndexError for a single-frame graph or an invalid node.
Var neighbor_stack(Var features, std::size_t node);

/// Embedded neighbour messages, neighbors * W.
Var message_embed(Var neighbors, Var weight);

/// New state of one node: leaky_relu(A[i, others] * (n_i W) + A[i, i] * (H_i W)).
/// A single-frame graph has no neighbour term.
Var node_update(Var features, Var adjacency, Var weight, std::size_t node, double slope);

/// All N node updates, stacked in node order.
Var gcn_forward(Var features, Var adjacency, Var weight, double slope);

/// Adjacency initialised to the identity: every frame starts independent.
Tensor identity_adjacency(std::size_t frames);

struct GcnParams {
  Tensor weight;  // d x d
  double slope = 0.2;

  static GcnParams init(std::size_t dim, CounterRng& rng, double slope = 0.2);
};

enum class RecurrentCell {
  // Gateless cell: h = sigmoid(U [s_prev; o_i]), s = V h.
  kPlain,
  // Gated variant with input/forget/output gates around the same projection.
  kGated,
};

/// Bidirectional recurrent layer. Directional hidden size is d/2; the
/// directional projection V h becomes the next hidden state and the output is
/// tanh(V_f h_f + V_b h_b + b).
struct BiLstmParams {
  RecurrentCell cell = RecurrentCell::kPlain;
  Tensor u_fwd, u_bwd;    // (d/2) x 2d
  Tensor v_fwd, v_bwd;    // d x (d/2)
  Tensor bias;            // 1 x d
  Tensor s0_fwd, s0_bwd;  // 1 x d, zero at init
  // Gated cell only: input, forget and output gates stacked row-wise.
  Tensor gates_fwd, gates_bwd;            // 3(d/2) x 2d
  Tensor gate_bias_fwd, gate_bias_bwd;    // 1 x 3(d/2)

  static BiLstmParams init(std::size_t dim, CounterRng& rng, RecurrentCell cell = RecurrentCell::kPlain);
  static BiLstmParams zeros(std::size_t dim, RecurrentCell cell = RecurrentCell::kPlain);
  std::size_t dim() const { return bias.cols(); }
};

/// Runs the recurrent layer over the N rows of `inputs`.
Var bilstm_forward(Tape& tape, Var inputs, BiLstmParams& params);

struct GraphModuleParams {
  GcnParams gcn;
  BiLstmParams rnn;

  static GraphModuleParams init(std::size_t dim, CounterRng& rng, RecurrentCell cell = RecurrentCell::kPlain);
  void collect(ParameterSet& out, const std::string& prefix);
};

/// bilstm(gcn(features)).
Var graph_module_forward(Tape& tape, Var features, Var adjacency, GraphModuleParams& module);

/// Sequential composition of `modules`, all reading the same adjacency
/// variable so its gradient accumulates over every module. Returns the
/// output of each module (empty for zero modules).
std::vector<Var> stacked_forward_all(Tape& tape, Var features, Var adjacency,
                                     std::span<GraphModuleParams> modules);
Var stacked_forward(Tape& tape, Var features, Var adjacency, std::span<GraphModuleParams> modules);

}  // namespace fergcn
