#pragma once

// Dense linear algebra, a tape-based reverse-mode differentiator, and AdamW.
// Everything is 64-bit float; the networks here are small enough that
// clarity and exact reproducibility beat throughput.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajalign/common.hpp"

namespace trajalign::numgrad {

struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  static DenseMatrix zeros(int r, int c) { return DenseMatrix(r, c); }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return data.size(); }

  bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Recorded primitive operations. Node inputs always precede the node, so a
// single forward sweep in index order replays the computation.
enum class OpKind {
  kInput,       // leaf, no gradient
  kParam,       // leaf, gradient collected
  kMatVec,      // (r x c) matrix node  *  length-c vector node
  kAdd,         // elementwise
  kSub,         // elementwise
  kMul,         // elementwise
  kTanh,        //
  kLogSoftmax,  // over a vector
  kGather,      // one component of a vector -> scalar
  kSumList,     // sum of scalar nodes -> scalar
  kScale,       // c * node
  kSoftplus,    // scalar ln(1 + e^x), stable
  kClamp,       // scalar clamp to [lo, hi]
};

struct TapeOp {
  OpKind kind;
  int a = -1;
  int b = -1;
  std::vector<int> list;  // kSumList inputs
  int index = 0;          // kGather component
  double c0 = 0.0;        // kScale factor / kClamp lo
  double c1 = 0.0;        // kClamp hi
};

// Append-only computation tape. Node values are stored flat; shapes are
// (rows, cols) with vectors as n x 1.
class Tape {
 public:
  int input(std::span<const double> v);
  int input_scalar(double v);
  int param(const DenseMatrix& m);

  int matvec(int w, int x);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int tanh(int a);
  int log_softmax(int a);
  int gather(int a, int index);
  int sum(const std::vector<int>& scalars);
  int scale(int a, double c);
  int softplus(int a);
  int clamp(int a, double lo, double hi);

  const std::vector<double>& value(int node) const { return values_[node]; }
  double scalar(int node) const;
  int rows(int node) const { return rows_[node]; }
  int cols(int node) const { return cols_[node]; }
  std::size_t num_nodes() const { return ops_.size(); }

  // Recomputes every non-leaf value from the recorded ops. Replay must be
  // bit-identical to the values produced at record time.
  void replay();

  // Reverse sweep from a scalar output node. Returns one gradient per
  // registered param node, in registration order.
  std::vector<DenseMatrix> grad_scalar(int output) const;

  // Registration order of param nodes (for callers that interleave).
  const std::vector<int>& param_nodes() const { return param_nodes_; }

 private:
  int push(TapeOp op, int rows, int cols);
  void eval(int node);

  std::vector<TapeOp> ops_;
  std::vector<std::vector<double>> values_;
  std::vector<int> rows_, cols_;
  std::vector<int> param_nodes_;
};

// ---------------------------------------------------------------------------
// Policy network: one tanh hidden layer, linear logits head.

struct MlpArch {
  int input = 0;
  int hidden = 0;
  int actions = 0;
  bool operator==(const MlpArch&) const = default;
};

struct Mlp {
  MlpArch arch;
  std::uint64_t seed = 0;
  DenseMatrix w1;  // hidden x input
  DenseMatrix b1;  // hidden x 1
  DenseMatrix w2;  // actions x hidden
  DenseMatrix b2;  // actions x 1

  std::vector<DenseMatrix*> tensors() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const DenseMatrix*> tensors() const { return {&w1, &b1, &w2, &b2}; }
};

// Gaussian init scaled by 1/sqrt(fan_in), zero biases.
Mlp init_mlp(const MlpArch& arch, std::uint64_t seed);

struct MlpNodes {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

// Registers the four parameter tensors on the tape once; reuse the returned
// handles for every example in a batch so gradients accumulate.
MlpNodes register_params(Tape& tape, const Mlp& net);

// Records the forward pass for one observation and returns the logits node.
int forward_logits_node(Tape& tape, const MlpNodes& p, std::span<const double> obs);

// Convenience wrapper matching the one-shot contract: fresh tape + logits.
struct ForwardResult {
  Tape tape;
  MlpNodes params;
  int logits = -1;
};
ForwardResult forward_logits(const Mlp& net, std::span<const double> obs);

// Tape-free forward pass. Performs the identical sequence of double
// operations as the taped version, so values match bit for bit.
std::vector<double> forward_logits_value(const Mlp& net, std::span<const double> obs);

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay.

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptState {
  AdamWConfig hp;
  long step = 0;
  std::vector<DenseMatrix> m;  // first moments, one per tensor
  std::vector<DenseMatrix> v;  // second moments
};

OptState init_opt(const std::vector<const DenseMatrix*>& params, const AdamWConfig& hp);

// In-place bias-corrected update. Decay is applied as params *= (1-lr*wd)
// before the moment step, so a zero gradient shrinks by exactly that factor.
void adamw_step(const std::vector<DenseMatrix*>& params, const std::vector<DenseMatrix>& grads,
                OptState& state);

// ---------------------------------------------------------------------------
// Model file: {format_version, arch, seed, provenance, weights}.

void save_model(const std::string& path, const Mlp& net, const std::string& provenance);

struct LoadedModel {
  Mlp net;
  std::string provenance;
};
LoadedModel load_model(const std::string& path);

std::string model_to_json(const Mlp& net, const std::string& provenance);
LoadedModel model_from_json(const std::string& text);

}  // namespace trajalign::numgrad
