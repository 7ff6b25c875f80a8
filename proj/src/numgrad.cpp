#include "trajalign/numgrad.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace trajalign::numgrad {

namespace {

double stable_softplus(double x) {
  // ln(1 + e^x) without overflow on either tail.
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

}  // namespace

int Tape::push(TapeOp op, int r, int c) {
  ops_.push_back(std::move(op));
  rows_.push_back(r);
  cols_.push_back(c);
  values_.emplace_back(static_cast<std::size_t>(r) * c, 0.0);
  int id = static_cast<int>(ops_.size()) - 1;
  eval(id);
  return id;
}

int Tape::input(std::span<const double> v) {
  TapeOp op{OpKind::kInput};
  int id = push(op, static_cast<int>(v.size()), 1);
  values_[id].assign(v.begin(), v.end());
  return id;
}

int Tape::input_scalar(double v) {
  double buf[1] = {v};
  return input(std::span<const double>(buf, 1));
}

int Tape::param(const DenseMatrix& m) {
  TapeOp op{OpKind::kParam};
  int id = push(op, m.rows, m.cols);
  values_[id] = m.data;
  param_nodes_.push_back(id);
  return id;
}

int Tape::matvec(int w, int x) {
  if (cols_[w] != rows_[x] || cols_[x] != 1) {
    throw UsageError("matvec: shape mismatch");
  }
  TapeOp op{OpKind::kMatVec};
  op.a = w;
  op.b = x;
  return push(op, rows_[w], 1);
}

int Tape::add(int a, int b) {
  if (rows_[a] != rows_[b] || cols_[a] != cols_[b]) throw UsageError("add: shape mismatch");
  TapeOp op{OpKind::kAdd};
  op.a = a;
  op.b = b;
  return push(op, rows_[a], cols_[a]);
}

int Tape::sub(int a, int b) {
  if (rows_[a] != rows_[b] || cols_[a] != cols_[b]) throw UsageError("sub: shape mismatch");
  TapeOp op{OpKind::kSub};
  op.a = a;
  op.b = b;
  return push(op, rows_[a], cols_[a]);
}

int Tape::mul(int a, int b) {
  if (rows_[a] != rows_[b] || cols_[a] != cols_[b]) throw UsageError("mul: shape mismatch");
  TapeOp op{OpKind::kMul};
  op.a = a;
  op.b = b;
  return push(op, rows_[a], cols_[a]);
}

int Tape::tanh(int a) {
  TapeOp op{OpKind::kTanh};
  op.a = a;
  return push(op, rows_[a], cols_[a]);
}

int Tape::log_softmax(int a) {
  if (cols_[a] != 1) throw UsageError("log_softmax: expects a vector");
  TapeOp op{OpKind::kLogSoftmax};
  op.a = a;
  return push(op, rows_[a], 1);
}

int Tape::gather(int a, int index) {
  if (index < 0 || index >= rows_[a] * cols_[a]) throw UsageError("gather: index out of range");
  TapeOp op{OpKind::kGather};
  op.a = a;
  op.index = index;
  return push(op, 1, 1);
}

int Tape::sum(const std::vector<int>& scalars) {
  if (scalars.empty()) throw UsageError("sum: empty list");
  for (int n : scalars) {
    if (values_[n].size() != 1) throw UsageError("sum: non-scalar input");
  }
  TapeOp op{OpKind::kSumList};
  op.list = scalars;
  return push(op, 1, 1);
}

int Tape::scale(int a, double c) {
  TapeOp op{OpKind::kScale};
  op.a = a;
  op.c0 = c;
  return push(op, rows_[a], cols_[a]);
}

int Tape::softplus(int a) {
  if (values_[a].size() != 1) throw UsageError("softplus: expects a scalar");
  TapeOp op{OpKind::kSoftplus};
  op.a = a;
  return push(op, 1, 1);
}

int Tape::clamp(int a, double lo, double hi) {
  if (values_[a].size() != 1) throw UsageError("clamp: expects a scalar");
  TapeOp op{OpKind::kClamp};
  op.a = a;
  op.c0 = lo;
  op.c1 = hi;
  return push(op, 1, 1);
}

double Tape::scalar(int node) const {
  if (values_[node].size() != 1) throw UsageError("scalar: node is not scalar");
  return values_[node][0];
}

void Tape::eval(int node) {
  const TapeOp& op = ops_[node];
  std::vector<double>& out = values_[node];
  switch (op.kind) {
    case OpKind::kInput:
    case OpKind::kParam:
      break;  // leaf values are assigned by the caller
    case OpKind::kMatVec: {
      const auto& w = values_[op.a];
      const auto& x = values_[op.b];
      int r = rows_[op.a], c = cols_[op.a];
      for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        const double* wrow = &w[static_cast<std::size_t>(i) * c];
        for (int j = 0; j < c; ++j) acc += wrow[j] * x[j];
        out[i] = acc;
      }
      break;
    }
    case OpKind::kAdd: {
      const auto& a = values_[op.a];
      const auto& b = values_[op.b];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
      break;
    }
    case OpKind::kSub: {
      const auto& a = values_[op.a];
      const auto& b = values_[op.b];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
      break;
    }
    case OpKind::kMul: {
      const auto& a = values_[op.a];
      const auto& b = values_[op.b];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
      break;
    }
    case OpKind::kTanh: {
      const auto& a = values_[op.a];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
      break;
    }
    case OpKind::kLogSoftmax: {
      const auto& a = values_[op.a];
      double m = a[0];
      for (double x : a) m = std::max(m, x);
      double z = 0.0;
      for (double x : a) z += std::exp(x - m);
      double lz = std::log(z);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - m - lz;
      break;
    }
    case OpKind::kGather:
      out[0] = values_[op.a][op.index];
      break;
    case OpKind::kSumList: {
      double acc = 0.0;
      for (int n : op.list) acc += values_[n][0];
      out[0] = acc;
      break;
    }
    case OpKind::kScale: {
      const auto& a = values_[op.a];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = op.c0 * a[i];
      break;
    }
    case OpKind::kSoftplus:
      out[0] = stable_softplus(values_[op.a][0]);
      break;
    case OpKind::kClamp:
      out[0] = std::clamp(values_[op.a][0], op.c0, op.c1);
      break;
  }
}

void Tape::replay() {
  for (int i = 0; i < static_cast<int>(ops_.size()); ++i) eval(i);
}

std::vector<DenseMatrix> Tape::grad_scalar(int output) const {
  if (output < 0 || output >= static_cast<int>(ops_.size()) || values_[output].size() != 1) {
    throw UsageError("grad_scalar: output must be a scalar node on the tape");
  }
  std::vector<std::vector<double>> grads(ops_.size());
  for (std::size_t i = 0; i < ops_.size(); ++i) grads[i].assign(values_[i].size(), 0.0);
  grads[output][0] = 1.0;

  for (int n = output; n >= 0; --n) {
    const TapeOp& op = ops_[n];
    const std::vector<double>& g = grads[n];
    bool dead = true;
    for (double x : g) {
      if (x != 0.0) {
        dead = false;
        break;
      }
    }
    if (dead) continue;
    switch (op.kind) {
      case OpKind::kInput:
      case OpKind::kParam:
        break;
      case OpKind::kMatVec: {
        const auto& x = values_[op.b];
        const auto& w = values_[op.a];
        auto& gw = grads[op.a];
        auto& gx = grads[op.b];
        int r = rows_[op.a], c = cols_[op.a];
        for (int i = 0; i < r; ++i) {
          double gi = g[i];
          if (gi == 0.0) continue;
          double* gwrow = &gw[static_cast<std::size_t>(i) * c];
          const double* wrow = &w[static_cast<std::size_t>(i) * c];
          for (int j = 0; j < c; ++j) {
            gwrow[j] += gi * x[j];
            gx[j] += gi * wrow[j];
          }
        }
        break;
      }
      case OpKind::kAdd: {
        auto& ga = grads[op.a];
        auto& gb = grads[op.b];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case OpKind::kSub: {
        auto& ga = grads[op.a];
        auto& gb = grads[op.b];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case OpKind::kMul: {
        const auto& a = values_[op.a];
        const auto& b = values_[op.b];
        auto& ga = grads[op.a];
        auto& gb = grads[op.b];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * b[i];
          gb[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::kTanh: {
        const auto& y = values_[n];
        auto& ga = grads[op.a];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case OpKind::kLogSoftmax: {
        // dL/da = g - softmax(a) * sum(g)
        const auto& y = values_[n];
        auto& ga = grads[op.a];
        double gsum = 0.0;
        for (double x : g) gsum += x;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
        break;
      }
      case OpKind::kGather:
        grads[op.a][op.index] += g[0];
        break;
      case OpKind::kSumList:
        for (int in : op.list) grads[in][0] += g[0];
        break;
      case OpKind::kScale: {
        auto& ga = grads[op.a];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += op.c0 * g[i];
        break;
      }
      case OpKind::kSoftplus:
        grads[op.a][0] += g[0] * sigmoid(values_[op.a][0]);
        break;
      case OpKind::kClamp: {
        double x = values_[op.a][0];
        if (x >= op.c0 && x <= op.c1) grads[op.a][0] += g[0];
        break;
      }
    }
  }

  std::vector<DenseMatrix> out;
  out.reserve(param_nodes_.size());
  for (int pn : param_nodes_) {
    DenseMatrix m(rows_[pn], cols_[pn]);
    m.data = grads[pn];
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------

Mlp init_mlp(const MlpArch& arch, std::uint64_t seed) {
  if (arch.input < 1 || arch.hidden < 1 || arch.actions < 1) {
    throw ConfigError("init_mlp: all dimensions must be >= 1");
  }
  Mlp net;
  net.arch = arch;
  net.seed = seed;
  net.w1 = DenseMatrix(arch.hidden, arch.input);
  net.b1 = DenseMatrix(arch.hidden, 1);
  net.w2 = DenseMatrix(arch.actions, arch.hidden);
  net.b2 = DenseMatrix(arch.actions, 1);
  Rng rng(derive_seed(seed, "mlp-init"));
  double s1 = 1.0 / std::sqrt(static_cast<double>(arch.input));
  double s2 = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
  for (double& x : net.w1.data) x = s1 * rng.gaussian();
  for (double& x : net.w2.data) x = s2 * rng.gaussian();
  return net;
}

MlpNodes register_params(Tape& tape, const Mlp& net) {
  MlpNodes p;
  p.w1 = tape.param(net.w1);
  p.b1 = tape.param(net.b1);
  p.w2 = tape.param(net.w2);
  p.b2 = tape.param(net.b2);
  return p;
}

int forward_logits_node(Tape& tape, const MlpNodes& p, std::span<const double> obs) {
  if (static_cast<int>(obs.size()) != tape.cols(p.w1)) {
    throw ConfigError(format_str("forward_logits: obs length %zu != network input %d", obs.size(),
                                 tape.cols(p.w1)));
  }
  int x = tape.input(obs);
  int h = tape.tanh(tape.add(tape.matvec(p.w1, x), p.b1));
  return tape.add(tape.matvec(p.w2, h), p.b2);
}

ForwardResult forward_logits(const Mlp& net, std::span<const double> obs) {
  ForwardResult r;
  r.params = register_params(r.tape, net);
  r.logits = forward_logits_node(r.tape, r.params, obs);
  return r;
}

std::vector<double> forward_logits_value(const Mlp& net, std::span<const double> obs) {
  if (static_cast<int>(obs.size()) != net.arch.input) {
    throw ConfigError(format_str("forward_logits: obs length %zu != network input %d", obs.size(),
                                 net.arch.input));
  }
  std::vector<double> h(net.arch.hidden);
  for (int i = 0; i < net.arch.hidden; ++i) {
    double acc = 0.0;
    const double* row = &net.w1.data[static_cast<std::size_t>(i) * net.arch.input];
    for (int j = 0; j < net.arch.input; ++j) acc += row[j] * obs[j];
    h[i] = std::tanh(acc + net.b1.data[i]);
  }
  std::vector<double> logits(net.arch.actions);
  for (int i = 0; i < net.arch.actions; ++i) {
    double acc = 0.0;
    const double* row = &net.w2.data[static_cast<std::size_t>(i) * net.arch.hidden];
    for (int j = 0; j < net.arch.hidden; ++j) acc += row[j] * h[j];
    logits[i] = acc + net.b2.data[i];
  }
  return logits;
}

// ---------------------------------------------------------------------------

OptState init_opt(const std::vector<const DenseMatrix*>& params, const AdamWConfig& hp) {
  OptState st;
  st.hp = hp;
  for (const DenseMatrix* p : params) {
    st.m.emplace_back(p->rows, p->cols);
    st.v.emplace_back(p->rows, p->cols);
  }
  return st;
}

void adamw_step(const std::vector<DenseMatrix*>& params, const std::vector<DenseMatrix>& grads,
                OptState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw UsageError("adamw_step: tensor count mismatch");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(grads[k]) || !params[k]->same_shape(state.m[k])) {
      throw UsageError("adamw_step: shape mismatch");
    }
    check_finite(grads[k].data, "gradient");
  }
  state.step += 1;
  const AdamWConfig& hp = state.hp;
  double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  double decay = 1.0 - hp.lr * hp.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->data;
    const auto& g = grads[k].data;
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] = p[i] * decay - hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
    check_finite(p, "parameters after adamw_step");
  }
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json matrix_to_json(const DenseMatrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows; ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols; ++j) row.push_back(m.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

DenseMatrix matrix_from_json(const json& j) {
  int rows = static_cast<int>(j.size());
  int cols = rows > 0 ? static_cast<int>(j[0].size()) : 0;
  DenseMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols) throw ParseError("ragged weight matrix");
    for (int c = 0; c < cols; ++c) m.at(i, c) = j[i][c].get<double>();
  }
  return m;
}

}  // namespace

std::string model_to_json(const Mlp& net, const std::string& provenance) {
  json j;
  j["format_version"] = 1;
  j["arch"] = {{"input", net.arch.input}, {"hidden", net.arch.hidden}, {"actions", net.arch.actions}};
  j["seed"] = net.seed;
  j["provenance"] = provenance;
  j["weights"] = {{"w1", matrix_to_json(net.w1)},
                  {"b1", matrix_to_json(net.b1)},
                  {"w2", matrix_to_json(net.w2)},
                  {"b2", matrix_to_json(net.b2)}};
  return j.dump(2);
}

LoadedModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(format_str("model json: %s", e.what()));
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1) {
    throw ParseError("model json: unsupported format_version");
  }
  LoadedModel out;
  out.net.arch.input = j.at("arch").at("input").get<int>();
  out.net.arch.hidden = j.at("arch").at("hidden").get<int>();
  out.net.arch.actions = j.at("arch").at("actions").get<int>();
  out.net.seed = j.at("seed").get<std::uint64_t>();
  out.provenance = j.value("provenance", "");
  const json& w = j.at("weights");
  out.net.w1 = matrix_from_json(w.at("w1"));
  out.net.b1 = matrix_from_json(w.at("b1"));
  out.net.w2 = matrix_from_json(w.at("w2"));
  out.net.b2 = matrix_from_json(w.at("b2"));
  if (out.net.w1.rows != out.net.arch.hidden || out.net.w1.cols != out.net.arch.input ||
      out.net.w2.rows != out.net.arch.actions || out.net.w2.cols != out.net.arch.hidden ||
      out.net.b1.rows != out.net.arch.hidden || out.net.b2.rows != out.net.arch.actions) {
    throw ParseError("model json: weight shapes disagree with arch");
  }
  for (const DenseMatrix* t : out.net.tensors()) check_finite(t->data, "model weights");
  return out;
}

void save_model(const std::string& path, const Mlp& net, const std::string& provenance) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot write model file: %s", path.c_str()));
  f << model_to_json(net, provenance) << "\n";
}

LoadedModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot read model file: %s", path.c_str()));
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return model_from_json(text);
}

}  // namespace trajalign::numgrad
