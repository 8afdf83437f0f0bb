#pragma once

// Differentiable function machinery: dense and conv+flatten layers over a
// flat parameter store, multi-branch input encoders, and the Stage-1 ->
// Stage-2 widening at a designated trunk layer through a zero-initialized
// bridge. Double precision throughout; batched forward/backward with
// column-per-sample matrices.

#include <Eigen/Dense>

#include <variant>

#include "cm3/common.hpp"

namespace cm3 {

using Mat = Eigen::MatrixXd;

enum class Act { Linear, Relu };

inline void apply_activation(Mat& z, Act act) {
  if (act == Act::Relu) z = z.cwiseMax(0.0);
}

struct LayerSpec {
  enum class Kind { Dense, Conv } kind = Kind::Dense;
  int width = 0;                     // dense output units
  int filters = 0, kh = 0, kw = 0;   // conv parameters (stride 1, valid)
  static LayerSpec dense(int w) { return {Kind::Dense, w, 0, 0, 0}; }
  static LayerSpec conv(int f, int kh, int kw) { return {Kind::Conv, 0, f, kh, kw}; }
};

struct SegmentShape {
  int h = 0, w = 0, c = 0;  // tensor dims (channel-last flattening)
  int flat = 0;
  bool is_tensor() const { return h > 0; }
  int dim() const { return is_tensor() ? h * w * c : flat; }
};

struct BranchSpec {
  SegmentShape input;
  std::vector<LayerSpec> layers;  // possibly empty: passthrough
};

/// Architecture description: per-segment input encoders feeding a dense
/// trunk, plus the side branch used when the net is augmented.
struct NetSpec {
  std::vector<BranchSpec> main;
  std::vector<int> trunk_widths;  // hidden widths; the last is the layer
                                  // that receives the bridge
  int output_dim = 1;
  BranchSpec side;
};

struct DenseLayer {
  int in = 0, out = 0;
  Act act = Act::Relu;
  size_t w = 0, b = 0;
};

struct ConvLayer {
  int in_h = 0, in_w = 0, in_c = 0;
  int filters = 0, kh = 0, kw = 0;
  Act act = Act::Relu;
  size_t w = 0, b = 0;
  int out_h() const { return in_h - kh + 1; }
  int out_w() const { return in_w - kw + 1; }
  int out_dim() const { return out_h() * out_w() * filters; }
  int fan_in() const { return kh * kw * in_c; }
  size_t weight_count() const { return static_cast<size_t>(filters) * kh * kw * in_c; }
};

using Layer = std::variant<DenseLayer, ConvLayer>;

inline int layer_out_dim(const Layer& l) {
  if (std::holds_alternative<DenseLayer>(l)) return std::get<DenseLayer>(l).out;
  return std::get<ConvLayer>(l).out_dim();
}

struct Branch {
  SegmentShape input;
  std::vector<Layer> layers;
  int out_dim = 0;
};

/// Scratch space for one forward pass; backward reads it.
struct Workspace {
  std::vector<Mat> main_inputs;
  std::vector<std::vector<Mat>> branch_outs;
  Mat trunk_input;
  std::vector<Mat> trunk_outs;
  Mat side_input;
  std::vector<Mat> side_outs;
  int batch = 0;
};

namespace detail {

// Channel-last flattening: element (r, c, ch) sits at (r*W + c)*C + ch.
inline void conv_forward(const ConvLayer& cl, std::span<const double> params,
                         const Mat& x, Mat& out) {
  const int B = static_cast<int>(x.cols());
  const int oh = cl.out_h(), ow = cl.out_w();
  out.resize(cl.out_dim(), B);
  const double* w = params.data() + cl.w;
  const double* b = params.data() + cl.b;
  for (int col = 0; col < B; ++col) {
    const double* in = x.col(col).data();
    double* o = out.col(col).data();
    for (int f = 0; f < cl.filters; ++f) {
      const double* wf = w + static_cast<size_t>(f) * cl.kh * cl.kw * cl.in_c;
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double acc = b[f];
          const double* wk = wf;
          for (int i = 0; i < cl.kh; ++i) {
            const double* row = in + ((r + i) * cl.in_w + c) * cl.in_c;
            for (int j = 0; j < cl.kw * cl.in_c; ++j) acc += wk[j] * row[j];
            wk += cl.kw * cl.in_c;
          }
          o[(r * ow + c) * cl.filters + f] = acc;
        }
    }
  }
}

inline void conv_backward(const ConvLayer& cl, std::span<const double> params, const Mat& x,
                          const Mat& dz, std::span<double> grad, Mat* dx) {
  const int B = static_cast<int>(x.cols());
  const int oh = cl.out_h(), ow = cl.out_w();
  const double* w = params.data() + cl.w;
  double* gw = grad.data() + cl.w;
  double* gb = grad.data() + cl.b;
  if (dx) {
    dx->resize(x.rows(), B);
    dx->setZero();
  }
  for (int col = 0; col < B; ++col) {
    const double* in = x.col(col).data();
    const double* d = dz.col(col).data();
    double* dxp = dx ? dx->col(col).data() : nullptr;
    for (int f = 0; f < cl.filters; ++f) {
      const double* wf = w + static_cast<size_t>(f) * cl.kh * cl.kw * cl.in_c;
      double* gwf = gw + static_cast<size_t>(f) * cl.kh * cl.kw * cl.in_c;
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double dv = d[(r * ow + c) * cl.filters + f];
          if (dv == 0.0) continue;
          gb[f] += dv;
          double* gk = gwf;
          const double* wk = wf;
          for (int i = 0; i < cl.kh; ++i) {
            const double* row = in + ((r + i) * cl.in_w + c) * cl.in_c;
            double* dro = dxp ? dxp + ((r + i) * cl.in_w + c) * cl.in_c : nullptr;
            for (int j = 0; j < cl.kw * cl.in_c; ++j) {
              gk[j] += dv * row[j];
              if (dro) dro[j] += dv * wk[j];
            }
            gk += cl.kw * cl.in_c;
            wk += cl.kw * cl.in_c;
          }
        }
    }
  }
}

}  // namespace detail

enum class Stage { One, Two };

/// Layered map with a designated augmentation layer. In Stage One the
/// trunk computes h_i = f(W_i h_{i-1}); in Stage Two the designated layer
/// receives an additive bridge term from the side branch before the
/// nonlinearity. Restoring Stage-1 parameters into an augmented net keeps
/// them bit-identical because the side branch and bridge are appended
/// after the Stage-1 parameter block.
class AugmentableNet {
 public:
  struct Entry {
    std::string name;
    size_t offset = 0;
    std::vector<int> shape;
    size_t count() const {
      size_t n = 1;
      for (int d : shape) n *= static_cast<size_t>(d);
      return n;
    }
  };

  Stage stage = Stage::One;
  NetSpec spec;
  std::vector<Branch> mainterms;
  std::vector<DenseLayer> trunk;
  int augment_index = 0;  // trunk layer fed by the bridge
  Branch side;
  size_t bridge_w = 0;
  int bridge_rows = 0, bridge_cols = 0;
  std::vector<double> params;
  std::vector<Entry> registry;

  int output_dim() const { return trunk.back().out; }
  size_t num_params() const { return params.size(); }

  static AugmentableNet build(const NetSpec& spec, Stage stage, Rng& rng,
                              int augment_index = -1) {
    AugmentableNet net;
    net.spec = spec;
    net.stage = stage;
    size_t off = 0;
    int trunk_in = 0;
    for (size_t bi = 0; bi < spec.main.size(); ++bi) {
      net.mainterms.push_back(net.build_branch(spec.main[bi], "main" + std::to_string(bi), off));
      trunk_in += net.mainterms.back().out_dim;
    }
    const std::vector<int>& widths = spec.trunk_widths;
    if (widths.empty()) throw std::invalid_argument("net needs at least one trunk layer");
    int in = trunk_in;
    for (size_t i = 0; i < widths.size(); ++i) {
      net.trunk.push_back(net.make_dense("trunk" + std::to_string(i), in, widths[i], Act::Relu, off));
      in = widths[i];
    }
    net.trunk.push_back(net.make_dense("out", in, spec.output_dim, Act::Linear, off));
    if (augment_index < -1 || augment_index >= static_cast<int>(widths.size()))
      throw std::invalid_argument("invalid augmentation layer index");
    net.augment_index =
        augment_index >= 0 ? augment_index : static_cast<int>(widths.size()) - 1;
    if (stage == Stage::Two) net.append_side(off);
    net.params.assign(off, 0.0);
    net.init_params(rng, /*zero_bridge=*/false);
    return net;
  }

  /// Stage-1 -> Stage-2 widening: preserves every Stage-1 parameter
  /// bit-identically (the Stage-1 block is a prefix of the Stage-2 store),
  /// zero-initializes the bridge so the augmented net starts exactly at the
  /// restored Stage-1 behavior, and gives the side branch small random
  /// weights.
  static AugmentableNet augment(const AugmentableNet& stage1, const BranchSpec& side_spec,
                                Rng& rng, int augment_index = -1) {
    if (stage1.stage == Stage::Two)
      throw std::invalid_argument("augment: net is already Stage Two");
    NetSpec spec = stage1.spec;
    spec.side = side_spec;
    AugmentableNet net = build(spec, Stage::Two, rng, augment_index);
    std::copy(stage1.params.begin(), stage1.params.end(), net.params.begin());
    size_t bn = static_cast<size_t>(net.bridge_rows) * net.bridge_cols;
    std::fill(net.params.begin() + net.bridge_w, net.params.begin() + net.bridge_w + bn, 0.0);
    return net;
  }

  /// Batched forward. main_inputs[i] is (segment dim x batch); side input
  /// must be present exactly when the net is Stage Two.
  const Mat& forward(std::span<const Mat> main_inputs, const Mat* side_input,
                     Workspace& ws) const {
    if (main_inputs.size() != mainterms.size())
      throw std::invalid_argument("forward: wrong number of input segments");
    if ((stage == Stage::Two) != (side_input != nullptr))
      throw std::invalid_argument("forward: stage/input mismatch");
    const int B = static_cast<int>(main_inputs[0].cols());
    ws.batch = B;
    ws.main_inputs.assign(main_inputs.begin(), main_inputs.end());
    ws.branch_outs.resize(mainterms.size());

    int trunk_in_dim = 0;
    for (auto& b : mainterms) trunk_in_dim += b.out_dim;
    ws.trunk_input.resize(trunk_in_dim, B);
    int row = 0;
    for (size_t bi = 0; bi < mainterms.size(); ++bi) {
      const Mat& out = run_branch(mainterms[bi], main_inputs[bi], ws.branch_outs[bi]);
      ws.trunk_input.middleRows(row, out.rows()) = out;
      row += static_cast<int>(out.rows());
    }

    const Mat* side_out = nullptr;
    if (stage == Stage::Two) {
      ws.side_input = *side_input;
      side_out = &run_branch(side, ws.side_input, ws.side_outs);
    }

    ws.trunk_outs.resize(trunk.size());
    const Mat* x = &ws.trunk_input;
    for (size_t i = 0; i < trunk.size(); ++i) {
      const DenseLayer& dl = trunk[i];
      Mat& z = ws.trunk_outs[i];
      z.noalias() = weight(dl) * (*x);
      z.colwise() += bias(dl);
      if (stage == Stage::Two && static_cast<int>(i) == augment_index)
        z.noalias() += bridge() * (*side_out);
      apply_activation(z, dl.act);
      x = &z;
    }
    return ws.trunk_outs.back();
  }

  /// Convenience single-sample forward.
  Vec forward_one(std::span<const Vec> segments, const Vec* side_vec, Workspace& ws) const {
    std::vector<Mat> mats(segments.size());
    for (size_t i = 0; i < segments.size(); ++i)
      mats[i] = Eigen::Map<const Eigen::VectorXd>(segments[i].data(), segments[i].size());
    Mat side;
    if (side_vec) side = Eigen::Map<const Eigen::VectorXd>(side_vec->data(), side_vec->size());
    const Mat& out = forward(mats, side_vec ? &side : nullptr, ws);
    return Vec(out.data(), out.data() + out.rows());
  }

  /// Accumulates parameter gradients for d(loss)/d(output) into grad,
  /// which must be zero-initialized by the caller (or hold a running sum).
  void backward(const Mat& dout, const Workspace& ws, std::span<double> grad) const {
    Mat dz = dout;
    Mat dside;
    for (int i = static_cast<int>(trunk.size()) - 1; i >= 0; --i) {
      const DenseLayer& dl = trunk[i];
      if (dl.act == Act::Relu)
        dz = dz.cwiseProduct((ws.trunk_outs[i].array() > 0.0).cast<double>().matrix());
      const Mat& x = (i == 0) ? ws.trunk_input : ws.trunk_outs[i - 1];
      grad_weight(dl, grad).noalias() += dz * x.transpose();
      grad_bias(dl, grad) += dz.rowwise().sum();
      if (stage == Stage::Two && i == augment_index) {
        const Mat& side_out = side.layers.empty() ? ws.side_input : ws.side_outs.back();
        Eigen::Map<Mat>(grad.data() + bridge_w, bridge_rows, bridge_cols).noalias() +=
            dz * side_out.transpose();
        dside.noalias() = bridge().transpose() * dz;
      }
      dz = (weight(dl).transpose() * dz).eval();
    }
    // dz now holds the gradient at the trunk input; split per branch.
    int row = 0;
    for (size_t bi = 0; bi < mainterms.size(); ++bi) {
      int rows = mainterms[bi].out_dim;
      Mat db = dz.middleRows(row, rows);
      backward_branch(mainterms[bi], ws.main_inputs[bi], ws.branch_outs[bi], db, grad);
      row += rows;
    }
    if (stage == Stage::Two && dside.size() > 0)
      backward_branch(side, ws.side_input, ws.side_outs, dside, grad);
  }

  // --- parameter views ------------------------------------------------------

  Eigen::Map<const Mat> weight(const DenseLayer& l) const {
    return {params.data() + l.w, l.out, l.in};
  }
  Eigen::Map<const Eigen::VectorXd> bias(const DenseLayer& l) const {
    return {params.data() + l.b, l.out};
  }
  Eigen::Map<const Mat> bridge() const {
    return {params.data() + bridge_w, bridge_rows, bridge_cols};
  }
  Eigen::Map<Mat> grad_weight(const DenseLayer& l, std::span<double> g) const {
    return {g.data() + l.w, l.out, l.in};
  }
  Eigen::Map<Eigen::VectorXd> grad_bias(const DenseLayer& l, std::span<double> g) const {
    return {g.data() + l.b, l.out};
  }

 private:
  Branch build_branch(const BranchSpec& bs, const std::string& name, size_t& off) {
    Branch b;
    b.input = bs.input;
    int dim = bs.input.dim();
    if (dim <= 0) throw std::invalid_argument("branch input has zero dimension");
    SegmentShape shape = bs.input;
    for (size_t li = 0; li < bs.layers.size(); ++li) {
      const LayerSpec& ls = bs.layers[li];
      std::string lname = name + ".l" + std::to_string(li);
      if (ls.kind == LayerSpec::Kind::Dense) {
        b.layers.push_back(make_dense(lname, dim, ls.width, Act::Relu, off));
        dim = ls.width;
        shape = SegmentShape{.flat = dim};
      } else {
        if (!shape.is_tensor())
          throw std::invalid_argument("conv layer requires a tensor input segment");
        ConvLayer cl;
        cl.in_h = shape.h;
        cl.in_w = shape.w;
        cl.in_c = shape.c;
        cl.filters = ls.filters;
        cl.kh = ls.kh;
        cl.kw = ls.kw;
        if (cl.out_h() <= 0 || cl.out_w() <= 0)
          throw std::invalid_argument("conv kernel larger than input");
        cl.w = off;
        registry.push_back({lname + ".W", off, {ls.filters, ls.kh, ls.kw, shape.c}});
        off += cl.weight_count();
        cl.b = off;
        registry.push_back({lname + ".b", off, {ls.filters}});
        off += static_cast<size_t>(ls.filters);
        dim = cl.out_dim();
        shape = SegmentShape{.flat = dim};
        b.layers.push_back(cl);
      }
    }
    b.out_dim = dim;
    return b;
  }

  DenseLayer make_dense(const std::string& name, int in, int out, Act act, size_t& off) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    l.act = act;
    l.w = off;
    registry.push_back({name + ".W", off, {out, in}});
    off += static_cast<size_t>(out) * in;
    l.b = off;
    registry.push_back({name + ".b", off, {out}});
    off += static_cast<size_t>(out);
    return l;
  }

  void append_side(size_t& off) {
    side = build_branch(spec.side, "side", off);
    bridge_rows = trunk[augment_index].out;
    bridge_cols = side.out_dim;
    bridge_w = off;
    registry.push_back({"bridge.W", off, {bridge_rows, bridge_cols}});
    off += static_cast<size_t>(bridge_rows) * bridge_cols;
  }

  void init_params(Rng& rng, bool zero_bridge) {
    auto init_dense = [&](const DenseLayer& l) {
      double s = 1.0 / std::sqrt(static_cast<double>(l.in));
      for (size_t i = 0; i < static_cast<size_t>(l.out) * l.in; ++i)
        params[l.w + i] = uniform(rng, -s, s);
      for (int i = 0; i < l.out; ++i) params[l.b + i] = 0.0;
    };
    auto init_conv = [&](const ConvLayer& l) {
      double s = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
      for (size_t i = 0; i < l.weight_count(); ++i) params[l.w + i] = uniform(rng, -s, s);
      for (int i = 0; i < l.filters; ++i) params[l.b + i] = 0.0;
    };
    auto init_branch = [&](const Branch& b) {
      for (const Layer& l : b.layers)
        std::visit([&](auto&& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, DenseLayer>) init_dense(v);
          else init_conv(v);
        }, l);
    };
    for (const Branch& b : mainterms) init_branch(b);
    for (const DenseLayer& l : trunk) init_dense(l);
    if (stage == Stage::Two) {
      init_branch(side);
      double s = 1.0 / std::sqrt(static_cast<double>(std::max(1, bridge_cols)));
      size_t n = static_cast<size_t>(bridge_rows) * bridge_cols;
      for (size_t i = 0; i < n; ++i)
        params[bridge_w + i] = zero_bridge ? 0.0 : uniform(rng, -s, s);
    }
  }

  const Mat& run_branch(const Branch& b, const Mat& input, std::vector<Mat>& outs) const {
    outs.resize(b.layers.size());
    const Mat* x = &input;
    for (size_t i = 0; i < b.layers.size(); ++i) {
      const Layer& l = b.layers[i];
      if (std::holds_alternative<DenseLayer>(l)) {
        const DenseLayer& dl = std::get<DenseLayer>(l);
        outs[i].noalias() = weight(dl) * (*x);
        outs[i].colwise() += bias(dl);
        apply_activation(outs[i], dl.act);
      } else {
        const ConvLayer& cl = std::get<ConvLayer>(l);
        detail::conv_forward(cl, params, *x, outs[i]);
        apply_activation(outs[i], cl.act);
      }
      x = &outs[i];
    }
    return b.layers.empty() ? input : outs.back();
  }

  void backward_branch(const Branch& b, const Mat& input, const std::vector<Mat>& outs,
                       Mat dz, std::span<double> grad) const {
    for (int i = static_cast<int>(b.layers.size()) - 1; i >= 0; --i) {
      const Layer& l = b.layers[i];
      const Mat& out = outs[i];
      const Mat& x = (i == 0) ? input : outs[i - 1];
      if (std::holds_alternative<DenseLayer>(l)) {
        const DenseLayer& dl = std::get<DenseLayer>(l);
        if (dl.act == Act::Relu)
          dz = dz.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
        grad_weight(dl, grad).noalias() += dz * x.transpose();
        grad_bias(dl, grad) += dz.rowwise().sum();
        if (i > 0) dz = (weight(dl).transpose() * dz).eval();
      } else {
        const ConvLayer& cl = std::get<ConvLayer>(l);
        if (cl.act == Act::Relu)
          dz = dz.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
        Mat dx;
        detail::conv_backward(cl, params, x, dz, grad, i > 0 ? &dx : nullptr);
        if (i > 0) dz = std::move(dx);
      }
    }
  }
};

/// Exploration-floored softmax: P(a = i) = (1 - eps) softmax(i) + eps/|A|.
inline Vec action_distribution(std::span<const double> logits, double eps) {
  if (eps < 0.0 || eps > 1.0) throw std::invalid_argument("epsilon outside [0,1]");
  Vec p = softmax(logits);
  const double floor = eps / static_cast<double>(logits.size());
  for (double& v : p) v = (1.0 - eps) * v + floor;
  return p;
}

/// d log P(action) / d logits for the floored softmax.
inline Vec action_log_prob_grad(std::span<const double> logits, double eps, int action) {
  Vec s = softmax(logits);
  double p = (1.0 - eps) * s[action] + eps / static_cast<double>(logits.size());
  Vec g(logits.size());
  for (size_t j = 0; j < logits.size(); ++j) {
    double ds = s[action] * ((static_cast<int>(j) == action ? 1.0 : 0.0) - s[j]);
    g[j] = (1.0 - eps) * ds / p;
  }
  return g;
}

/// theta' <- tau * theta + (1 - tau) * theta', elementwise.
inline void soft_update(std::span<const double> main, std::span<double> target, double tau) {
  if (main.size() != target.size())
    throw std::invalid_argument("soft_update: parameter size mismatch");
  for (size_t i = 0; i < main.size(); ++i)
    target[i] = tau * main[i] + (1.0 - tau) * target[i];
}

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long t = 0;

  explicit Adam(double lr_ = 1e-3) : lr(lr_) {}

  /// Descends along grad; pass the negative gradient to ascend.
  void step(std::span<double> params, std::span<const double> grad) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

}  // namespace cm3
