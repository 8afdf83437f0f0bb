#include <catch_amalgamated.hpp>

#include "cm3/checkpoint.hpp"
#include "cm3/net.hpp"

using namespace cm3;

namespace {

// Straightforward re-implementation of the layer arithmetic, written
// independently of the Eigen path, used as the forward oracle.
Vec ref_dense(const AugmentableNet& net, const DenseLayer& l, const Vec& x, bool relu) {
  Vec out(l.out);
  for (int r = 0; r < l.out; ++r) {
    double acc = net.params[l.b + r];
    for (int c = 0; c < l.in; ++c) acc += net.params[l.w + c * l.out + r] * x[c];
    out[r] = relu && acc < 0.0 ? 0.0 : acc;
  }
  return out;
}

Vec ref_conv(const AugmentableNet& net, const ConvLayer& l, const Vec& x) {
  Vec out(l.out_dim());
  for (int f = 0; f < l.filters; ++f)
    for (int r = 0; r < l.out_h(); ++r)
      for (int c = 0; c < l.out_w(); ++c) {
        double acc = net.params[l.b + f];
        for (int i = 0; i < l.kh; ++i)
          for (int j = 0; j < l.kw; ++j)
            for (int ch = 0; ch < l.in_c; ++ch)
              acc += net.params[l.w + (((static_cast<size_t>(f) * l.kh + i) * l.kw + j) * l.in_c + ch)] *
                     x[((r + i) * l.in_w + (c + j)) * l.in_c + ch];
        double v = acc < 0.0 ? 0.0 : acc;
        out[(r * l.out_w() + c) * l.filters + f] = v;
      }
  return out;
}

Vec ref_branch(const AugmentableNet& net, const Branch& b, Vec x) {
  for (const Layer& l : b.layers) {
    if (std::holds_alternative<DenseLayer>(l))
      x = ref_dense(net, std::get<DenseLayer>(l), x, true);
    else
      x = ref_conv(net, std::get<ConvLayer>(l), x);
  }
  return x;
}

Vec ref_forward(const AugmentableNet& net, const std::vector<Vec>& mains, const Vec* side_in) {
  Vec x;
  for (size_t i = 0; i < mains.size(); ++i) append(x, ref_branch(net, net.mainterms[i], mains[i]));
  Vec side_out;
  if (net.stage == Stage::Two) side_out = ref_branch(net, net.side, *side_in);
  for (size_t i = 0; i < net.trunk.size(); ++i) {
    const DenseLayer& l = net.trunk[i];
    Vec z(l.out);
    for (int r = 0; r < l.out; ++r) {
      double acc = net.params[l.b + r];
      for (int c = 0; c < l.in; ++c) acc += net.params[l.w + static_cast<size_t>(c) * l.out + r] * x[c];
      z[r] = acc;
    }
    if (net.stage == Stage::Two && static_cast<int>(i) == net.augment_index)
      for (int r = 0; r < l.out; ++r)
        for (size_t c = 0; c < side_out.size(); ++c)
          z[r] += net.params[net.bridge_w + c * l.out + r] * side_out[c];
    if (l.act == Act::Relu)
      for (double& v : z) v = std::max(0.0, v);
    x = std::move(z);
  }
  return x;
}

NetSpec small_dense_spec() {
  NetSpec s;
  s.main = {{SegmentShape{.flat = 4}, {}}, {SegmentShape{.flat = 3}, {LayerSpec::dense(6)}}};
  s.trunk_widths = {8, 7};
  s.output_dim = 3;
  s.side = {SegmentShape{.flat = 5}, {LayerSpec::dense(6)}};
  return s;
}

NetSpec conv_spec() {
  NetSpec s;
  s.main = {{SegmentShape{4, 5, 2, 0}, {LayerSpec::conv(3, 2, 3), LayerSpec::dense(6)}},
            {SegmentShape{.flat = 3}, {}}};
  s.trunk_widths = {8};
  s.output_dim = 2;
  s.side = {SegmentShape{3, 4, 2, 0}, {LayerSpec::conv(2, 2, 2), LayerSpec::dense(5)}};
  return s;
}

Vec random_vec(Rng& rng, int n, double s = 1.0) {
  Vec v(n);
  for (double& x : v) x = uniform(rng, -s, s);
  return v;
}

std::vector<Vec> random_main_inputs(const AugmentableNet& net, Rng& rng) {
  std::vector<Vec> v;
  for (const Branch& b : net.mainterms) v.push_back(random_vec(rng, b.input.dim()));
  return v;
}

double fd_check_max_rel(AugmentableNet& net, const std::vector<Vec>& mains, const Vec* side,
                        const Vec& target) {
  Workspace ws;
  auto loss_of = [&]() {
    Vec out = net.forward_one(mains, side, ws);
    double l = 0.0;
    for (size_t i = 0; i < out.size(); ++i) l += 0.5 * (out[i] - target[i]) * (out[i] - target[i]);
    return l;
  };
  Vec out = net.forward_one(mains, side, ws);
  Mat up(out.size(), 1);
  for (size_t i = 0; i < out.size(); ++i) up(static_cast<int>(i), 0) = out[i] - target[i];
  Vec grad(net.num_params(), 0.0);
  net.backward(up, ws, grad);

  const double h = 1e-5;
  double worst = 0.0;
  double scale = 0.0;
  for (double g : grad) scale = std::max(scale, std::abs(g));
  scale = std::max(scale, 1.0);
  for (size_t i = 0; i < net.num_params(); ++i) {
    double saved = net.params[i];
    net.params[i] = saved + h;
    double lp = loss_of();
    net.params[i] = saved - h;
    double lm = loss_of();
    net.params[i] = saved;
    double fd = (lp - lm) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("floored softmax action distribution") {
  Vec uniform_logits(5, 0.7);
  Vec p = action_distribution(uniform_logits, 0.3);
  for (double v : p) REQUIRE(v == Catch::Approx(0.2).margin(1e-15));

  Vec logits = {1.0, 0.0, 0.0, 0.0, 0.0};
  Vec full_eps = action_distribution(logits, 1.0);
  for (double v : full_eps) REQUIRE(v == Catch::Approx(0.2).margin(1e-15));

  // Independent scalar recomputation for eps = 0.05.
  double z = std::exp(1.0) + 4.0;
  Vec p2 = action_distribution(logits, 0.05);
  REQUIRE(p2[0] == Catch::Approx(0.95 * std::exp(1.0) / z + 0.01).margin(1e-14));
  for (int i = 1; i < 5; ++i)
    REQUIRE(p2[i] == Catch::Approx(0.95 / z + 0.01).margin(1e-14));

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Vec l = random_vec(rng, 5, 10.0);
    double eps = uniform(rng, 0.0, 1.0);
    Vec q = action_distribution(l, eps);
    double sum = 0.0;
    for (double v : q) {
      REQUIRE(v >= eps / 5.0 - 1e-15);
      sum += v;
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-12);
  }
  REQUIRE_THROWS_AS(action_distribution(logits, 1.5), std::invalid_argument);
}

TEST_CASE("forward matches an independent re-implementation") {
  Rng rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    AugmentableNet one = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
    std::vector<Vec> mains = random_main_inputs(one, rng);
    Workspace ws;
    Vec got = one.forward_one(mains, nullptr, ws);
    Vec want = ref_forward(one, mains, nullptr);
    for (size_t i = 0; i < got.size(); ++i)
      REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-12));

    AugmentableNet two = AugmentableNet::build(conv_spec(), Stage::Two, rng);
    std::vector<Vec> mains2 = random_main_inputs(two, rng);
    Vec side = random_vec(rng, two.side.input.dim());
    Vec got2 = two.forward_one(mains2, &side, ws);
    Vec want2 = ref_forward(two, mains2, &side);
    for (size_t i = 0; i < got2.size(); ++i)
      REQUIRE(got2[i] == Catch::Approx(want2[i]).margin(1e-12));
  }
}

TEST_CASE("identity-like single layer reproduces its input transform") {
  // One linear trunk layer, hand-set to the identity: f(x) = x.
  NetSpec s;
  s.main = {{SegmentShape{.flat = 3}, {}}};
  s.trunk_widths = {3};
  s.output_dim = 3;
  Rng rng(5);
  AugmentableNet net = AugmentableNet::build(s, Stage::One, rng);
  // trunk0 = identity (relu passes positives), out = identity.
  for (const auto& e : net.registry) {
    std::fill(net.params.begin() + e.offset, net.params.begin() + e.offset + e.count(), 0.0);
    if (e.name == "trunk0.W" || e.name == "out.W")
      for (int i = 0; i < 3; ++i) net.params[e.offset + i * 3 + i] = 1.0;
  }
  Workspace ws;
  Vec x = {0.3, 1.2, 0.01};
  Vec y = net.forward_one(std::vector<Vec>{x}, nullptr, ws);
  for (int i = 0; i < 3; ++i) REQUIRE(y[i] == Catch::Approx(x[i]));
}

TEST_CASE("zero bridge makes Stage-2 output equal Stage-1 output") {
  Rng rng(21);
  AugmentableNet one = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  AugmentableNet two = AugmentableNet::augment(one, small_dense_spec().side, rng);
  Workspace ws1, ws2;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vec> mains = random_main_inputs(one, rng);
    Vec side = random_vec(rng, two.side.input.dim());
    Vec a = one.forward_one(mains, nullptr, ws1);
    Vec b = two.forward_one(mains, &side, ws2);
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) <= 1e-12);
  }
}

TEST_CASE("augmentation preserves Stage-1 parameters bit-identically") {
  Rng rng(22);
  AugmentableNet one = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  AugmentableNet two = AugmentableNet::augment(one, small_dense_spec().side, rng);
  REQUIRE(std::equal(one.params.begin(), one.params.end(), two.params.begin()));

  // Parameter count: stage-1 block + side branch + bridge (m_i* x m_K).
  size_t side_params = 5 * 6 + 6;        // dense 5 -> 6
  size_t bridge = static_cast<size_t>(7) * 6;  // trunk width 7, side out 6
  REQUIRE(two.num_params() == one.num_params() + side_params + bridge);

  REQUIRE_THROWS_AS(AugmentableNet::augment(two, small_dense_spec().side, rng),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(AugmentableNet::augment(one, small_dense_spec().side, rng, 9),
                    std::invalid_argument);
}

TEST_CASE("stage/input mismatch is rejected") {
  Rng rng(23);
  AugmentableNet one = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  Workspace ws;
  std::vector<Vec> mains = random_main_inputs(one, rng);
  Vec side = random_vec(rng, 5);
  REQUIRE_THROWS_AS(one.forward_one(mains, &side, ws), std::invalid_argument);
  AugmentableNet two = AugmentableNet::augment(one, small_dense_spec().side, rng);
  REQUIRE_THROWS_AS(two.forward_one(mains, nullptr, ws), std::invalid_argument);
}

TEST_CASE("parameter gradients match central finite differences") {
  Rng rng(31);
  AugmentableNet one = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  std::vector<Vec> mains = random_main_inputs(one, rng);
  Vec target = random_vec(rng, 3);
  REQUIRE(fd_check_max_rel(one, mains, nullptr, target) < 1e-4);

  AugmentableNet two = AugmentableNet::build(conv_spec(), Stage::Two, rng);
  std::vector<Vec> mains2 = random_main_inputs(two, rng);
  Vec side = random_vec(rng, two.side.input.dim());
  Vec target2 = random_vec(rng, 2);
  REQUIRE(fd_check_max_rel(two, mains2, &side, target2) < 1e-4);
}

TEST_CASE("gradients vanish at a stationary point") {
  Rng rng(32);
  AugmentableNet net = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  std::vector<Vec> mains = random_main_inputs(net, rng);
  Workspace ws;
  Vec out = net.forward_one(mains, nullptr, ws);
  // Quadratic loss centered at the current output: upstream is zero.
  Mat up = Mat::Zero(out.size(), 1);
  Vec grad(net.num_params(), 0.0);
  net.backward(up, ws, grad);
  for (double g : grad) REQUIRE(g == 0.0);
}

TEST_CASE("bridge gradient is zero when the side branch output is zero") {
  Rng rng(33);
  AugmentableNet one = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  AugmentableNet two = AugmentableNet::augment(one, small_dense_spec().side, rng);
  std::vector<Vec> mains = random_main_inputs(two, rng);
  Vec side(two.side.input.dim(), 0.0);  // zero input, zero biases -> zero output
  Workspace ws;
  Vec out = two.forward_one(mains, &side, ws);
  Mat up = Mat::Ones(out.size(), 1);
  Vec grad(two.num_params(), 0.0);
  two.backward(up, ws, grad);
  size_t bn = static_cast<size_t>(two.bridge_rows) * two.bridge_cols;
  for (size_t i = 0; i < bn; ++i) REQUIRE(grad[two.bridge_w + i] == 0.0);
}

TEST_CASE("checkpoint round-trips bit-identically and restores partially") {
  Rng rng(41);
  AugmentableNet one = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  CheckpointMeta meta{1, "stage1", "generic", 7};
  Json ck = make_checkpoint(meta, {{"pi1", &one}});

  AugmentableNet fresh = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  load_net(fresh, ck, "pi1");
  REQUIRE(std::equal(one.params.begin(), one.params.end(), fresh.params.begin()));

  // Stage-2 net accepts the Stage-1 payload as a partial restore.
  AugmentableNet two = AugmentableNet::build(small_dense_spec(), Stage::Two, rng);
  Vec before = two.params;
  load_net(two, ck, "pi1");
  REQUIRE(std::equal(one.params.begin(), one.params.end(), two.params.begin()));
  REQUIRE(std::equal(two.params.begin() + one.params.size(), two.params.end(),
                     before.begin() + one.params.size()));

  // Stage-2 payload cannot restore into a Stage-1 architecture.
  Json ck2 = make_checkpoint(CheckpointMeta{2, "cm3", "generic", 7}, {{"pi", &two}});
  AugmentableNet narrow = AugmentableNet::build(small_dense_spec(), Stage::One, rng);
  REQUIRE_THROWS(load_net(narrow, ck2, "pi"));
  REQUIRE_THROWS(load_net(narrow, ck, "missing_name"));
}

TEST_CASE("soft update is an exact convex combination") {
  Vec main = {1.0, -2.0, 0.5};
  Vec target = {0.0, 0.0, 0.0};
  soft_update(main, target, 1.0);
  REQUIRE(target == main);

  target = {0.0, 0.0, 0.0};
  soft_update(main, target, 0.01);
  REQUIRE(target[0] == Catch::Approx(0.01));

  // Repeated updates with frozen mains converge geometrically.
  target = {0.0, 0.0, 0.0};
  double tau = 0.25;
  for (int k = 1; k <= 20; ++k) {
    soft_update(main, target, tau);
    double shrink = std::pow(1.0 - tau, k);
    for (int i = 0; i < 3; ++i)
      REQUIRE(target[i] == Catch::Approx(main[i] * (1.0 - shrink)).margin(1e-12));
  }
}

TEST_CASE("adam minimizes a quadratic") {
  Vec params = {5.0, -3.0};
  Adam opt(0.05);
  for (int it = 0; it < 2000; ++it) {
    Vec grad = {2.0 * (params[0] - 1.0), 2.0 * (params[1] + 2.0)};
    opt.step(params, grad);
  }
  REQUIRE(params[0] == Catch::Approx(1.0).margin(1e-3));
  REQUIRE(params[1] == Catch::Approx(-2.0).margin(1e-3));
}
