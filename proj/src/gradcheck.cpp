// SPDX-License-Identifier: Apache-2.0
#include "ldr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ldr/backbone.hpp"
#include "ldr/errors.hpp"
#include "ldr/losses.hpp"
#include "ldr/rng.hpp"

namespace ldr {

namespace {

using D = double;
using V = Var<D>;

Tensor<D> normal_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

Tensor<D> uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for checks through relu.
Tensor<D> off_zero_tensor(Rng& rng, Shape shape) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.storage()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

// Reduces an arbitrary output to a scalar through a fixed random projection,
// so every output entry contributes with a distinct weight.
V project(Tape<D>& tape, const V& out, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x9e37));
  return tape.sum(tape.mul(out, tape.constant(normal_tensor(rng, out->value.shape()))));
}

std::vector<std::int32_t> random_indices(Rng& rng, std::size_t rows, std::size_t n, std::size_t k) {
  std::vector<std::int32_t> idx;
  std::vector<std::int32_t> perm(n);
  for (std::size_t r = 0; r < rows; ++r) {
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(perm[i], perm[i + rng.below(n - i)]);
      idx.push_back(perm[i]);
    }
  }
  return idx;
}

// Moves every parameter to a generic point. Zero-initialised biases give
// exact relu kinks (a dead channel feeds exactly 0 into the next relu) and
// exact softmax ties, where neither the tape nor a finite difference is
// meaningful.
std::vector<V> leaves_of(const ParameterSet<D>& params, std::uint64_t seed) {
  std::vector<V> out;
  Rng rng(mix_seed(seed, 0x6a77));
  for (const auto& [name, v] : params.entries()) {
    for (auto& x : v->value.storage()) x += 0.1 * rng.normal();
    out.push_back(v);
  }
  return out;
}

struct Case {
  std::string name;
  std::vector<V> leaves;
  ProbeFn fn;
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

// Each builder receives (variant 0..2, seed) and returns one check.
using Builder = std::function<Case(int, std::uint64_t)>;

std::vector<std::pair<std::string, Builder>> op_builders() {
  std::vector<std::pair<std::string, Builder>> b;
  auto unary = [](std::string name, auto op, auto make, std::vector<Shape> shapes) {
    return std::pair<std::string, Builder>{
        name, [=](int v, std::uint64_t seed) {
          Rng rng(seed);
          auto x = make_leaf(make(rng, shapes[static_cast<std::size_t>(v)]));
          return Case{name, {x}, [=](Tape<D>& t) { return Probe{project(t, op(t, x), seed)}; }};
        }};
  };
  auto normal = [](Rng& rng, Shape s) { return normal_tensor(rng, std::move(s)); };
  auto positive = [](Rng& rng, Shape s) { return uniform_tensor(rng, std::move(s), 0.5, 2.0); };
  const std::vector<Shape> vec_shapes = {{4}, {2, 3}, {3, 2, 5}};
  const std::vector<Shape> mat_shapes = {{2, 3}, {4, 1}, {5, 5}};
  const std::vector<Shape> img_shapes = {{2, 3, 2}, {1, 1, 3}, {3, 2, 1}};

  b.push_back(unary("transpose", [](Tape<D>& t, V x) { return t.transpose(x); }, normal, mat_shapes));
  b.push_back(unary("softmax_lastdim", [](Tape<D>& t, V x) { return t.softmax_lastdim(x); }, normal,
                    vec_shapes));
  b.push_back(unary("scalar_mul", [](Tape<D>& t, V x) { return t.scalar_mul(x, -1.7); }, normal,
                    vec_shapes));
  b.push_back(unary("add_scalar", [](Tape<D>& t, V x) { return t.add_scalar(x, 0.3); }, normal,
                    vec_shapes));
  b.push_back(unary("relu", [](Tape<D>& t, V x) { return t.relu(x); },
                    [](Rng& rng, Shape s) { return off_zero_tensor(rng, std::move(s)); }, vec_shapes));
  b.push_back(unary("sigmoid", [](Tape<D>& t, V x) { return t.sigmoid(x); }, normal, vec_shapes));
  b.push_back(unary("sqrt", [](Tape<D>& t, V x) { return t.sqrt(x); }, positive, vec_shapes));
  b.push_back(unary("square", [](Tape<D>& t, V x) { return t.square(x); }, normal, vec_shapes));
  b.push_back(unary("sum", [](Tape<D>& t, V x) { return t.sum(x); }, normal, vec_shapes));
  b.push_back(unary("mean", [](Tape<D>& t, V x) { return t.mean(x); }, normal, vec_shapes));
  b.push_back(unary("reshape",
                    [](Tape<D>& t, V x) { return t.reshape(x, {x->value.size()}); }, normal,
                    vec_shapes));
  b.push_back(unary("upsample2x", [](Tape<D>& t, V x) { return t.upsample2x(x); }, normal,
                    img_shapes));
  b.push_back(unary("mean_rows", [](Tape<D>& t, V x) { return t.mean_rows(x); }, normal, mat_shapes));
  b.push_back(unary("tile_rows", [](Tape<D>& t, V x) { return t.tile_rows(x, 3); }, normal,
                    {{1, 2}, {1, 1}, {1, 5}}));
  b.push_back(unary("normalize_lastdim", [](Tape<D>& t, V x) { return t.normalize_lastdim(x); },
                    positive, vec_shapes));

  auto binary = [](std::string name, auto op, std::vector<std::pair<Shape, Shape>> shapes) {
    return std::pair<std::string, Builder>{
        name, [=](int v, std::uint64_t seed) {
          Rng rng(seed);
          const auto& [sa, sb] = shapes[static_cast<std::size_t>(v)];
          auto a = make_leaf(normal_tensor(rng, sa));
          auto c = make_leaf(normal_tensor(rng, sb));
          return Case{name, {a, c}, [=](Tape<D>& t) { return Probe{project(t, op(t, a, c), seed)}; }};
        }};
  };
  const std::vector<std::pair<Shape, Shape>> same = {{{4}, {4}}, {{2, 3}, {2, 3}}, {{3, 2, 2}, {1}}};
  b.push_back(binary("add", [](Tape<D>& t, V a, V c) { return t.add(a, c); }, same));
  b.push_back(binary("sub", [](Tape<D>& t, V a, V c) { return t.sub(a, c); }, same));
  b.push_back(binary("mul", [](Tape<D>& t, V a, V c) { return t.mul(a, c); }, same));
  b.push_back(binary("matmul", [](Tape<D>& t, V a, V c) { return t.matmul(a, c); },
                     {{{2, 3}, {3, 4}}, {{4, 1}, {1, 5}}, {{5, 5}, {5, 2}}}));
  b.push_back(binary("add_bias", [](Tape<D>& t, V a, V c) { return t.add_bias(a, c); },
                     {{{2, 3}, {3}}, {{2, 2, 4}, {4}}, {{5, 1}, {1}}}));
  b.push_back(binary("conv2d", [](Tape<D>& t, V a, V c) { return t.conv2d(a, c, 1); },
                     {{{4, 4, 2}, {3, 3, 2, 3}}, {{5, 3, 3}, {1, 1, 3, 2}}, {{2, 5, 1}, {5, 5, 1, 2}}}));
  b.push_back(binary("conv2d_stride2", [](Tape<D>& t, V a, V c) { return t.conv2d(a, c, 2); },
                     {{{4, 4, 2}, {3, 3, 2, 3}}, {{5, 3, 3}, {3, 3, 3, 2}}, {{4, 2, 1}, {1, 1, 1, 2}}}));

  b.emplace_back("gather_lastdim", [](int v, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t rows[] = {3, 1, 5}, n[] = {4, 5, 2}, k[] = {2, 5, 1};
    const auto u = static_cast<std::size_t>(v);
    auto x = make_leaf(normal_tensor(rng, {rows[u], n[u]}));
    auto idx = random_indices(rng, rows[u], n[u], k[u]);
    const std::size_t kk = k[u];
    return Case{"gather_lastdim", {x}, [=](Tape<D>& t) {
                  return Probe{project(t, t.gather_lastdim(x, idx, kk), seed)};
                }};
  });
  b.emplace_back("expert_convolve", [](int v, std::uint64_t seed) {
    Rng rng(seed);
    struct G { std::size_t h, w, c, n, k, ks; };
    const G g[] = {{3, 3, 2, 3, 2, 3}, {4, 2, 3, 4, 1, 1}, {2, 5, 1, 2, 2, 3}};
    const auto& s = g[v];
    auto x = make_leaf(normal_tensor(rng, {s.h, s.w, s.c}));
    auto bank = make_leaf(normal_tensor(rng, {s.n, s.ks, s.ks, s.c, s.c}));
    auto w = make_leaf(uniform_tensor(rng, {s.h, s.w, s.k}, 0.1, 1.0));
    auto idx = random_indices(rng, s.h * s.w, s.n, s.k);
    return Case{"expert_convolve", {x, bank, w}, [=](Tape<D>& t) {
                  return Probe{project(t, t.expert_convolve(x, bank, idx, w), seed)};
                }};
  });
  return b;
}

std::vector<std::pair<std::string, Builder>> module_builders(const std::string& module) {
  std::vector<std::pair<std::string, Builder>> b;
  if (module == "prior") {
    b.emplace_back("project_prior", [](int v, std::uint64_t seed) {
      const std::size_t l[] = {3, 4, 2}, w[] = {5, 3, 5}, c[] = {4, 2, 5};
      const auto u = static_cast<std::size_t>(v);
      auto params = std::make_shared<ParameterSet<D>>();
      auto mlp = PriorMlp<D>::create(*params, w[u], c[u], seed);
      Rng rng(seed);
      auto text = normal_tensor(rng, {l[u], w[u]});
      return Case{"project_prior", leaves_of(*params, seed), [=](Tape<D>& t) {
                    (void)params;
                    return Probe{t.sum(project_prior(t, t.constant(text), mlp))};
                  }};
    });
  } else if (module == "dmm") {
    b.emplace_back("measure_degradation_map", [](int v, std::uint64_t seed) {
      const std::size_t h[] = {3, 2, 4}, w[] = {3, 4, 4}, c[] = {4, 2, 3}, l[] = {3, 5, 2};
      const auto u = static_cast<std::size_t>(v);
      auto params = std::make_shared<ParameterSet<D>>();
      auto dmm = DmmParams<D>::create(*params, "dmm", c[u], seed);
      Rng rng(seed);
      auto x = make_leaf(normal_tensor(rng, {h[u], w[u], c[u]}));
      auto p = make_leaf(normal_tensor(rng, {l[u], c[u]}));
      auto leaves = leaves_of(*params, seed);
      leaves.push_back(x);
      leaves.push_back(p);
      const bool scaled = v == 2;
      return Case{"measure_degradation_map", leaves, [=](Tape<D>& t) {
                    (void)params;
                    return Probe{project(t, measure_degradation_map(t, x, p, dmm, scaled).map, seed)};
                  }};
    });
  } else if (module == "experts") {
    for (const bool image_routing : {false, true}) {
      const std::string name = image_routing ? "experts_image_routing" : "experts_pixel_routing";
      b.emplace_back(name, [=](int v, std::uint64_t seed) {
        const std::size_t h[] = {3, 2, 4}, w[] = {3, 4, 2}, c[] = {2, 3, 2}, n[] = {3, 4, 5},
                          k[] = {2, 1, 3};
        const auto u = static_cast<std::size_t>(v);
        auto params = std::make_shared<ParameterSet<D>>();
        auto ep = ExpertParams<D>::create(*params, "ter", c[u], n[u], 3, seed);
        Rng rng(seed);
        auto x = make_leaf(normal_tensor(rng, {h[u], w[u], c[u]}));
        auto m = make_leaf(normal_tensor(rng, {h[u], w[u], c[u]}));
        auto leaves = leaves_of(*params, seed);
        leaves.push_back(x);
        leaves.push_back(m);
        const bool renorm = v == 1;
        const std::size_t kk = k[u];
        return Case{name, leaves, [=](Tape<D>& t) {
                      (void)params;
                      auto sel = image_routing ? select_topk_image(t, m, ep, kk, renorm)
                                               : select_topk(t, score_map(t, m, ep), kk, renorm);
                      return Probe{project(t, expert_convolve(t, x, ep.bank, sel), seed),
                                   sel.indices};
                    }};
      });
    }
  } else if (module == "rfa") {
    b.emplace_back("aggregate", [](int v, std::uint64_t seed) {
      const std::size_t h[] = {2, 3, 1}, w[] = {3, 3, 4}, c[] = {2, 3, 2};
      const auto u = static_cast<std::size_t>(v);
      auto params = std::make_shared<ParameterSet<D>>();
      auto rp = RfaParams<D>::create(*params, "rfa", c[u], seed);
      Rng rng(seed);
      auto m = make_leaf(normal_tensor(rng, {h[u], w[u], c[u]}));
      auto xi = make_leaf(normal_tensor(rng, {h[u], w[u], c[u]}));
      auto leaves = leaves_of(*params, seed);
      leaves.push_back(m);
      leaves.push_back(xi);
      const bool residual = v != 1, scaled = v == 2;
      return Case{"aggregate", leaves, [=](Tape<D>& t) {
                    (void)params;
                    return Probe{project(t, aggregate(t, m, xi, rp, residual, scaled).output, seed)};
                  }};
    });
  } else if (module == "backbone") {
    for (const bool round_trip : {false, true}) {
      const std::string name = round_trip ? "decode_encode" : "encode";
      b.emplace_back(name, [=](int v, std::uint64_t seed) {
        ModelConfig cfg;
        const std::size_t c[] = {3, 2, 4}, levels[] = {1, 2, 1}, side[] = {4, 4, 2};
        const auto u = static_cast<std::size_t>(v);
        cfg.channels = c[u];
        cfg.levels = levels[u];
        cfg.experts = 3;
        cfg.top_k = 2;
        cfg.tokens = 3;
        cfg.text_width = 4;
        cfg.seed = seed;
        auto model = std::make_shared<Model<D>>(cfg);
        Rng rng(seed);
        auto image = make_leaf(uniform_tensor(rng, {side[u], side[u] * 2, 3}, 0.0, 1.0));
        std::vector<V> leaves{image};
        leaves_of(model->params(), seed);
        for (const auto& [pname, p] : model->params().entries()) {
          if (pname.starts_with("enc.") || (round_trip && pname.starts_with("dec."))) leaves.push_back(p);
        }
        return Case{name, leaves, [=](Tape<D>& t) {
                      auto e = model->encode(t, image);
                      auto out = round_trip ? model->decode(t, e.features, e.skips) : e.features;
                      return Probe{project(t, out, seed)};
                    }};
      });
    }
  } else if (module == "losses") {
    for (const int kind : {0, 1, 2, 3}) {
      const char* names[] = {"charbonnier_per_pixel", "charbonnier_global", "edge_loss",
                             "total_loss"};
      const std::string name = names[kind];
      b.emplace_back(name, [=](int v, std::uint64_t seed) {
        const Shape shapes[] = {{3, 3, 3}, {4, 2, 1}, {5, 5, 2}};
        Rng rng(seed);
        const auto& s = shapes[v];
        auto pred = make_leaf(uniform_tensor(rng, s, 0.0, 1.0));
        auto target = uniform_tensor(rng, s, 0.0, 1.0);
        return Case{name, {pred}, [=](Tape<D>& t) {
                      auto tg = t.constant(target);
                      switch (kind) {
                        case 0: return Probe{charbonnier(t, pred, tg)};
                        case 1: return Probe{charbonnier(t, pred, tg, kCharbonnierEps, CharbonnierMode::global)};
                        case 2: return Probe{edge_loss(t, pred, tg)};
                        default: return Probe{total_loss(t, pred, target).total};
                      }
                    }};
      });
    }
  } else if (module == "model") {
    b.emplace_back("end_to_end", [](int, std::uint64_t seed) {
      ModelConfig cfg;
      cfg.channels = 8;
      cfg.experts = 4;
      cfg.top_k = 2;
      cfg.seed = seed;
      auto model = std::make_shared<Model<D>>(cfg);
      Rng rng(mix_seed(seed, 16));
      auto image = uniform_tensor(rng, {16, 16, 3}, 0.0, 1.0);
      auto target = uniform_tensor(rng, {16, 16, 3}, 0.0, 1.0);
      DegradationDescriptor d;
      d.types = {WeatherType::rain};
      d.severity = Severity::moderate;
      d.coverage = 0.8;
      return Case{"end_to_end", leaves_of(model->params(), seed), [=](Tape<D>& t) {
                    auto r = model->forward(t, image, d);
                    return Probe{total_loss(t, r.restored, target).total,
                                 r.diagnostics.selection.indices};
                  }};
    });
  }
  return b;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const ProbeFn& fn,
                                const std::vector<V>& leaves, const GradCheckOptions& o) {
  GradCheckResult r;
  r.name = name;
  for (const auto& leaf : leaves) leaf->zero_grad();
  Tape<D> tape;
  const Probe base = fn(tape);
  tape.backward(base.loss);
  std::vector<Tensor<D>> analytic;
  for (const auto& leaf : leaves) analytic.push_back(leaf->grad_tensor());
  tape.clear();

  std::size_t total = 0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& value = leaves[li]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      ++total;
      const D original = value[i];
      Tape<D> probe(false);
      value[i] = original + o.step;
      const Probe plus = fn(probe);
      value[i] = original - o.step;
      const Probe minus = fn(probe);
      value[i] = original;
      if (plus.signature != base.signature || minus.signature != base.signature) {
        ++r.excluded;
        continue;
      }
      const double numeric = (plus.loss->value[0] - minus.loss->value[0]) / (2 * o.step);
      const double a = analytic[li][i];
      const double err = std::abs(a - numeric);
      const double denom = std::max(std::abs(a), std::abs(numeric));
      ++r.checked;
      r.max_abs_error = std::max(r.max_abs_error, err);
      if (denom < o.denom_floor) {
        if (err > o.abs_tolerance) ++r.failed;
      } else {
        r.max_rel_error = std::max(r.max_rel_error, err / denom);
        if (err / denom > o.rel_tolerance) ++r.failed;
      }
    }
  }
  const double excluded_rate = total ? static_cast<double>(r.excluded) / static_cast<double>(total) : 0;
  r.passed = r.failed == 0 && r.checked > 0 && excluded_rate < o.max_excluded;
  return r;
}

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names = {"ops", "prior", "dmm", "experts",
                                                 "rfa", "backbone", "losses", "model"};
  return names;
}

std::vector<GradCheckResult> run_gradcheck(const std::string& module, const GradCheckOptions& options,
                                           const std::function<void(const GradCheckResult&)>& report) {
  const auto& names = gradcheck_modules();
  if (!module.empty() && std::find(names.begin(), names.end(), module) == names.end()) {
    std::string known;
    for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown gradcheck module '" + module + "' (known: " + known + ")");
  }
  std::vector<GradCheckResult> results;
  for (const auto& m : names) {
    if (!module.empty() && m != module) continue;
    const auto builders = m == "ops" ? op_builders() : module_builders(m);
    const int variants = m == "model" ? 1 : 3;
    for (const auto& [label, build] : builders) {
      for (int v = 0; v < variants; ++v) {
        for (std::uint64_t seed : kSeeds) {
          if (m == "model" && seed != kSeeds[0]) continue;
          const Case c = build(v, seed);
          auto r = check_gradients(c.name, c.fn, c.leaves, options);
          r.module = m;
          if (m != "model") r.name += "[shape " + std::to_string(v) + ", seed " + std::to_string(seed) + "]";
          if (report) report(r);
          results.push_back(std::move(r));
        }
      }
    }
  }
  return results;
}

}  // namespace ldr
