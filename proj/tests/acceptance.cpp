// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "ctscreen.hpp"
#include "fixtures.hpp"

using namespace ctscreen;
using namespace ctscreen::nn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

using T64 = Tensor<double>;

T64 random_tensor(Shape5 s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T64 t(s);
  for (auto& v : t.data) v = u(rng);
  return t;
}

double dot(const T64& a, const T64& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4}); }

/// Worst relative error between `analytic` and central differences of loss() in x.
double fd_check(T64& x, const std::function<double()>& loss, const T64& analytic, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double lp = loss();
    x[i] = keep - h;
    const double lm = loss();
    x[i] = keep;
    worst = std::max(worst, rel_err(analytic[i], (lp - lm) / (2 * h)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// 1

Outcome gradient_checks() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  std::ostringstream per;

  auto note = [&](const char* name, double e) {
    worst = std::max(worst, e);
    per << name << "=" << sci(e) << " ";
  };

  {  // conv3d, stride 2 and padding 1 on one axis
    T64 x = random_tensor({2, 2, 4, 5, 4}, rng), k = random_tensor({3, 2, 3, 2, 3}, rng), b = random_tensor({3, 1, 1, 1, 1}, rng);
    const Dims3 st{1, 2, 1}, pd{1, 0, 1};
    const T64 r = random_tensor(conv3d_forward(x, k, b, st, pd).shape, rng);
    auto loss = [&] { return dot(conv3d_forward(x, k, b, st, pd), r); };
    const auto g = conv3d_backward(x, k, r, st, pd);
    note("conv", std::max({fd_check(x, loss, g.x), fd_check(k, loss, g.kernel), fd_check(b, loss, g.bias)}));
  }
  {  // maxpool; distinct values keep the argmax stable under +-h
    T64 x({2, 2, 4, 4, 6});
    std::vector<double> vals(x.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i);
    std::shuffle(vals.begin(), vals.end(), rng);
    x.data = vals;
    const Dims3 win{2, 2, 3};
    const T64 r = random_tensor(maxpool3d_forward(x, win, win).y.shape, rng);
    auto loss = [&] { return dot(maxpool3d_forward(x, win, win).y, r); };
    const auto fw = maxpool3d_forward(x, win, win);
    note("maxpool", fd_check(x, loss, maxpool3d_backward(x.shape, fw.argmax, r)));
  }
  {  // relu away from the kink
    T64 x = random_tensor({2, 3, 2, 2, 2}, rng);
    for (auto& v : x.data) v += v >= 0 ? 0.05 : -0.05;
    const T64 r = random_tensor(x.shape, rng);
    auto loss = [&] { return dot(relu_forward(x), r); };
    note("relu", fd_check(x, loss, relu_backward(x, r)));
  }
  {  // batchnorm, train mode
    T64 x = random_tensor({3, 2, 2, 3, 2}, rng), gamma = random_tensor({2, 1, 1, 1, 1}, rng, 0.5, 1.5),
        beta = random_tensor({2, 1, 1, 1, 1}, rng);
    T64 rm({2, 1, 1, 1, 1}), rv({2, 1, 1, 1, 1}, 1.0);
    const T64 r = random_tensor(x.shape, rng);
    auto loss = [&] { return dot(batchnorm3d_train(x, gamma, beta, rm, rv, 0.9, 1e-5, static_cast<BatchNormCache<double>*>(nullptr)), r); };
    BatchNormCache<double> cache;
    batchnorm3d_train(x, gamma, beta, rm, rv, 0.9, 1e-5, &cache);
    const auto g = batchnorm3d_backward(cache, gamma, r);
    note("batchnorm", std::max({fd_check(x, loss, g.x), fd_check(gamma, loss, g.gamma), fd_check(beta, loss, g.beta)}));
  }
  {
    T64 x = random_tensor({2, 3, 2, 3, 4}, rng);
    const T64 r = random_tensor({2, 3, 1, 1, 1}, rng);
    auto loss = [&] { return dot(gap_forward(x), r); };
    note("gap", fd_check(x, loss, gap_backward(x.shape, r)));
  }
  {
    T64 x = random_tensor({3, 5, 1, 1, 1}, rng), w = random_tensor({4, 5, 1, 1, 1}, rng), b = random_tensor({4, 1, 1, 1, 1}, rng);
    const T64 r = random_tensor({3, 4, 1, 1, 1}, rng);
    auto loss = [&] { return dot(dense_forward(x, w, b), r); };
    const auto g = dense_backward(x, w, r);
    note("dense", std::max({fd_check(x, loss, g.x), fd_check(w, loss, g.weight), fd_check(b, loss, g.bias)}));
  }
  {
    T64 x = random_tensor({4, 6, 1, 1, 1}, rng);
    const T64 r = random_tensor(x.shape, rng);
    auto loss = [&] { return dot(dropout_forward(x, 0.4, 77, static_cast<std::vector<double>*>(nullptr)), r); };
    std::vector<double> mask;
    dropout_forward(x, 0.4, 77, &mask);
    note("dropout", fd_check(x, loss, dropout_backward(mask, r)));
  }
  {
    T64 x = random_tensor({3, 4, 1, 1, 1}, rng, -2.0, 2.0);
    const T64 r = random_tensor(x.shape, rng);
    auto loss = [&] { return dot(softmax_forward(x), r); };
    note("softmax", fd_check(x, loss, softmax_backward(softmax_forward(x), r)));
  }
  {  // end to end: every trainable parameter and the input
    ModelSpec s;
    s.input_shape = {1, 4, 6, 6};
    s.class_count = 2;
    s.layers = {LayerSpec::conv3d(3), LayerSpec::simple(LayerKind::Relu), LayerSpec::maxpool3d({2, 2, 2}),
                LayerSpec::batchnorm3d(), LayerSpec::conv3d(2), LayerSpec::simple(LayerKind::Gap),
                LayerSpec::dense(4), LayerSpec::simple(LayerKind::Relu), LayerSpec::dropout(0.3),
                LayerSpec::dense(2), LayerSpec::simple(LayerKind::Softmax)};
    auto w = init_weights<double>(s, 2);
    for (auto& layer : w.layers)
      for (auto& p : layer)
        if (p.trainable)
          for (auto& v : p.value.data) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    T64 x = random_tensor(batch_shape(3, s.input_shape), rng);
    const T64 r = random_tensor({3, 2, 1, 1, 1}, rng);
    auto loss = [&] { return dot(model_forward(s, w, x, Mode::Train, 5), r); };
    ForwardContext<double> ctx;
    model_forward(s, w, x, Mode::Train, 5, &ctx);
    T64 gx;
    const auto g = model_backward(s, w, ctx, r, false, &gx);
    double e = fd_check(x, loss, gx);
    for (std::size_t li = 0; li < w.layers.size(); ++li)
      for (std::size_t pi = 0; pi < w.layers[li].size(); ++pi)
        if (w.layers[li][pi].trainable) e = std::max(e, fd_check(w.layers[li][pi].value, loss, g.layers[li][pi].value));
    note("model", e);
  }
  return {worst < 1e-5, "max rel err " + sci(worst) + " < 1e-05 (" + per.str() + ")"};
}

// ---------------------------------------------------------------------------
// 2

T64 naive_conv(const T64& x, const T64& k, const T64& b, Dims3 st, Dims3 pd) {
  const std::size_t od = (x.d() + 2 * pd[0] - k.shape[2]) / st[0] + 1;
  const std::size_t oh = (x.h() + 2 * pd[1] - k.shape[3]) / st[1] + 1;
  const std::size_t ow = (x.w() + 2 * pd[2] - k.shape[4]) / st[2] + 1;
  T64 y({x.n(), k.shape[0], od, oh, ow});
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t o = 0; o < k.shape[0]; ++o)
      for (std::size_t a = 0; a < od; ++a)
        for (std::size_t bb = 0; bb < oh; ++bb)
          for (std::size_t c = 0; c < ow; ++c) {
            double acc = b[o];
            for (std::size_t i = 0; i < x.c(); ++i)
              for (std::size_t p = 0; p < k.shape[2]; ++p)
                for (std::size_t q = 0; q < k.shape[3]; ++q)
                  for (std::size_t r = 0; r < k.shape[4]; ++r) {
                    const long zd = static_cast<long>(a * st[0] + p) - static_cast<long>(pd[0]);
                    const long zh = static_cast<long>(bb * st[1] + q) - static_cast<long>(pd[1]);
                    const long zw = static_cast<long>(c * st[2] + r) - static_cast<long>(pd[2]);
                    if (zd < 0 || zh < 0 || zw < 0 || zd >= static_cast<long>(x.d()) ||
                        zh >= static_cast<long>(x.h()) || zw >= static_cast<long>(x.w()))
                      continue;
                    acc += k(o, i, p, q, r) * x(n, i, static_cast<std::size_t>(zd), static_cast<std::size_t>(zh),
                                                static_cast<std::size_t>(zw));
                  }
            y(n, o, a, bb, c) = acc;
          }
  return y;
}

T64 naive_pool(const T64& x, Dims3 win, Dims3 st) {
  T64 y({x.n(), x.c(), (x.d() - win[0]) / st[0] + 1, (x.h() - win[1]) / st[1] + 1, (x.w() - win[2]) / st[2] + 1});
  for (std::size_t n = 0; n < y.n(); ++n)
    for (std::size_t c = 0; c < y.c(); ++c)
      for (std::size_t a = 0; a < y.d(); ++a)
        for (std::size_t b = 0; b < y.h(); ++b)
          for (std::size_t e = 0; e < y.w(); ++e) {
            double m = -INFINITY;
            for (std::size_t p = 0; p < win[0]; ++p)
              for (std::size_t q = 0; q < win[1]; ++q)
                for (std::size_t r = 0; r < win[2]; ++r)
                  m = std::max(m, x(n, c, a * st[0] + p, b * st[1] + q, e * st[2] + r));
            y(n, c, a, b, e) = m;
          }
  return y;
}

Outcome conv_pool_oracles() {
  std::mt19937_64 rng(2);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  double worst = 0.0;
  const int cases = 100;
  for (int t = 0; t < cases; ++t) {
    const Shape5 xs{pick(1, 3), pick(1, 3), pick(3, 7), pick(3, 7), pick(3, 7)};
    const T64 x = random_tensor(xs, rng);
    const Dims3 kd{pick(1, 3), pick(1, 3), pick(1, 3)}, st{pick(1, 2), pick(1, 2), pick(1, 2)}, pd{pick(0, 1), pick(0, 1), pick(0, 1)};
    const T64 k = random_tensor({pick(1, 4), xs[1], kd[0], kd[1], kd[2]}, rng), b = random_tensor({k.shape[0], 1, 1, 1, 1}, rng);
    const T64 y = conv3d_forward(x, k, b, st, pd), o = naive_conv(x, k, b, st, pd);
    if (y.shape != o.shape) return {false, "conv shape mismatch in case " + std::to_string(t)};
    for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - o[i]));
    const Dims3 win{pick(1, 3), pick(1, 3), pick(1, 3)}, pst{pick(1, 3), pick(1, 3), pick(1, 3)};
    const T64 py = maxpool3d_forward(x, win, pst).y, po = naive_pool(x, win, pst);
    if (py.shape != po.shape) return {false, "pool shape mismatch in case " + std::to_string(t)};
    for (std::size_t i = 0; i < py.size(); ++i) worst = std::max(worst, std::abs(py[i] - po[i]));
  }
  return {worst <= 1e-10, std::to_string(cases) + " conv + " + std::to_string(cases) + " pool cases, max abs diff " +
                              sci(worst) + " <= 1e-10"};
}

// ---------------------------------------------------------------------------
// 3

Outcome auc_oracle() {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng() % 199;
    std::vector<double> s(n);
    std::vector<int> y(n);
    const int levels = 1 + static_cast<int>(rng() % 20);  // coarse scores force ties
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      s[i] = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
    }
    y[0] = 0;
    y[1] = 1;
    double pairs = 0.0, wins = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    worst = std::max(worst, std::abs(metrics::roc_auc(s, y).auc - wins / pairs));
  }
  return {worst <= 1e-12, "1000 cases, max |trapezoid - pair count| " + sci(worst) + " <= 1e-12"};
}

// ---------------------------------------------------------------------------
// 4

Outcome metric_replay() {
  using metrics::ConfusionMatrix;
  const auto bin = metrics::precision_recall_f1(ConfusionMatrix::from_rows({{167, 8}, {87, 848}}));
  const auto four = metrics::precision_recall_f1(
      ConfusionMatrix::from_rows({{188, 67, 3, 2}, {62, 580, 29, 13}, {3, 22, 86, 1}, {1, 15, 7, 31}}));
  const std::vector<std::pair<double, double>> checks{
      {100 * bin.per_class[0].recall, 65.75},  {100 * bin.per_class[1].recall, 99.06},
      {100 * four.per_class[0].recall, 74.02}, {100 * four.per_class[1].recall, 84.80},
      {100 * four.per_class[2].recall, 68.80}, {100 * four.per_class[3].recall, 65.95}};
  bool ok = true;
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& [got, want] : checks) {
    ok = ok && std::abs(got - want) <= 0.01;
    os << got << " ";
  }
  return {ok, "recalls % " + os.str() + "all within 0.01 of 65.75 99.06 | 74.02 84.80 68.80 65.95"};
}

// ---------------------------------------------------------------------------
// 5

Outcome segmentation_phantom() {
  const auto chest = phantom::make_chest(phantom::large_chest_spec());
  const Mask m = seg::segment_lung(chest.volume);
  const double d = seg::dice(m, chest.lungs);
  const std::size_t comps = seg::label_components(m, seg::Connectivity::TwentySix).count();
  const bool hole_free = seg::fill_holes(m) == m;
  std::ostringstream os;
  os.precision(4);
  os << "dice " << d << " >= 0.95, components " << comps << " <= 2, hole-free " << (hole_free ? "yes" : "no");
  return {d >= 0.95 && comps <= 2 && hole_free, os.str()};
}

// ---------------------------------------------------------------------------
// 6

Outcome patch_count_law() {
  const long per_scan[6] = {64, 32, 16, 8, 4, 1};
  bool ok = true;
  std::ostringstream os;
  // origin draws over 1110 scans with varied lung boxes
  std::mt19937_64 rng(6);
  std::vector<patch::BoundingBox> boxes;
  for (int i = 0; i < 1110; ++i) {
    const std::size_t r0 = 40 + rng() % 120, c0 = 40 + rng() % 120;
    boxes.push_back({r0, r0 + 150 + rng() % 150, c0, c0 + 150 + rng() % 150});
  }
  for (int l = 1; l <= 6; ++l) {
    long total = 0;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      total += static_cast<long>(patch::draw_origins(patch::kStandardGrid, boxes[i], patch::PatchSpec::standard(l), i).size());
    ok = ok && total == 1110 * per_scan[l - 1];
    os << total << (l < 6 ? "/" : "");
  }
  // emitted tensors from standardized phantom scans
  long emitted_ok = 0;
  for (int scan = 0; scan < 2; ++scan) {
    auto spec = fixtures::scan_spec({96, 96, 24}, scan ? "MiNCP" : "NOR", 60 + static_cast<std::uint64_t>(scan), "p");
    const auto chest = phantom::make_chest(spec);
    const Volume st = patch::standardize_volume(chest.volume, chest.lungs);
    const Mask mask = patch::resample_mask(chest.lungs, patch::kStandardGrid);
    for (int l = 1; l <= 6; ++l) {
      const auto ps = patch::PatchSpec::standard(l);
      const auto samples = patch::extract_patches(st, mask, ps, static_cast<std::uint64_t>(scan));
      const bool good = static_cast<long>(samples.size()) == per_scan[l - 1] &&
                        std::all_of(samples.begin(), samples.end(), [&](const auto& s) { return s.tensor.shape() == ps.shape; });
      emitted_ok += good;
    }
  }
  ok = ok && emitted_ok == 12;
  return {ok, "1110 scans -> " + os.str() + " (expect 71040/35520/17760/8880/4440/1110); " +
                  std::to_string(emitted_ok) + "/12 phantom extractions exact"};
}

// ---------------------------------------------------------------------------
// 7

Outcome class_weight_checks() {
  const auto w = rebalance::class_weights({254, 856}, rebalance::WeightMode::PaperFormula).weights;
  const bool formula_ok = std::abs(w[0] - 0.2288) <= 1e-4 && std::abs(w[1] - 0.7712) <= 1e-4;
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t B = 1 + rng() % 32, K = 2 + rng() % 4;
    T64 logits = random_tensor({B, K, 1, 1, 1}, rng, -3.0, 3.0);
    const T64 p = softmax_forward(logits);
    std::vector<int> y(B);
    std::vector<std::uint64_t> counts(K, 1);
    for (auto& v : y) {
      v = static_cast<int>(rng() % K);
      ++counts[static_cast<std::size_t>(v)];
    }
    const auto uw = rebalance::class_weights(counts, rebalance::WeightMode::Uniform).weights;
    double plain = 0.0;
    for (std::size_t i = 0; i < B; ++i) plain -= std::log(p[i * K + static_cast<std::size_t>(y[i])]);
    plain /= static_cast<double>(B);
    worst = std::max(worst, std::abs(train::weighted_cross_entropy(p, y, uw).loss - plain));
  }
  std::ostringstream os;
  os.precision(6);
  os << "paper_formula (" << w[0] << ", " << w[1] << ") vs (0.2288, 0.7712) +-1e-4; uniform vs unweighted max diff "
     << sci(worst) << " <= 1e-12";
  return {formula_ok && worst <= 1e-12, os.str()};
}

// ---------------------------------------------------------------------------
// 8

std::vector<patch::Sample> blobs(std::size_t n, Shape3 shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.08f);
  std::vector<patch::Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    Grid3<float> g(shape);
    for (auto& v : g.data()) v = std::clamp((label ? 0.65f : 0.35f) + noise(rng), 0.0f, 1.0f);
    out.push_back({std::move(g), label, "blob" + std::to_string(i), 0, {0, 0, 0}});
  }
  return out;
}

Outcome overfit_sanity() {
  const auto data = blobs(40, {8, 8, 4}, 8);
  ModelSpec s;
  s.input_shape = train::input_shape_of({8, 8, 4});
  s.class_count = 2;
  s.layers = {LayerSpec::conv3d(4), LayerSpec::simple(LayerKind::Relu), LayerSpec::maxpool3d({2, 2, 2}),
              LayerSpec::batchnorm3d(), LayerSpec::simple(LayerKind::Gap), LayerSpec::dense(2),
              LayerSpec::simple(LayerKind::Softmax)};
  train::TrainConfig cfg;
  cfg.lr0 = 1e-2;
  cfg.batch_size = 8;
  cfg.max_epochs = 200;
  cfg.patience = 199;
  cfg.seed = 8;
  int first_full = -1;
  // validation set = training set, scored in infer mode after every epoch
  const auto r = train::fit(s, init_weights<float>(s, 8), data, data, cfg, nullptr, [&](const train::EpochRecord& e) {
    if (first_full < 0 && e.val_accuracy == 1.0) first_full = e.epoch;
  });
  const double final_acc = train::evaluate_probs(train::predict_proba(s, r.weights, data), train::labels_of(data), 2).accuracy;
  return {first_full >= 0 && final_acc == 1.0, "training accuracy 100% first at epoch " + std::to_string(first_full) +
                                                    " of 200; restored weights " + std::to_string(final_acc)};
}

// ---------------------------------------------------------------------------
// 9

Outcome progressive_direction() {
  const std::size_t n = 200;
  const Shape3 grid{32, 32, 32};
  const std::vector<patch::PatchSpec> ladder{patch::PatchSpec::custom({8, 8, 8}, 8), patch::PatchSpec::custom({16, 16, 16}, 4),
                                             patch::PatchSpec::custom(grid, 1)};
  patch::StandardizeParams sp;
  sp.target = grid;
  std::vector<int> labels(n);
  std::vector<std::vector<std::vector<patch::Sample>>> per_scan(ladder.size(), std::vector<std::vector<patch::Sample>>(n));
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % 2);
    const auto chest = phantom::make_chest(fixtures::scan_spec({64, 64, 32}, labels[i] ? "MiNCP" : "NOR", 9000 + i,
                                                               "scan" + std::to_string(i)));
    const Mask lung = seg::segment_lung(chest.volume);
    const Volume st = patch::standardize_volume(chest.volume, lung, sp);
    const Mask m = patch::resample_mask(lung, grid);
    for (std::size_t l = 0; l < ladder.size(); ++l)
      per_scan[l][i] = patch::extract_patches(st, m, ladder[l], derive_seed(9, {i}), labels[i]);
  }
  const auto folds = metrics::kfold_split(labels, 5, 9, true);
  std::vector<train::LevelData> levels;
  for (std::size_t l = 0; l < ladder.size(); ++l) {
    train::LevelData d{ladder[l], {}, {}};
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& s : per_scan[l][i]) (folds[i] == 0 ? d.val : d.train).push_back(s);
    levels.push_back(std::move(d));
  }
  train::TrainConfig cfg;
  cfg.lr0 = 1e-3;
  cfg.max_epochs = 20;
  cfg.patience = 6;
  cfg.batch_size = 16;
  cfg.seed = 9;

  const ModelSpec base = reference_spec(train::input_shape_of(ladder[0].shape), 2, 2, 4, 8, 0.25);
  const auto prog = train::progressive_fit<float>(base, levels, cfg);

  // transfer: the enlarged model carries the smaller rung's tensors bit for bit
  bool exact = true;
  for (std::size_t l = 0; l + 1 < ladder.size(); ++l) {
    const auto& small = prog.levels[l];
    const auto big = train::build_progressive(small.spec, small.weights, train::input_shape_of(ladder[l + 1].shape));
    const std::size_t stem = big.spec.layers.size() - small.spec.layers.size();
    exact = exact && stem == 3 && prog.levels[l + 1].spec.layers.size() == big.spec.layers.size();
    for (std::size_t j = 0; j < small.weights.layers.size(); ++j)
      for (std::size_t p = 0; p < small.weights.layers[j].size(); ++p) {
        const auto& a = small.weights.layers[j][p].value.data;
        const auto& b = big.weights.layers[stem + j][p].value.data;
        exact = exact && a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
      }
  }

  const ModelSpec single = reference_spec(train::input_shape_of(grid), 2, 2, 4, 8, 0.25);
  const auto baseline = train::fit(single, init_weights<float>(single, derive_seed(cfg.seed, {0x696e6974ULL})),
                                   levels.back().train, levels.back().val, cfg);

  const auto& val = levels.back().val;
  auto auc_of = [&](const ModelSpec& s, const Weights<float>& w) {
    const auto p = train::predict_proba(s, w, val);
    std::vector<double> score;
    for (std::size_t i = 0; i < val.size(); ++i) score.push_back(p[i * 2 + 1]);
    return metrics::roc_auc(score, train::labels_of(val)).auc;
  };
  const double ladder_auc = auc_of(prog.final_model().spec, prog.final_model().weights);
  const double base_auc = auc_of(single, baseline.weights);
  std::ostringstream os;
  os.precision(4);
  os << "transfer " << (exact ? "bit-exact" : "MISMATCH") << "; val AUC ladder " << ladder_auc << " >= single-level "
     << base_auc << " (" << val.size() << " val scans)";
  return {exact && ladder_auc >= base_auc, os.str()};
}

// ---------------------------------------------------------------------------
// 10

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CTSCREEN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "ctscreen_acceptance_determinism";
  fs::remove_all(root);
  const auto ds = fixtures::write_dataset(root / "scans", fixtures::binary_labels(10), {64, 64, 20}, 10);
  write_text_atomic(root / "config.txt",
                    "patch.grid = 32x32x16\npatch.levels = 8x8x4:8,16x16x8:4,32x32x16:1\nmodel.blocks = 2\n"
                    "model.base_channels = 4\nmodel.dense_units = 8\ntrain.max_epochs = 4\ntrain.patience = 2\n"
                    "train.batch_size = 8\n");
  const std::string common = " --config " + (root / "config.txt").string() + " --seed 10 --deterministic";
  for (const char* run : {"a", "b"}) {
    const fs::path o = root / run;
    const std::string m = " --manifest " + ds.manifest.string();
    const std::string steps[] = {
        "segment" + common + m + " --out " + (o / "masks").string(),
        "patch" + common + m + " --masks " + (o / "masks").string() + " --out " + (o / "packs").string(),
        "train" + common + " --packs " + (o / "packs").string() + " --out " + (o / "train").string(),
        "eval" + common + m + " --checkpoint " + (o / "train" / "final.ckpt").string() + " --out " + (o / "eval").string()};
    for (const auto& s : steps)
      if (run_cli(s, root / "log.txt") != 0) return {false, "command failed: " + s};
  }
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path twin = root / "b" / fs::relative(e.path(), root / "a");
    same += fs::exists(twin) && read_file(e.path()) == read_file(twin);
  }
  fs::remove_all(root);
  return {files > 0 && same == files,
          std::to_string(same) + "/" + std::to_string(files) + " artifacts byte-identical across segment/patch/train/eval"};
}

// ---------------------------------------------------------------------------
// 11

template <typename T>
bool nifti_round_trip(bool gz, std::mt19937_64& rng, const fs::path& dir) {
  Grid3<T> g({9, 7, 5});
  for (auto& v : g.data()) {
    if constexpr (std::is_floating_point_v<T>) v = std::uniform_real_distribution<T>(-3000, 3000)(rng);
    else v = static_cast<T>(rng());
  }
  Bytes b = nifti::encode_values(g, nifti::make_header(g.shape(), nifti::datatype_of<T>(), {0.7, 0.7, 5.0}));
  if (gz) b = gzip(b);
  const fs::path p = dir / (std::string("v") + std::to_string(sizeof(T)) + (gz ? ".nii.gz" : ".nii"));
  write_file_atomic(p, b);
  const Grid3<T> back = nifti::stored_values<T>(nifti::read_image_file(p));
  return back.shape() == g.shape() && std::memcmp(back.data().data(), g.data().data(), g.size() * sizeof(T)) == 0;
}

Outcome nifti_checks() {
  const fs::path dir = fs::temp_directory_path() / "ctscreen_acceptance_nifti";
  fs::create_directories(dir);
  std::mt19937_64 rng(11);
  int good = 0;
  for (bool gz : {false, true}) {
    good += nifti_round_trip<std::uint8_t>(gz, rng, dir);
    good += nifti_round_trip<std::int16_t>(gz, rng, dir);
    good += nifti_round_trip<std::uint16_t>(gz, rng, dir);
    good += nifti_round_trip<std::int32_t>(gz, rng, dir);
    good += nifti_round_trip<float>(gz, rng, dir);
  }
  fs::remove_all(dir);
  return {good == 10, std::to_string(good) + "/10 (5 datatypes x plain/gzip) bit-exact"};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0: no runtime bound
  std::function<Outcome()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", 60, gradient_checks},
      {2, "conv/pool oracle equivalence", 10, conv_pool_oracles},
      {3, "AUC oracle", 10, auc_oracle},
      {4, "confusion-count metric replay", 1, metric_replay},
      {5, "segmentation phantom", 30, segmentation_phantom},
      {6, "patch-count law", 0, patch_count_law},
      {7, "class weights", 0, class_weight_checks},
      {8, "overfit sanity", 300, overfit_sanity},
      {9, "progressive resizing smoke + direction", 900, progressive_direction},
      {10, "CLI determinism", 0, cli_determinism},
      {11, "NIfTI round trip", 5, nifti_checks}};
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.limit_s <= 0 || secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    char timing[64];
    if (c.limit_s > 0) std::snprintf(timing, sizeof timing, "%.2fs < %.0fs%s", secs, c.limit_s, in_time ? "" : " EXCEEDED");
    else std::snprintf(timing, sizeof timing, "%.2fs", secs);
    std::cout << (pass ? "PASS" : "FAIL") << "  " << std::setw(2) << c.id << "  " << std::left << std::setw(40) << c.name
              << std::right << o.detail << "  [" << timing << "]" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
