// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Oracles here are written independently of
// the library code they check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fmwiss/benchmark.hpp"
#include "fmwiss/distill.hpp"
#include "fmwiss/eval_protocol.hpp"
#include "fmwiss/losses.hpp"
#include "fmwiss/memory_paste.hpp"
#include "fmwiss/plane_format.hpp"
#include "fmwiss/teacher.hpp"

using namespace fmwiss;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double urand(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int irand(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Tensor random_tensor(Rng& rng, int c, int h, int w, double lo, double hi) {
  Tensor t(c, h, w);
  for (double& v : t.data()) v = urand(rng, lo, hi);
  return t;
}

// ---- oracles ---------------------------------------------------------------

double oracle_bce(const std::vector<double>& p, const std::vector<double>& t) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double q = std::min(std::max(p[k], 1e-7), 1.0 - 1e-7);
    s += t[k] * std::log(q) + (1.0 - t[k]) * std::log(1.0 - q);
  }
  return -s / static_cast<double>(p.size());
}

std::vector<double> flat(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double oracle_dcl(const std::vector<ClassId>& cls, const std::vector<std::vector<double>>& emb, double tau) {
  double total = 0.0;
  int counted = 0;
  for (std::size_t i = 0; i < cls.size(); ++i) {
    double neg = 0.0;
    for (std::size_t k = 0; k < cls.size(); ++k) {
      if (cls[k] != cls[i]) neg += std::exp(dot(emb[i], emb[k]) / tau);
    }
    double sum = 0.0;
    int positives = 0;
    for (std::size_t k = 0; k < cls.size(); ++k) {
      if (k == i || cls[k] != cls[i]) continue;
      const double e = std::exp(dot(emb[i], emb[k]) / tau);
      sum += -std::log(e / (e + neg));
      ++positives;
    }
    if (positives == 0) continue;
    total += sum / positives;
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

ContrastBatch make_batch(const std::vector<ClassId>& cls, const std::vector<std::vector<double>>& emb) {
  ContrastBatch b;
  for (std::size_t k = 0; k < cls.size(); ++k) {
    b.anchors.push_back({0, static_cast<int>(k), cls[k], emb[k]});
  }
  return b;
}

PseudoLabelSet pseudo_from(const Tensor& targets, const std::vector<ClassId>& classes, Rng& rng) {
  PseudoLabelSet pls;
  pls.image_id = "x";
  pls.height = targets.height();
  pls.width = targets.width();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    // Some classes carry no plane at all and must read as all-zero targets.
    if (urand(rng, 0, 1) < 0.2) continue;
    Mask m(pls.height, pls.width);
    for (std::size_t p = 0; p < m.bits.size(); ++p) m.bits[p] = targets.plane(static_cast<int>(c))[p] > 0.5;
    pls.masks[classes[c]] = m;
  }
  return pls;
}

std::vector<double> pseudo_oracle_targets(const PseudoLabelSet& pls, const std::vector<ClassId>& classes) {
  std::vector<double> t;
  for (ClassId c : classes) {
    auto it = pls.masks.find(c);
    for (int p = 0; p < pls.height * pls.width; ++p) {
      t.push_back(it == pls.masks.end() ? 0.0 : static_cast<double>(it->second.bits[p]));
    }
  }
  return t;
}

// ---- criteria --------------------------------------------------------------

void check_loss_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  int instances = 0;
  double worst = 0.0;
  for (int n = 0; n < 150; ++n) {
    const int c = irand(rng, 1, 4), h = irand(rng, 1, 4), w = irand(rng, 1, 4);
    const Tensor p = random_tensor(rng, c, h, w, 0.0, 1.0);
    const Tensor t = random_tensor(rng, c, h, w, 0.0, 1.0);
    worst = std::max(worst, std::abs(loss_bce_old(p, t) - oracle_bce(flat(p), flat(t))));
    worst = std::max(worst, std::abs(loss_bce_all(p, t) - oracle_bce(flat(p), flat(t))));

    std::vector<ClassId> classes;
    for (int k = 0; k < c; ++k) classes.push_back(static_cast<ClassId>(10 + k));
    const PseudoLabelSet pls = pseudo_from(t, classes, rng);
    worst = std::max(worst, std::abs(loss_bce_new(p, pls, classes) -
                                     oracle_bce(flat(p), pseudo_oracle_targets(pls, classes))));

    const int anchors = irand(rng, 1, 16);
    std::vector<ClassId> cls;
    std::vector<std::vector<double>> emb;
    for (int a = 0; a < anchors; ++a) {
      cls.push_back(static_cast<ClassId>(irand(rng, 1, 3)));
      std::vector<double> e(4);
      for (double& v : e) v = urand(rng, -1, 1);
      const double norm = std::sqrt(dot(e, e));
      for (double& v : e) v /= norm;
      emb.push_back(e);
    }
    worst = std::max(worst, std::abs(loss_dcl(make_batch(cls, emb), 0.1) - oracle_dcl(cls, emb, 0.1)));
    ++instances;
  }
  const double secs = seconds_since(t0);
  report(worst <= 1e-6 && instances >= 100 && secs < 10.0, "loss oracle equivalence",
         fmt("%.0f instances x 4 losses, max |diff| %.2e (tol 1e-6), %.3f s (limit 10 s)", instances, worst, secs));
}

// Largest relative disagreement between analytic and central-difference
// gradients; exact zeros on both sides count as agreement.
double grad_gap(const std::vector<double>& analytic, std::vector<double> x,
                const std::function<double(const std::vector<double>&)>& f) {
  const double h = 1e-4;
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const double up = f(x);
    x[k] = x0 - h;
    const double down = f(x);
    x[k] = x0;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max(std::abs(analytic[k]), std::abs(numeric));
    if (scale == 0.0) continue;
    worst = std::max(worst, std::abs(analytic[k] - numeric) / scale);
  }
  return worst;
}

Tensor from_flat(const std::vector<double>& v, int c, int h, int w) {
  Tensor t(c, h, w);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

void check_gradients() {
  Rng rng(202);
  double worst_new = 0, worst_old = 0, worst_all = 0, worst_dcl = 0;
  for (int n = 0; n < 20; ++n) {
    const int c = 3, h = 2, w = 2;
    // Keep probabilities away from the clamp so the loss is smooth.
    const Tensor p = random_tensor(rng, c, h, w, 0.05, 0.95);
    const Tensor t = random_tensor(rng, c, h, w, 0.0, 1.0);
    Tensor g;
    loss_bce_old(p, t, &g);
    worst_old = std::max(worst_old, grad_gap(flat(g), flat(p), [&](const std::vector<double>& x) {
                           return loss_bce_old(from_flat(x, c, h, w), t);
                         }));
    loss_bce_all(p, t, &g);
    worst_all = std::max(worst_all, grad_gap(flat(g), flat(p), [&](const std::vector<double>& x) {
                           return loss_bce_all(from_flat(x, c, h, w), t);
                         }));
    const std::vector<ClassId> classes{5, 6, 7};
    const PseudoLabelSet pls = pseudo_from(t, classes, rng);
    loss_bce_new(p, pls, classes, &g);
    worst_new = std::max(worst_new, grad_gap(flat(g), flat(p), [&](const std::vector<double>& x) {
                           return loss_bce_new(from_flat(x, c, h, w), pls, classes);
                         }));

    // Four anchors from a 2x2 grid, two classes.
    const std::vector<ClassId> cls{1, 1, 2, 2};
    std::vector<std::vector<double>> emb(4, std::vector<double>(3));
    for (auto& e : emb) {
      for (double& v : e) v = urand(rng, -0.6, 0.6);
    }
    std::vector<std::vector<double>> grads;
    loss_dcl(make_batch(cls, emb), 0.1, &grads);
    std::vector<double> analytic, x;
    for (std::size_t a = 0; a < emb.size(); ++a) {
      analytic.insert(analytic.end(), grads[a].begin(), grads[a].end());
      x.insert(x.end(), emb[a].begin(), emb[a].end());
    }
    worst_dcl = std::max(worst_dcl, grad_gap(analytic, x, [&](const std::vector<double>& v) {
                           std::vector<std::vector<double>> e(4);
                           for (int a = 0; a < 4; ++a) e[a].assign(v.begin() + 3 * a, v.begin() + 3 * a + 3);
                           return loss_dcl(make_batch(cls, e), 0.1);
                         }));
  }
  const double worst = std::max({worst_new, worst_old, worst_all, worst_dcl});
  report(worst <= 1e-4, "gradient checks",
         fmt("max relative gap new %.1e, old %.1e, all %.1e, ", worst_new, worst_old, worst_all) +
             fmt("dcl %.1e (h 1e-4, tol 1e-4)", worst_dcl));
}

void check_binarization() {
  Rng rng(303);
  int cases = 0;
  int bad = 0;
  for (int h = 1; h <= 8; ++h) {
    for (int w = 1; w <= 8; ++w) {
      for (int k : {1, 50, 70, 100}) {
        // Few distinct values so that ties are common.
        std::vector<double> v(static_cast<std::size_t>(h * w));
        for (double& x : v) x = irand(rng, 0, 4);
        const Mask m = binarize_topk(v, h, w, k);
        const std::size_t want = static_cast<std::size_t>((k * h * w + 99) / 100);
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
        std::vector<std::uint8_t> expect(v.size(), 0);
        for (std::size_t i = 0; i < want; ++i) expect[order[i]] = 1;
        if (m.popcount() != want || m.bits != expect) ++bad;
        ++cases;
      }
    }
  }
  report(bad == 0, "binarization exactness",
         fmt("%.0f of %.0f (h,w,K) cases match ceil(K/100*h*w) and the row-major tie order", cases - bad, cases));
}

void check_dcl_closed_form() {
  const std::vector<ClassId> cls{1, 1, 2};
  const std::vector<std::vector<double>> emb{{1, 0}, {1, 0}, {0, 1}};
  const double got = loss_dcl(make_batch(cls, emb), 0.1);
  const double want = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
  const std::vector<ClassId> same{4, 4, 4};
  const std::vector<std::vector<double>> emb2{{1, 0}, {0.6, 0.8}, {0, 1}};
  const double zero = loss_dcl(make_batch(same, emb2), 0.1);
  report(std::abs(got - want) <= 1e-9 && zero == 0.0, "DCL closed form",
         fmt("one pos/one neg %.12e vs %.12e; no negatives -> %g", got, want, zero));
}

void check_mixing() {
  const Taxonomy tax = build_taxonomy({1}, {{2}});
  // Channels: background, 1 (old), 2 (new).
  Tensor teacher(3, 1, 1);
  teacher.at(0, 0, 0) = 0.05;
  teacher.at(1, 0, 0) = 0.2;
  teacher.at(2, 0, 0) = 0.8;
  Tensor old(2, 1, 1);
  old.at(0, 0, 0) = 0.3;
  old.at(1, 0, 0) = 0.6;
  const Tensor q = combine_supervision(teacher, old, tax, 1, 0.5, 0.9);
  const double q_new = q.at(2, 0, 0);
  const double q_old = q.at(1, 0, 0);
  bool hand = std::abs(q_new - 0.9) <= 1e-9 && std::abs(q_old - 0.56) <= 1e-9;

  Rng rng(404);
  bool in_range = true;
  const Taxonomy tax3 = build_taxonomy({1, 2}, {{3, 4}, {5}});
  for (int n = 0; n < 500; ++n) {
    const int step = irand(rng, 1, 2);
    const int seen = static_cast<int>(channel_classes(tax3, step).size());
    const int prev = static_cast<int>(channel_classes(tax3, step - 1).size());
    const int h = irand(rng, 1, 4), w = irand(rng, 1, 4);
    const Tensor t = random_tensor(rng, seen, h, w, 0.0, 1.0);
    const Tensor o = random_tensor(rng, prev, h, w, 0.0, 1.0);
    const Tensor out = combine_supervision(t, o, tax3, step, urand(rng, 0, 1), urand(rng, 0, 1), n % 2 == 0);
    for (double v : out.data()) in_range = in_range && v >= 0.0 && v <= 1.0;
  }
  report(hand && in_range, "supervision mixing",
         fmt("alpha case %.12f (want 0.9), beta case %.12f (want 0.56), ", q_new, q_old) +
             std::string("fuzzed outputs in [0,1]: ") + (in_range ? "yes" : "no"));
}

InstanceCrop random_crop(Rng& rng, ClassId id) {
  InstanceCrop c;
  c.class_id = id;
  c.height = irand(rng, 1, 5);
  c.width = irand(rng, 1, 5);
  c.rgb.resize(static_cast<std::size_t>(c.height * c.width * 3));
  for (auto& b : c.rgb) b = static_cast<std::uint8_t>(irand(rng, 0, 255));
  c.mask = Mask(c.height, c.width, 1);
  return c;
}

void check_bank_fifo() {
  Rng rng(505);
  bool ok = true;
  std::string detail;
  for (std::size_t b : {1u, 10u, 50u}) {
    const std::vector<ClassId> classes{1, 2, 3};
    MemoryBank bank(b, {classes.begin(), classes.end()});
    std::map<ClassId, std::vector<InstanceCrop>> history;
    std::vector<ClassId> order;
    for (ClassId c : classes) order.insert(order.end(), 10 * b, c);
    std::shuffle(order.begin(), order.end(), rng);
    for (ClassId c : order) {
      InstanceCrop crop = random_crop(rng, c);
      history[c].push_back(crop);
      bank_insert(bank, crop);
    }
    for (ClassId c : classes) {
      const auto& archive = bank.archives().at(c);
      const std::vector<InstanceCrop> tail(history[c].end() - static_cast<long>(b), history[c].end());
      ok = ok && archive.size() == b && std::vector<InstanceCrop>(archive.begin(), archive.end()) == tail;
    }
    detail += "B=" + std::to_string(b) + " ";
  }
  report(ok, "memory bank FIFO", detail + "(10*B inserts per class, 3 classes)");
}

void check_miou() {
  Rng rng(606);
  double worst = 0.0;
  bool defined_match = true;
  for (int n = 0; n < 50; ++n) {
    const int classes = irand(rng, 1, 5);  // ids 0 .. classes-1, 0 is background
    LabelMap gt(8, 8), pred(8, 8);
    for (auto& v : gt.ids) v = static_cast<ClassId>(irand(rng, 0, classes - 1));
    for (auto& v : pred.ids) v = static_cast<ClassId>(irand(rng, 0, classes - 1));
    std::vector<ClassId> fg;
    for (int c = 1; c < classes; ++c) fg.push_back(static_cast<ClassId>(c));
    ConfusionMatrix cm(fg);
    confusion_update(cm, gt, pred);
    std::set<ClassId> all{0};
    all.insert(fg.begin(), fg.end());
    const MiouReport rep = miou(cm, {{"all", all}});

    double sum = 0.0;
    int count = 0;
    for (ClassId c : all) {
      std::set<int> in_gt, in_pred;
      for (int p = 0; p < 64; ++p) {
        if (gt.ids[p] == c) in_gt.insert(p);
        if (pred.ids[p] == c) in_pred.insert(p);
      }
      std::set<int> inter, uni;
      std::set_intersection(in_gt.begin(), in_gt.end(), in_pred.begin(), in_pred.end(),
                            std::inserter(inter, inter.begin()));
      std::set_union(in_gt.begin(), in_gt.end(), in_pred.begin(), in_pred.end(),
                     std::inserter(uni, uni.begin()));
      if (uni.empty()) {
        defined_match = defined_match && !rep.at("all").per_class.count(c);
        continue;
      }
      const double iou = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
      const auto it = rep.at("all").per_class.find(c);
      if (it == rep.at("all").per_class.end()) {
        defined_match = false;
        continue;
      }
      worst = std::max(worst, std::abs(it->second - iou));
      sum += iou;
      ++count;
    }
    if (count > 0) worst = std::max(worst, std::abs(*rep.at("all").mean - sum / count));
  }
  report(worst <= 1e-9 && defined_match, "mIoU oracle",
         fmt("50 random 8x8 pairs, max |diff| %.2e (tol 1e-9)", worst));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

void check_end_to_end() {
  const BenchmarkConfig cfg = default_benchmark_config();
  const auto t0 = std::chrono::steady_clock::now();
  const BenchmarkBase base = prepare_benchmark(cfg);
  const BenchmarkOutcome first = run_benchmark_step(base, cfg);
  const double secs = seconds_since(t0);
  const BenchmarkBase base2 = prepare_benchmark(cfg);
  const BenchmarkOutcome second = run_benchmark_step(base2, cfg);

  const int images = cfg.counts.base_images + cfg.counts.step_images + cfg.counts.val_images;
  report(first.new_iou >= 0.5, "end-to-end new-class IoU",
         fmt("%.4f (need >= 0.50); %.0f images, %.0f epochs, pseudo-label IoU %.4f", first.new_iou, images,
             cfg.train.epochs, first.pseudo_iou));
  const double rel = (first.base_before - first.base_after) / first.base_before;
  report(rel <= 0.10, "end-to-end base retention",
         fmt("base mIoU %.4f -> %.4f, relative drop %.2f%% (limit 10%%)", first.base_before, first.base_after,
             100 * rel));
  report(secs < 300.0, "end-to-end runtime", fmt("%.1f s single-threaded (limit 300 s)", secs));
  const bool same = first.student_digest == second.student_digest && first.confusion == second.confusion &&
                    metrics_jsonl(first.log) == metrics_jsonl(second.log);
  char digest[64];
  std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(first.student_digest));
  report(same, "end-to-end reproducibility",
         std::string("student checkpoint digest ") + digest + (same ? " identical" : " differs") +
             " across two runs, metrics and confusion " + (same ? "identical" : "compared"));
}

void check_ablations() {
  std::vector<double> new_union, new_none, new_lambda, new_nolambda, base_bank, base_nobank;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    BenchmarkConfig cfg = default_benchmark_config();
    cfg.train.seed = seed;
    const BenchmarkBase base = prepare_benchmark(cfg);
    const BenchmarkOutcome dflt = run_benchmark_step(base, cfg);
    new_union.push_back(dflt.new_iou);
    new_lambda.push_back(dflt.new_iou);
    base_bank.push_back(dflt.base_after);

    BenchmarkConfig none = cfg;
    none.fusion = FusionOp::kNone;
    new_none.push_back(run_benchmark_step(base, none).new_iou);

    BenchmarkConfig no_dcl = cfg;
    no_dcl.train.lambda_dcl = 0.0;
    new_nolambda.push_back(run_benchmark_step(base, no_dcl).new_iou);

    BenchmarkConfig no_bank = cfg;
    no_bank.train.bank_capacity = 0;
    BenchmarkBase empty = base;
    empty.base.bank = MemoryBank(0, base.base.bank.old_classes());
    base_nobank.push_back(run_benchmark_step(empty, no_bank).base_after);
    std::printf("  seed %llu: new union %.4f none %.4f | lambda .1 %.4f 0 %.4f | base B50 %.4f B0 %.4f\n",
                static_cast<unsigned long long>(seed), new_union.back(), new_none.back(), new_lambda.back(),
                new_nolambda.back(), base_bank.back(), base_nobank.back());
  }
  const double mu = median(new_union), mn = median(new_none);
  report(mu >= mn, "ablation: mask fusion", fmt("median new IoU union %.4f vs init-only %.4f", mu, mn));
  const double ml = median(new_lambda), m0 = median(new_nolambda);
  report(ml >= m0, "ablation: DCL weight", fmt("median new IoU lambda 0.1 %.4f vs lambda 0 %.4f", ml, m0) +
             std::string(" (one new class per step leaves the contrast term without negatives, so it is 0)"));
  const double mb = median(base_bank), m0b = median(base_nobank);
  report(mb >= m0b, "ablation: memory copy-paste",
         fmt("median base IoU B=50 p=0.5 %.4f vs B=0 %.4f", mb, m0b));
}

bool same_bytes_after_roundtrip(const fs::path& path, const std::function<void(const fs::path&)>& write,
                                const std::function<void(const fs::path&, const fs::path&)>& reread) {
  write(path);
  const fs::path again = path.string() + ".again";
  reread(path, again);
  const bool same = read_file_bytes(path) == read_file_bytes(again);
  fs::remove(path);
  fs::remove(again);
  return same;
}

void check_formats() {
  const fs::path dir = fs::temp_directory_path() / "fmwiss_acceptance";
  fs::create_directories(dir);
  Rng rng(707);

  PseudoLabelSet pls;
  pls.image_id = "img";
  pls.height = 13;
  pls.width = 9;
  pls.source = LabelSource::kFused;
  for (ClassId c : {16, 17, 20}) {
    Mask m(13, 9);
    for (auto& b : m.bits) b = static_cast<std::uint8_t>(irand(rng, 0, 1));
    pls.masks[c] = m;
  }
  const bool mask_ok = same_bytes_after_roundtrip(
      dir / "img.fmwm", [&](const fs::path& p) { write_mask_cache(p, pls); },
      [](const fs::path& a, const fs::path& b) { write_mask_cache(b, read_mask_cache(a)); });

  MemoryBank bank(4, {1, 2});
  for (int k = 0; k < 7; ++k) bank_insert(bank, random_crop(rng, static_cast<ClassId>(1 + k % 2)));
  const bool bank_ok = same_bytes_after_roundtrip(
      dir / "bank.fmwb", [&](const fs::path& p) { save_bank(p, bank); },
      [](const fs::path& a, const fs::path& b) { save_bank(b, load_bank(a, 4)); });

  TeacherConfig tc;
  tc.outputs = 4;
  Rng init = make_stream(1, "init");
  TeacherHead teacher(tc, init);
  const bool teacher_ok = same_bytes_after_roundtrip(
      dir / "t.fmwt", [&](const fs::path& p) { save_teacher(p, teacher); },
      [&](const fs::path& a, const fs::path& b) {
        Rng other = make_stream(2, "init");
        TeacherHead fresh(tc, other);
        load_teacher(a, fresh);
        save_teacher(b, fresh);
      });

  StudentModel student(16, 4, init);
  const bool student_ok = same_bytes_after_roundtrip(
      dir / "s.fmws", [&](const fs::path& p) { save_student(p, student, 0x1234); },
      [&](const fs::path& a, const fs::path& b) {
        Rng other = make_stream(3, "init");
        StudentModel fresh(16, 4, other);
        load_student(a, fresh, 0x1234);
        save_student(b, fresh, 0x1234);
      });
  fs::remove_all(dir);
  auto yn = [](bool b) { return b ? "identical" : "DIFFERENT"; };
  report(mask_ok && bank_ok && teacher_ok && student_ok, "format round-trips",
         std::string("FMWM ") + yn(mask_ok) + ", FMWB " + yn(bank_ok) + ", FMWT " + yn(teacher_ok) + ", FMWS " +
             yn(student_ok));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    check_loss_oracles();
    check_gradients();
    check_binarization();
    check_dcl_closed_form();
    check_mixing();
    check_bank_fifo();
    check_miou();
    check_formats();
    check_end_to_end();
    check_ablations();
  } catch (const std::exception& ex) {
    std::printf("FAIL unexpected exception: %s\n", ex.what());
    return 1;
  }
  std::printf("%d failure(s), %.1f s total\n", g_failures, seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}
