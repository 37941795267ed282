#include "doctest.h"
#include "helpers.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "fmwiss/coseg.hpp"
#include "fmwiss/plane_format.hpp"
#include "fmwiss/synthetic.hpp"

using namespace fmwiss;

namespace {

class FakeVlp final : public VlpBackend {
 public:
  DenseFeatureMap features;
  std::map<std::string, std::vector<double>> prompts;
  int text_calls = 0;

  DenseFeatureMap image_features(const Image&) override { return features; }
  std::vector<double> embed_text(const std::string& prompt) override {
    ++text_calls;
    auto it = prompts.find(prompt);
    if (it == prompts.end()) throw std::runtime_error("unknown prompt " + prompt);
    return it->second;
  }
};

class FakeSsl final : public SslBackend {
 public:
  std::function<AttentionStack(GridPoint)> fn;
  AttentionStack attention(const Image&, GridPoint seed, GridShape) override { return fn(seed); }
};

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

DenseFeatureMap random_features(std::mt19937_64& rng, int d, int h, int w) {
  return {testing::random_tensor(rng, d, h, w, -1.0, 1.0)};
}

Mask random_mask(std::mt19937_64& rng, int h, int w) {
  Mask m(h, w);
  for (auto& b : m.bits) b = static_cast<std::uint8_t>(rng() % 2);
  return m;
}

}  // namespace

TEST_CASE("normalize_features yields unit vectors and keeps direction") {
  DenseFeatureMap f{Tensor(2, 1, 1)};
  f.values.at(0, 0, 0) = 3;
  f.values.at(1, 0, 0) = 4;
  const DenseFeatureMap n = normalize_features(f);
  CHECK(n.values.at(0, 0, 0) == doctest::Approx(0.6));
  CHECK(n.values.at(1, 0, 0) == doctest::Approx(0.8));

  const DenseFeatureMap again = normalize_features(n);
  for (std::size_t k = 0; k < n.values.size(); ++k) {
    CHECK(std::abs(again.values.data()[k] - n.values.data()[k]) < 1e-7);
  }

  std::mt19937_64 rng(1);
  const DenseFeatureMap r = normalize_features(random_features(rng, 8, 4, 4));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int c = 0; c < 8; ++c) s += r.values.at(c, i, j) * r.values.at(c, i, j);
      CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
    }
  }

  DenseFeatureMap zero{Tensor(3, 2, 2, 1.0)};
  for (int c = 0; c < 3; ++c) zero.values.at(c, 1, 0) = 0.0;
  CHECK_ERROR_CODE(normalize_features(zero), ErrorCode::kZeroVector);
}

TEST_CASE("encode_text averages templates then renormalises") {
  FakeVlp vlp;
  vlp.prompts["a {} photo"] = {};
  vlp.prompts["a cat photo"] = {2.0, 0.0, 0.0};
  vlp.prompts["the cat"] = {0.0, 1.0, 1.0};
  vlp.prompts["a dog photo"] = {0.0, 0.0, 5.0};
  const std::map<ClassId, std::string> names{{4, "cat"}, {2, "dog"}};

  const TextEmbeddingMatrix one = encode_text(vlp, {4}, {"a {} photo"}, names);
  REQUIRE(one.rows.size() == 1);
  CHECK(one.rows[0] == std::vector<double>{1.0, 0.0, 0.0});

  const TextEmbeddingMatrix two = encode_text(vlp, {4}, {"a {} photo", "the {}"}, names);
  const std::vector<double> want = unit({(2.0 + 0.0) / 2, (0.0 + 1.0) / 2, (0.0 + 1.0) / 2});
  for (int k = 0; k < 3; ++k) CHECK(two.rows[0][k] == doctest::Approx(want[k]).epsilon(1e-12));

  const TextEmbeddingMatrix sorted = encode_text(vlp, {4, 2}, {"a {} photo"}, names);
  CHECK(sorted.classes == std::vector<ClassId>{2, 4});
  CHECK(sorted.rows[0] == std::vector<double>{0.0, 0.0, 1.0});

  CHECK_ERROR_CODE(encode_text(vlp, {}, {"a {} photo"}, names), ErrorCode::kEmptyClassSet);
  CHECK_ERROR_CODE(encode_text(vlp, {9}, {"a {} photo"}, names), ErrorCode::kBackendFailure);
}

TEST_CASE("prompt template files hold one template per line") {
  const auto path = std::filesystem::temp_directory_path() / "fmwiss_prompts.txt";
  {
    std::ofstream out(path);
    out << "a photo of a {}.\n\nitap of a {}.\n";
  }
  CHECK(load_prompt_templates(path.string()) == std::vector<std::string>{"a photo of a {}.", "itap of a {}."});
  {
    std::ofstream out(path);
    out << "no placeholder\n";
  }
  CHECK_ERROR_CODE(load_prompt_templates(path.string()), ErrorCode::kFormatError);
  std::filesystem::remove(path);
  CHECK(fill_template("a photo of a {}.", "kite") == "a photo of a kite.");
}

TEST_CASE("initial_mask is the per-pixel dot product") {
  std::mt19937_64 rng(2);
  const DenseFeatureMap f = normalize_features(random_features(rng, 5, 2, 2));
  TextEmbeddingMatrix text;
  text.classes = {1, 2};
  std::vector<double> a(5), b(5);
  for (double& x : a) x = testing::uniform(rng, -1, 1);
  for (double& x : b) x = testing::uniform(rng, -1, 1);
  text.rows = {unit(a), unit(b)};
  const ScoreMap s = initial_mask(f, text);
  CHECK(s.classes == text.classes);
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        double d = 0.0;
        for (int k = 0; k < 5; ++k) d += f.values.at(k, i, j) * text.rows[c][k];
        CHECK(std::abs(s.values.at(c, i, j) - d) < 1e-6);
        CHECK(s.values.at(c, i, j) >= -1.0);
        CHECK(s.values.at(c, i, j) <= 1.0);
      }
    }
  }

  DenseFeatureMap same{Tensor(2, 1, 1)};
  same.values.at(0, 0, 0) = 1.0;
  TextEmbeddingMatrix t2;
  t2.classes = {1, 2};
  t2.rows = {{1.0, 0.0}, {0.0, 1.0}};
  const ScoreMap s2 = initial_mask(same, t2);
  CHECK(s2.values.at(0, 0, 0) == 1.0);
  CHECK(s2.values.at(1, 0, 0) == 0.0);

  TextEmbeddingMatrix wrong;
  wrong.classes = {1};
  wrong.rows = {{1.0, 0.0, 0.0}};
  CHECK_ERROR_CODE(initial_mask(same, wrong), ErrorCode::kDimMismatch);
}

TEST_CASE("binarize_topk keeps the ceil(K%) largest values") {
  const std::vector<double> nine{1, 2, 3, 4, 5, 6, 7, 8, 9};
  const Mask m = binarize_topk(nine, 3, 3, 70);
  CHECK(m.bits == std::vector<std::uint8_t>{0, 0, 1, 1, 1, 1, 1, 1, 1});
  CHECK(binarize_topk(nine, 3, 3, 100).popcount() == 9);

  const std::vector<double> flat(9, 0.5);
  CHECK(binarize_topk(flat, 3, 3, 70).bits == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 1, 1, 0, 0});

  CHECK_ERROR_CODE(binarize_topk(nine, 3, 3, 0), ErrorCode::kBadPercentage);
  CHECK_ERROR_CODE(binarize_topk(nine, 3, 3, 100.5), ErrorCode::kBadPercentage);
  CHECK_ERROR_CODE(binarize_topk(nine, 2, 3, 50), ErrorCode::kShapeMismatch);
}

TEST_CASE("foreground_of combines the argmax with the class's own top-K") {
  ScoreMap single{{7}, Tensor(1, 3, 3)};
  for (int p = 0; p < 9; ++p) single.values.data()[p] = 0.1 * p;
  CHECK(foreground_of(single, 7, 70) == binarize_topk(single.values.plane(0), 3, 3, 70));
  CHECK_ERROR_CODE(foreground_of(single, 8, 70), ErrorCode::kUnknownClass);

  std::mt19937_64 rng(3);
  for (int round = 0; round < 20; ++round) {
    ScoreMap two{{1, 2}, testing::random_tensor(rng, 2, 3, 3, -1, 1)};
    const Mask fg = foreground_of(two, 2, 70);
    std::vector<std::pair<double, int>> order;
    for (int p = 0; p < 9; ++p) order.push_back({-two.values.plane(1)[p], p});
    std::sort(order.begin(), order.end());
    std::set<int> top;
    for (int k = 0; k < 7; ++k) top.insert(order[k].second);
    for (int p = 0; p < 9; ++p) {
      const bool wins = two.values.plane(1)[p] > two.values.plane(0)[p];
      CHECK(fg.bits[p] == (wins && top.count(p) ? 1 : 0));
    }
  }
}

TEST_CASE("sample_seeds draws from the foreground") {
  Mask one(4, 4);
  one.at(2, 1) = 1;
  Rng rng(42);
  const auto seeds = sample_seeds(one, 9, rng);
  CHECK(seeds.size() == 9);
  for (const auto& s : seeds) CHECK(s == GridPoint{2, 1});

  std::mt19937_64 gen(4);
  const Mask plane = random_mask(gen, 6, 6);
  Rng a(42), b(42);
  CHECK(sample_seeds(plane, 9, a) == sample_seeds(plane, 9, b));

  Rng c(7);
  const auto distinct = sample_seeds(Mask(5, 5, 1), 9, c);
  std::set<std::pair<int, int>> unique;
  for (const auto& s : distinct) unique.insert({s.i, s.j});
  CHECK(unique.size() == 9);  // without replacement when enough pixels exist

  CHECK_ERROR_CODE(sample_seeds(Mask(3, 3), 9, c), ErrorCode::kEmptyForeground);
}

TEST_CASE("seed_attention_mask averages heads, then seeds, then binarizes") {
  std::mt19937_64 rng(5);
  std::map<std::pair<int, int>, Tensor> maps;
  FakeSsl ssl;
  ssl.fn = [&](GridPoint s) {
    auto key = std::make_pair(s.i, s.j);
    if (!maps.count(key)) maps[key] = testing::random_tensor(rng, 2, 4, 4);
    return AttentionStack{maps[key]};
  };
  const Image img("x", 16, 16);
  const GridShape grid{4, 4};

  const Mask single = seed_attention_mask(ssl, img, {{1, 1}}, grid, 70);
  const Tensor& m11 = maps[{1, 1}];
  std::vector<double> mean(16);
  for (int p = 0; p < 16; ++p) mean[p] = (m11.plane(0)[p] + m11.plane(1)[p]) / 2;
  CHECK(single == binarize_topk(mean, 4, 4, 70));
  CHECK(seed_attention_mask(ssl, img, {{1, 1}, {1, 1}, {1, 1}}, grid, 70) == single);

  const Mask pair = seed_attention_mask(ssl, img, {{1, 1}, {2, 3}}, grid, 50);
  const Tensor& m23 = maps[{2, 3}];
  for (int p = 0; p < 16; ++p) {
    mean[p] = (m11.plane(0)[p] + m11.plane(1)[p] + m23.plane(0)[p] + m23.plane(1)[p]) / 4;
  }
  CHECK(pair == binarize_topk(mean, 4, 4, 50));

  CHECK_ERROR_CODE(seed_attention_mask(ssl, img, {}, grid, 70), ErrorCode::kEmptyForeground);
}

TEST_CASE("fuse_masks union, intersection and none") {
  std::mt19937_64 rng(6);
  for (int round = 0; round < 20; ++round) {
    const Mask a = random_mask(rng, 5, 4), b = random_mask(rng, 5, 4);
    CHECK(fuse_masks(a, Mask(5, 4), FusionOp::kUnion) == a);
    const Mask u = fuse_masks(a, b, FusionOp::kUnion);
    const Mask x = fuse_masks(a, b, FusionOp::kIntersection);
    for (std::size_t p = 0; p < a.bits.size(); ++p) {
      CHECK(u.bits[p] >= a.bits[p]);
      CHECK(u.bits[p] >= b.bits[p]);
      CHECK(x.bits[p] == (a.bits[p] && b.bits[p]));
    }
    CHECK(fuse_masks(a, b, FusionOp::kNone) == a);
  }
  CHECK_ERROR_CODE(fuse_masks(Mask(2, 2), Mask(2, 3), FusionOp::kUnion), ErrorCode::kShapeMismatch);
  CHECK(parse_fusion("intersection") == FusionOp::kIntersection);
  CHECK_ERROR_CODE(parse_fusion("xor"), ErrorCode::kConfigError);
}

namespace {

struct SquareWorld {
  LabelMap labels{64, 64};
  Image image{"sq", 64, 64};
  std::map<ClassId, std::string> names{{3, "kite"}, {4, "boat"}};
  SyntheticVlpBackend vlp;
  SyntheticSslBackend ssl;

  SquareWorld()
      : vlp([this](const std::string&) { return labels; }, names),
        ssl([this](const std::string&) { return labels; }) {
    for (int i = 16; i < 40; ++i) {
      for (int j = 20; j < 44; ++j) labels.at(i, j) = 3;
    }
    for (int i = 48; i < 60; ++i) {
      for (int j = 4; j < 16; ++j) labels.at(i, j) = 4;
    }
  }
};

double iou(const Mask& m, const LabelMap& labels, ClassId c) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < m.bits.size(); ++p) {
    const bool t = labels.ids[p] == c;
    inter += m.bits[p] && t;
    uni += m.bits[p] || t;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("generate_pseudo_labels recovers a known square") {
  SquareWorld w;
  CosegConfig cfg;
  cfg.k_percent = 15;
  cfg.k_fg_percent = 10;
  Rng rng(11);
  const PseudoLabelSet pls = generate_pseudo_labels(w.image, {3}, {3, 4}, w.names, w.vlp, w.ssl, cfg, rng);
  REQUIRE(pls.masks.count(3) == 1);
  CHECK(pls.masks.size() == 1);
  CHECK(pls.height == 64);
  CHECK(pls.source == LabelSource::kFused);
  CHECK(iou(pls.masks.at(3), w.labels, 3) >= 0.9);
  for (auto b : pls.masks.at(3).bits) CHECK(b <= 1);

  Rng again(11);
  CHECK(generate_pseudo_labels(w.image, {3}, {3, 4}, w.names, w.vlp, w.ssl, cfg, again) == pls);
}

TEST_CASE("generate_pseudo_labels keys, sources and label checks") {
  SquareWorld w;
  CosegConfig cfg;
  cfg.k_percent = 15;
  cfg.k_fg_percent = 10;
  Rng rng(12);
  const PseudoLabelSet both = generate_pseudo_labels(w.image, {3, 4}, {3, 4}, w.names, w.vlp, w.ssl, cfg, rng);
  CHECK(both.masks.size() == 2);
  CHECK(both.masks.count(3) == 1);
  CHECK(both.masks.count(4) == 1);

  cfg.fusion = FusionOp::kNone;
  const PseudoLabelSet init = generate_pseudo_labels(w.image, {3}, {3, 4}, w.names, w.vlp, w.ssl, cfg, rng);
  CHECK(init.source == LabelSource::kInitOnly);

  CHECK_ERROR_CODE(generate_pseudo_labels(w.image, {5}, {3, 4}, w.names, w.vlp, w.ssl, cfg, rng),
                   ErrorCode::kUnknownClass);
  CHECK_ERROR_CODE(generate_pseudo_labels(w.image, {}, {3, 4}, w.names, w.vlp, w.ssl, cfg, rng),
                   ErrorCode::kInvalidArgument);
}

TEST_CASE("mask cache round-trips and rejects corruption") {
  const auto dir = std::filesystem::temp_directory_path() / "fmwiss_mask_cache";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(13);
  PseudoLabelSet pls;
  pls.image_id = "im";
  pls.height = 5;
  pls.width = 7;
  pls.source = LabelSource::kInitOnly;
  pls.masks[16] = random_mask(rng, 5, 7);
  pls.masks[18] = random_mask(rng, 5, 7);
  write_mask_cache(dir / "im.fmwm", pls);
  CHECK(read_mask_cache(dir / "im.fmwm") == pls);

  auto bytes = read_file_bytes(dir / "im.fmwm");
  bytes[0] = 'X';
  CHECK_ERROR_CODE(decode_mask_cache(bytes, "im"), ErrorCode::kFormatError);
  bytes = read_file_bytes(dir / "im.fmwm");
  bytes.pop_back();
  CHECK_ERROR_CODE(decode_mask_cache(bytes, "im"), ErrorCode::kFormatError);
  bytes = read_file_bytes(dir / "im.fmwm");
  bytes[4] = 9;  // version
  CHECK_ERROR_CODE(decode_mask_cache(bytes, "im"), ErrorCode::kFormatError);

  PseudoLabelSet tiny;
  tiny.image_id = "t";
  tiny.height = 1;
  tiny.width = 1;
  tiny.masks[3] = Mask(1, 1, 1);
  write_mask_cache(dir / "t.fmwm", tiny);
  CHECK(std::filesystem::file_size(dir / "t.fmwm") == plane_header_size(1) + 1);
  CHECK(plane_header_size(1) == 4 + 2 + 2 + 4 + 4 + 2 + 2 + 1);

  CHECK_ERROR_CODE(read_mask_cache(dir / "missing.fmwm"), ErrorCode::kIoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("float planes round-trip through float32") {
  std::mt19937_64 rng(14);
  const Tensor t = testing::random_tensor(rng, 3, 2, 5, -2, 2);
  const Tensor back = decode_float_planes(encode_float_planes(t));
  REQUIRE(back.same_shape(t));
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(back.data()[k] == static_cast<double>(static_cast<float>(t.data()[k])));
  }
}
