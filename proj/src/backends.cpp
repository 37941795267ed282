#include "fmwiss/backends.hpp"

#include <cstdlib>
#include <fstream>

#include "httplib.h"
#include "json.hpp"

#include "fmwiss/error.hpp"
#include "fmwiss/plane_format.hpp"

namespace fmwiss {
namespace {

struct SplitUrl {
  std::string origin;  // scheme://host:port
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) fail(ErrorCode::kConfigError, "backend url lacks scheme: " + url);
  const auto path = url.find('/', scheme + 3);
  SplitUrl out{url.substr(0, path), path == std::string::npos ? "" : url.substr(path)};
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

// "http:<url>" or a bare "http://host..." URL.
std::string http_url(const std::string& spec) {
  const std::string rest = spec.substr(5);
  return rest.rfind("//", 0) == 0 ? spec : rest;
}

std::string image_body(const Image& image) {
  const auto bytes = encode_ppm(image);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

DirectoryVlpBackend::DirectoryVlpBackend(std::filesystem::path root) : root_(std::move(root)) {
  const auto text_path = root_ / "text.json";
  std::ifstream in(text_path);
  if (!in) fail(ErrorCode::kBackendFailure, "missing " + text_path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [prompt, vec] : j.items()) text_[prompt] = vec.get<std::vector<double>>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kBackendFailure, text_path.string() + ": " + ex.what());
  }
}

DenseFeatureMap DirectoryVlpBackend::image_features(const Image& image) {
  const auto path = root_ / (image.id + ".vlp");
  try {
    return {decode_float_planes(read_file_bytes(path))};
  } catch (const Error& e) {
    fail(ErrorCode::kBackendFailure, path.string() + ": " + e.what());
  }
}

std::vector<double> DirectoryVlpBackend::embed_text(const std::string& prompt) {
  auto it = text_.find(prompt);
  if (it == text_.end()) fail(ErrorCode::kBackendFailure, "no precomputed embedding for prompt '" + prompt + "'");
  return it->second;
}

DirectorySslBackend::DirectorySslBackend(std::filesystem::path root) : root_(std::move(root)) {
  if (!std::filesystem::is_directory(root_)) fail(ErrorCode::kBackendFailure, "missing directory " + root_.string());
}

AttentionStack DirectorySslBackend::attention(const Image& image, GridPoint seed, GridShape seed_grid) {
  std::shared_ptr<const Tensor> all;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(image.id);
    if (it != cache_.end()) all = it->second;
  }
  if (!all) {
    const auto path = root_ / (image.id + ".ssl");
    try {
      all = std::make_shared<const Tensor>(decode_float_planes(read_file_bytes(path)));
    } catch (const Error& e) {
      fail(ErrorCode::kBackendFailure, path.string() + ": " + e.what());
    }
    std::lock_guard<std::mutex> lock(mu_);
    cache_.emplace(image.id, all);
  }
  const int tokens = all->height() * all->width();
  if (tokens == 0 || all->channels() % tokens != 0) {
    fail(ErrorCode::kBackendFailure, image.id + ".ssl: channel count is not heads * h * w");
  }
  const int heads = all->channels() / tokens;
  const GridPoint q = map_grid_point(seed, seed_grid, {all->height(), all->width()});
  const int token = q.i * all->width() + q.j;
  AttentionStack out{Tensor(heads, all->height(), all->width())};
  for (int h = 0; h < heads; ++h) {
    const auto src = all->plane(h * tokens + token);
    std::copy(src.begin(), src.end(), out.heads.plane(h).begin());
  }
  return out;
}

std::vector<std::uint8_t> http_post(const std::string& url, const std::string& path,
                                    const std::string& body, const std::string& content_type,
                                    int timeout_ms) {
  const SplitUrl u = split_url(url);
  httplib::Client client(u.origin);
  const time_t sec = timeout_ms / 1000;
  const time_t usec = static_cast<time_t>(timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  const std::string endpoint = u.origin + u.prefix + path;
  auto res = client.Post(u.prefix + path, body, content_type);
  if (!res) {
    fail(ErrorCode::kBackendFailure,
         "backend endpoint " + endpoint + " unreachable (" + httplib::to_string(res.error()) + ")");
  }
  if (res->status != 200) {
    fail(ErrorCode::kBackendFailure, "backend endpoint " + endpoint + " returned HTTP " + std::to_string(res->status));
  }
  return {res->body.begin(), res->body.end()};
}

int backend_timeout_ms() {
  if (const char* env = std::getenv("FMWISS_BACKEND_TIMEOUT_MS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return 30000;
}

HttpVlpBackend::HttpVlpBackend(std::string url, int timeout_ms)
    : url_(std::move(url)), timeout_ms_(timeout_ms) {
  split_url(url_);
}

DenseFeatureMap HttpVlpBackend::image_features(const Image& image) {
  const auto bytes = http_post(url_, "/features", image_body(image), "image/x-portable-pixmap", timeout_ms_);
  return {decode_float_planes(bytes)};
}

std::vector<double> HttpVlpBackend::embed_text(const std::string& prompt) {
  const Tensor t = decode_float_planes(http_post(url_, "/text", prompt, "text/plain", timeout_ms_));
  if (t.height() != 1 || t.width() != 1) fail(ErrorCode::kBackendFailure, "text embedding must be d x 1 x 1");
  return {t.data().begin(), t.data().end()};
}

HttpSslBackend::HttpSslBackend(std::string url, int timeout_ms)
    : url_(std::move(url)), timeout_ms_(timeout_ms) {
  split_url(url_);
}

AttentionStack HttpSslBackend::attention(const Image& image, GridPoint seed, GridShape seed_grid) {
  const std::string path = "/attention?i=" + std::to_string(seed.i) + "&j=" + std::to_string(seed.j) +
                           "&gh=" + std::to_string(seed_grid.height) + "&gw=" + std::to_string(seed_grid.width);
  return {decode_float_planes(http_post(url_, path, image_body(image), "image/x-portable-pixmap", timeout_ms_))};
}

void validate_backend_spec(const std::string& spec) {
  if (spec == "synthetic") return;
  if (spec.rfind("dir:", 0) == 0) {
    if (!std::filesystem::is_directory(spec.substr(4))) {
      fail(ErrorCode::kConfigError, "backend directory does not exist: " + spec.substr(4));
    }
    return;
  }
  if (spec.rfind("http:", 0) == 0) {
    split_url(http_url(spec));
    return;
  }
  fail(ErrorCode::kConfigError, "unknown backend spec '" + spec + "'");
}

std::unique_ptr<VlpBackend> make_vlp_backend(const std::string& spec, const BackendContext& ctx) {
  validate_backend_spec(spec);
  if (spec == "synthetic") {
    SyntheticVlpParams p;
    p.stride = ctx.stride;
    p.seed = ctx.seed;
    return std::make_unique<SyntheticVlpBackend>(ctx.ground_truth, ctx.class_names, p);
  }
  if (spec.rfind("dir:", 0) == 0) return std::make_unique<DirectoryVlpBackend>(spec.substr(4));
  return std::make_unique<HttpVlpBackend>(http_url(spec), backend_timeout_ms());
}

std::unique_ptr<SslBackend> make_ssl_backend(const std::string& spec, const BackendContext& ctx) {
  validate_backend_spec(spec);
  if (spec == "synthetic") {
    SyntheticSslParams p;
    p.stride = ctx.stride;
    p.seed = ctx.seed;
    return std::make_unique<SyntheticSslBackend>(ctx.ground_truth, p);
  }
  if (spec.rfind("dir:", 0) == 0) return std::make_unique<DirectorySslBackend>(spec.substr(4));
  return std::make_unique<HttpSslBackend>(http_url(spec), backend_timeout_ms());
}

}  // namespace fmwiss
