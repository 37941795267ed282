#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "fmwiss/coseg.hpp"
#include "fmwiss/synthetic.hpp"

namespace fmwiss {

// Precomputed tensors on disk:
//   <root>/<image_id>.vlp   float planes, d channels on the feature grid
//   <root>/text.json        {"<prompt>": [floats]}
class DirectoryVlpBackend final : public VlpBackend {
 public:
  explicit DirectoryVlpBackend(std::filesystem::path root);
  DenseFeatureMap image_features(const Image& image) override;
  std::vector<double> embed_text(const std::string& prompt) override;

 private:
  std::filesystem::path root_;
  std::map<std::string, std::vector<double>> text_;
};

//   <root>/<image_id>.ssl   float planes on an h x w grid, n*h*w channels;
//                           channel head*(h*w) + query_token
class DirectorySslBackend final : public SslBackend {
 public:
  explicit DirectorySslBackend(std::filesystem::path root);
  AttentionStack attention(const Image& image, GridPoint seed, GridShape seed_grid) override;

 private:
  std::filesystem::path root_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Tensor>> cache_;
};

// HTTP adapters. Requests carry the image as a binary PPM body; responses are
// float planes.
//   POST <url>/features            -> d x h x w
//   POST <url>/text   (text body)  -> d x 1 x 1
//   POST <url>/attention?i=&j=&gh=&gw= -> n x h x w
class HttpVlpBackend final : public VlpBackend {
 public:
  HttpVlpBackend(std::string url, int timeout_ms);
  DenseFeatureMap image_features(const Image& image) override;
  std::vector<double> embed_text(const std::string& prompt) override;

 private:
  std::string url_;
  int timeout_ms_;
};

class HttpSslBackend final : public SslBackend {
 public:
  HttpSslBackend(std::string url, int timeout_ms);
  AttentionStack attention(const Image& image, GridPoint seed, GridShape seed_grid) override;

 private:
  std::string url_;
  int timeout_ms_;
};

// POSTs `body` to `url` + `path`; throws BackendFailure naming the endpoint.
std::vector<std::uint8_t> http_post(const std::string& url, const std::string& path,
                                    const std::string& body, const std::string& content_type,
                                    int timeout_ms);

int backend_timeout_ms();  // FMWISS_BACKEND_TIMEOUT_MS, default 30000

struct BackendContext {
  GroundTruthProvider ground_truth;  // synthetic backends only
  std::map<ClassId, std::string> class_names;
  std::uint64_t seed = 0;
  int stride = 4;
};

// spec: "synthetic" | "dir:<path>" | "http:<url>" (a bare http:// URL also works)
std::unique_ptr<VlpBackend> make_vlp_backend(const std::string& spec, const BackendContext& ctx);
std::unique_ptr<SslBackend> make_ssl_backend(const std::string& spec, const BackendContext& ctx);
void validate_backend_spec(const std::string& spec);

}  // namespace fmwiss
