#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "clamp/attention.hpp"
#include "clamp/ops.hpp"
#include "clamp/params.hpp"

namespace clamp {

inline constexpr std::size_t kEncoderFfnMultiplier = 2;

struct TextEncoderConfig {
  std::size_t vocab_size = 100;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t max_len = 16;
  double dropout = 0.1;

  void validate() const {
    if (vocab_size == 0 || d_model == 0 || n_heads == 0 || max_len == 0)
      throw ConfigError("text encoder: sizes must be positive");
    if (d_model % n_heads != 0) throw ConfigError("text encoder: d_model must be divisible by n_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("text encoder: dropout must lie in [0, 1)");
  }
};

struct ImageEncoderConfig {
  std::size_t image_h = 16;
  std::size_t image_w = 16;
  std::size_t channels = 3;
  std::size_t patch_size = 4;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  double dropout = 0.1;

  std::size_t patch_count() const { return (image_h / patch_size) * (image_w / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const {
    if (image_h == 0 || image_w == 0 || channels == 0 || patch_size == 0 || d_model == 0 || n_heads == 0)
      throw ConfigError("image encoder: sizes must be positive");
    if (image_h % patch_size != 0 || image_w % patch_size != 0)
      throw ConfigError("image encoder: image sides must be divisible by patch_size");
    if (d_model % n_heads != 0) throw ConfigError("image encoder: d_model must be divisible by n_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("image encoder: dropout must lie in [0, 1)");
  }
};

// Raw image, values row-major over (row, col, channel).
struct PatchGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col, std::size_t ch) const { return values[(row * w + col) * c + ch]; }
  double& at(std::size_t row, std::size_t col, std::size_t ch) { return values[(row * w + col) * c + ch]; }

  bool operator==(const PatchGrid&) const = default;
};

// Patches in row-major order over the patch grid; each patch flattened
// row-major by (row, col, channel).
inline Tensor patchify(const PatchGrid& img, std::size_t patch) {
  if (patch == 0 || img.h % patch != 0 || img.w % patch != 0) {
    throw DimensionError("patchify: " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                         " image is not divisible into " + std::to_string(patch) + "-pixel patches");
  }
  if (img.values.size() != img.h * img.w * img.c) throw DimensionError("patchify: value count does not match h*w*c");
  const std::size_t ph = img.h / patch, pw = img.w / patch, dim = patch * patch * img.c;
  std::vector<double> out;
  out.reserve(ph * pw * dim);
  for (std::size_t pr = 0; pr < ph; ++pr)
    for (std::size_t pc = 0; pc < pw; ++pc)
      for (std::size_t r = 0; r < patch; ++r)
        for (std::size_t c = 0; c < patch; ++c)
          for (std::size_t ch = 0; ch < img.c; ++ch) out.push_back(img.at(pr * patch + r, pc * patch + c, ch));
  return Tensor({ph * pw, dim}, std::move(out));
}

// Token embedding + learned positions + transformer stack, then
// LayerNorm(Dropout(H)). Output is n x d_model.
class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& cfg, ParamSet& params, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    token_embedding_ = params.embedding("text.token_embedding", cfg.vocab_size, cfg.d_model, rng);
    position_embedding_ = params.embedding("text.position_embedding", cfg.max_len, cfg.d_model, rng);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      layers_.emplace_back(params, "text.layer" + std::to_string(l), cfg.d_model, cfg.n_heads,
                           kEncoderFfnMultiplier * cfg.d_model, rng);
    }
    out_norm_ = LayerNormParams::make(params, "text.out_norm", cfg.d_model);
  }

  Tensor operator()(std::span<const std::size_t> tokens, bool training, Rng& rng, ProbeSink probes = nullptr) const {
    const std::size_t n = tokens.size();
    if (n == 0) throw LengthError("text encoder: empty token sequence");
    if (n > cfg_.max_len) {
      throw LengthError("text encoder: sequence of " + std::to_string(n) + " tokens exceeds max_len " +
                        std::to_string(cfg_.max_len));
    }
    for (std::size_t id : tokens) {
      if (id >= cfg_.vocab_size) {
        throw DataError("text encoder: token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(cfg_.vocab_size));
      }
    }
    Tensor h = add(gather_rows(token_embedding_, tokens), slice_rows(position_embedding_, 0, n));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](h, cfg_.dropout, training, rng, probes, "text.layer" + std::to_string(l));
    }
    return out_norm_(dropout(h, cfg_.dropout, training, rng));
  }

  const TextEncoderConfig& config() const { return cfg_; }

 private:
  TextEncoderConfig cfg_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<EncoderLayer> layers_;
  LayerNormParams out_norm_;
};

// Patch projection, CLS row prepended, learned positions, transformer stack,
// then LayerNorm(Dropout(H)). Output is (k + 1) x d_model, row 0 = CLS.
class ImageEncoder {
 public:
  ImageEncoder(const ImageEncoderConfig& cfg, ParamSet& params, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    patch_projection_ = Linear::make(params, "image.patch_projection", cfg.patch_dim(), cfg.d_model, rng);
    cls_ = params.embedding("image.cls", 1, cfg.d_model, rng);
    position_embedding_ = params.embedding("image.position_embedding", cfg.patch_count() + 1, cfg.d_model, rng);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      layers_.emplace_back(params, "image.layer" + std::to_string(l), cfg.d_model, cfg.n_heads,
                           kEncoderFfnMultiplier * cfg.d_model, rng);
    }
    out_norm_ = LayerNormParams::make(params, "image.out_norm", cfg.d_model);
  }

  Tensor operator()(const PatchGrid& img, bool training, Rng& rng, ProbeSink probes = nullptr) const {
    if (img.h != cfg_.image_h || img.w != cfg_.image_w || img.c != cfg_.channels) {
      throw DimensionError("image encoder: grid " + std::to_string(img.h) + "x" + std::to_string(img.w) + "x" +
                           std::to_string(img.c) + " does not match config " + std::to_string(cfg_.image_h) + "x" +
                           std::to_string(cfg_.image_w) + "x" + std::to_string(cfg_.channels));
    }
    Tensor h = concat_rows({cls_, patch_projection_(patchify(img, cfg_.patch_size))});
    h = add(h, position_embedding_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](h, cfg_.dropout, training, rng, probes, "image.layer" + std::to_string(l));
    }
    return out_norm_(dropout(h, cfg_.dropout, training, rng));
  }

  const ImageEncoderConfig& config() const { return cfg_; }

 private:
  ImageEncoderConfig cfg_;
  Linear patch_projection_;
  Tensor cls_;
  Tensor position_embedding_;
  std::vector<EncoderLayer> layers_;
  LayerNormParams out_norm_;
};

}  // namespace clamp
