// SPDX-License-Identifier: Apache-2.0
//
// Synthetic classification data and the frozen image/text encoders that stand
// in for a pretrained vision-language backbone.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moapt/diffcore.hpp"

namespace moapt {

using ad::Tensor;

struct DatasetSpec {
  std::size_t n_classes = 8;
  std::size_t image_dim = 64;
  std::size_t train_per_class = 32;
  std::size_t test_per_class = 32;
  double sigma = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
  /// Hash of the generating fields (not the seed).
  std::uint64_t hash() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct LabeledBatch {
  Tensor images;  // [B,p], constant
  std::vector<int> labels;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  /// [B,N] one-hot matrix, exactly one 1 per row.
  Tensor one_hot() const;
  /// Rows [begin,end) in order.
  LabeledBatch slice(std::size_t begin, std::size_t end) const;
  /// Rows in the given order.
  LabeledBatch gather(const std::vector<std::size_t>& rows) const;
};

struct Dataset {
  DatasetSpec spec;
  LabeledBatch train;
  LabeledBatch test;
  std::vector<double> prototypes;  // N*p, row-major
};

Dataset generate_dataset(const DatasetSpec& spec);

/// `dataset_<spec hash>_<seed>.bin`
std::string dataset_filename(const DatasetSpec& spec);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct EncoderSpec {
  std::size_t n_classes = 8;
  std::size_t image_dim = 64;
  std::size_t feature_dim = 32;
  std::size_t token_dim = 16;
  std::size_t hidden_dim = 48;
  std::size_t context_length = 16;
  /// Backbone weights. Everything except the context block of the text input
  /// layer is independent of the context length.
  std::uint64_t weight_seed = 0;

  void validate() const;
  bool operator==(const EncoderSpec&) const = default;
};

/// Two-layer tanh MLPs with immutable weights. Gradients flow through them to
/// their inputs but never into their parameters.
///
/// The pair is built "pre-aligned", standing in for contrastive pretraining:
/// a fixed naming map G [e,p] turns a class prototype into its class token
/// C_n = G (x_n - 1/2), and the text encoder reads class tokens through
/// G W1_img with the image encoder's hidden bias and output layer. A prompt
/// with zero context therefore encodes approximately F_img(1/2 + G'G (x_n - 1/2)).
/// Context tokens enter through their own Gaussian block.
class FrozenEncoders {
 public:
  /// Class tokens derived from `prototypes` ([N*p], row-major).
  FrozenEncoders(const EncoderSpec& spec, std::span<const double> prototypes);
  /// Explicit class tokens ([N,e]), e.g. restored from a checkpoint.
  FrozenEncoders(const EncoderSpec& spec, Tensor class_tokens);

  const EncoderSpec& spec() const { return spec_; }
  std::size_t tokens_per_prompt() const { return spec_.context_length + 1; }

  /// [B,p] -> [B,d]
  Tensor encode_image(const Tensor& images) const;
  /// [(M+1),e] -> [d]
  Tensor encode_text(const Tensor& tokens) const;
  /// Batched text encoding of flattened prompts: [R,(M+1)*e] -> [R,d].
  Tensor encode_text_rows(const Tensor& flat_prompts) const;

  /// [N,e]
  const Tensor& class_embeddings() const { return class_tokens_; }

  /// Read-only views of the frozen layers: {W1, b1, W2, b2}.
  std::vector<Tensor> image_weights() const { return {img_w1_, img_b1_, img_w2_, img_b2_}; }
  std::vector<Tensor> text_weights() const { return {txt_w1_, txt_b1_, txt_w2_, txt_b2_}; }

  /// FNV-1a over the bit patterns of every frozen tensor.
  std::uint64_t checksum() const;

 private:
  EncoderSpec spec_;
  Tensor img_w1_, img_b1_, img_w2_, img_b2_;
  Tensor txt_w1_, txt_b1_, txt_w2_, txt_b2_;
  Tensor class_tokens_;
  Tensor naming_;  // G [e,p]

  void build_weights();
};

/// FNV-1a over the IEEE bit patterns of a set of tensors.
std::uint64_t checksum(const std::vector<Tensor>& tensors);

}  // namespace moapt
