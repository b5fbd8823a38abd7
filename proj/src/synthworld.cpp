// SPDX-License-Identifier: Apache-2.0

#include "moapt/synthworld.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "moapt/binio.hpp"
#include "moapt/rng.hpp"

namespace moapt {

namespace {

constexpr const char* kDatasetMagic = "MOAPTDS\x01";
constexpr std::uint64_t kDatasetVersion = 1;

std::vector<double> gaussian(Rng& rng, std::size_t n, double stddev) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return v;
}

// Draws one split; sample j belongs to class j % N so every prefix is balanced.
LabeledBatch draw_split(const DatasetSpec& spec,
                        const std::vector<double>& prototypes,
                        std::size_t per_class, Rng& rng) {
  const std::size_t N = spec.n_classes, p = spec.image_dim, count = per_class * N;
  std::vector<double> pixels(count * p);
  std::vector<int> labels(count);
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t c = j % N;
    labels[j] = static_cast<int>(c);
    for (std::size_t k = 0; k < p; ++k)
      pixels[j * p + k] =
          std::clamp(prototypes[c * p + k] + rng.normal(0.0, spec.sigma), 0.0, 1.0);
  }
  return {Tensor::from({count, p}, std::move(pixels)), std::move(labels), N};
}

}  // namespace

void DatasetSpec::validate() const {
  if (n_classes < 2) throw std::invalid_argument("dataset: n_classes must be >= 2");
  if (image_dim < 4) throw std::invalid_argument("dataset: image_dim must be >= 4");
  if (train_per_class == 0 || test_per_class == 0)
    throw std::invalid_argument("dataset: samples per class must be >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("dataset: sigma must be positive");
}

std::uint64_t DatasetSpec::hash() const {
  std::ostringstream os;
  os << "N=" << n_classes << ";p=" << image_dim << ";train=" << train_per_class
     << ";test=" << test_per_class << ";sigma=" << std::bit_cast<std::uint64_t>(sigma);
  return fnv1a(os.str());
}

Tensor LabeledBatch::one_hot() const {
  std::vector<double> y(size() * n_classes, 0.0);
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
      throw std::out_of_range("one_hot: label out of range");
    y[i * n_classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor::from({size(), n_classes}, std::move(y));
}

LabeledBatch LabeledBatch::slice(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = begin; i < end; ++i) rows.push_back(i);
  return gather(rows);
}

LabeledBatch LabeledBatch::gather(const std::vector<std::size_t>& rows) const {
  if (rows.empty()) throw std::invalid_argument("gather: empty selection");
  const std::size_t p = images.dim(1);
  std::vector<double> px(rows.size() * p);
  std::vector<int> lb(rows.size());
  const auto src = images.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw std::out_of_range("gather: row out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * p), p,
                px.begin() + static_cast<std::ptrdiff_t>(i * p));
    lb[i] = labels[rows[i]];
  }
  return {Tensor::from({rows.size(), p}, std::move(px)), std::move(lb), n_classes};
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset out;
  out.spec = spec;
  Rng proto_rng(spec.seed, "prototypes");
  out.prototypes.resize(spec.n_classes * spec.image_dim);
  for (auto& v : out.prototypes) v = proto_rng.uniform();
  Rng train_rng(spec.seed, "train-noise");
  Rng test_rng(spec.seed, "test-noise");
  out.train = draw_split(spec, out.prototypes, spec.train_per_class, train_rng);
  out.test = draw_split(spec, out.prototypes, spec.test_per_class, test_rng);
  return out;
}

std::string dataset_filename(const DatasetSpec& spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "dataset_%016llx_%llu.bin",
                static_cast<unsigned long long>(spec.hash()),
                static_cast<unsigned long long>(spec.seed));
  return buf;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  binio::Writer w(path);
  w.bytes(kDatasetMagic);
  w.u64(kDatasetVersion);
  const auto& s = data.spec;
  w.u64(s.hash());
  w.u64(s.n_classes);
  w.u64(s.image_dim);
  w.u64(s.train_per_class);
  w.u64(s.test_per_class);
  w.f64(s.sigma);
  w.u64(s.seed);
  w.f64s(data.prototypes);
  for (const auto* split : {&data.train, &data.test}) {
    w.u64(split->size());
    for (int l : split->labels) w.u64(static_cast<std::uint64_t>(l));
    w.f64s(split->images.data());
  }
  w.finish();
}

Dataset load_dataset(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect(kDatasetMagic);
  if (const auto v = r.u64(); v != kDatasetVersion)
    throw binio::FormatError(path.string() + ": unsupported dataset version " +
                             std::to_string(v));
  const auto stored_hash = r.u64();
  Dataset d;
  auto& s = d.spec;
  s.n_classes = r.u64();
  s.image_dim = r.u64();
  s.train_per_class = r.u64();
  s.test_per_class = r.u64();
  s.sigma = r.f64();
  s.seed = r.u64();
  s.validate();
  if (s.hash() != stored_hash)
    throw binio::FormatError(path.string() + ": spec hash mismatch");
  d.prototypes = r.f64s(s.n_classes * s.image_dim);
  for (auto [split, per] : {std::pair{&d.train, s.train_per_class},
                            std::pair{&d.test, s.test_per_class}}) {
    const auto count = r.u64();
    if (count != per * s.n_classes)
      throw binio::FormatError(path.string() + ": unexpected sample count");
    split->n_classes = s.n_classes;
    split->labels.resize(count);
    for (auto& l : split->labels) {
      l = static_cast<int>(r.u64());
      if (l < 0 || static_cast<std::size_t>(l) >= s.n_classes)
        throw binio::FormatError(path.string() + ": label out of range");
    }
    split->images = Tensor::from({count, s.image_dim}, r.f64s(count * s.image_dim));
  }
  r.expect_end();
  return d;
}

// ---------------------------------------------------------------- encoders

void EncoderSpec::validate() const {
  if (n_classes < 2 || image_dim == 0 || feature_dim == 0 || token_dim == 0 ||
      hidden_dim == 0 || context_length == 0)
    throw std::invalid_argument("encoders: all dimensions must be positive");
}

FrozenEncoders::FrozenEncoders(const EncoderSpec& spec,
                               std::span<const double> prototypes)
    : spec_(spec) {
  spec_.validate();
  const std::size_t N = spec.n_classes, p = spec.image_dim, e = spec.token_dim;
  if (prototypes.size() != N * p)
    throw ad::ShapeError("encoders: expected " + std::to_string(N * p) +
                         " prototype values, got " + std::to_string(prototypes.size()));
  build_weights();
  const auto G = naming_.data();
  std::vector<double> tokens(N * e, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t a = 0; a < e; ++a) {
      double acc = 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += G[a * p + k] * (prototypes[n * p + k] - 0.5);
      tokens[n * e + a] = acc;
    }
  class_tokens_ = Tensor::from({N, e}, std::move(tokens));
}

FrozenEncoders::FrozenEncoders(const EncoderSpec& spec, Tensor class_tokens)
    : spec_(spec) {
  spec_.validate();
  if (class_tokens.shape() != ad::Shape{spec.n_classes, spec.token_dim})
    throw ad::ShapeError("encoders: class tokens must be [N,e], got " +
                         ad::to_string(class_tokens.shape()));
  build_weights();
  class_tokens_ = class_tokens.detach();
}

void FrozenEncoders::build_weights() {
  const auto& spec = spec_;
  const std::size_t p = spec.image_dim, h = spec.hidden_dim, d = spec.feature_dim,
                    e = spec.token_dim, M = spec.context_length, in_t = (M + 1) * e;
  auto layer = [](std::uint64_t seed, const char* stream, std::size_t fan_in,
                  std::size_t fan_out, Tensor& w, Tensor& b) {
    Rng rng(seed, stream);
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    w = Tensor::from({fan_in, fan_out}, gaussian(rng, fan_in * fan_out, sd));
    b = Tensor::from({fan_out}, gaussian(rng, fan_out, sd));
  };
  layer(spec.weight_seed, "image-l1", p, h, img_w1_, img_b1_);
  layer(spec.weight_seed, "image-l2", h, d, img_w2_, img_b2_);

  // Naming map with E[G'G] = I_p.
  Rng gr(spec.weight_seed, "naming-map");
  naming_ = Tensor::from({e, p}, gaussian(gr, e * p, 1.0 / std::sqrt(static_cast<double>(e))));

  // Text input layer: context block is Gaussian, class block is G W1_img.
  Rng t1(derive_seed(spec.weight_seed, "text-l1-context", M));
  auto w1 = gaussian(t1, in_t * h, 1.0 / std::sqrt(static_cast<double>(in_t)));
  const auto G = naming_.data();
  const auto W = img_w1_.data();
  for (std::size_t a = 0; a < e; ++a)
    for (std::size_t j = 0; j < h; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += G[a * p + k] * W[k * h + j];
      w1[(M * e + a) * h + j] = acc;
    }
  txt_w1_ = Tensor::from({in_t, h}, std::move(w1));
  // Hidden bias absorbs the 1/2 centring of the class token.
  std::vector<double> b1(img_b1_.data().begin(), img_b1_.data().end());
  for (std::size_t j = 0; j < h; ++j)
    for (std::size_t k = 0; k < p; ++k) b1[j] += 0.5 * W[k * h + j];
  txt_b1_ = Tensor::from({h}, std::move(b1));
  txt_w2_ = img_w2_.detach();
  txt_b2_ = img_b2_.detach();
}

Tensor FrozenEncoders::encode_image(const Tensor& images) const {
  if (images.rank() != 2 || images.dim(1) != spec_.image_dim)
    throw ad::ShapeError("encode_image: expected [B," + std::to_string(spec_.image_dim) +
                         "] images, got " + ad::to_string(images.shape()));
  auto hidden = ad::tanh(ad::add_row(ad::matmul(images, img_w1_), img_b1_));
  return ad::add_row(ad::matmul(hidden, img_w2_), img_b2_);
}

Tensor FrozenEncoders::encode_text_rows(const Tensor& flat) const {
  const std::size_t width = tokens_per_prompt() * spec_.token_dim;
  if (flat.rank() != 2 || flat.dim(1) != width)
    throw ad::ShapeError("encode_text: expected [R," + std::to_string(width) +
                         "] flattened prompts, got " + ad::to_string(flat.shape()));
  auto hidden = ad::tanh(ad::add_row(ad::matmul(flat, txt_w1_), txt_b1_));
  return ad::add_row(ad::matmul(hidden, txt_w2_), txt_b2_);
}

Tensor FrozenEncoders::encode_text(const Tensor& tokens) const {
  if (tokens.rank() != 2 || tokens.dim(0) != tokens_per_prompt() ||
      tokens.dim(1) != spec_.token_dim)
    throw ad::ShapeError("encode_text: expected " + std::to_string(tokens_per_prompt()) +
                         " tokens of dim " + std::to_string(spec_.token_dim) + ", got " +
                         ad::to_string(tokens.shape()));
  const std::size_t width = tokens.size();
  return ad::reshape(encode_text_rows(ad::reshape(tokens, {1, width})),
                     {spec_.feature_dim});
}

std::uint64_t FrozenEncoders::checksum() const {
  return moapt::checksum({img_w1_, img_b1_, img_w2_, img_b2_, txt_w1_, txt_b1_,
                          txt_w2_, txt_b2_, class_tokens_});
}

std::uint64_t checksum(const std::vector<Tensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors)
    for (double v : t.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  return h;
}

}  // namespace moapt
