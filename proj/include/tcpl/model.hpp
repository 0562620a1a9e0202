#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tcpl/autodiff.hpp"
#include "tcpl/corpus.hpp"

namespace tcpl {

struct ModelDims {
  std::size_t input = 16;
  std::size_t hidden = 64;
  std::size_t embedding = 32;
  bool normalize = false;  // scale embeddings to unit length
};

/// f_theta: mean-pool over frames, then Linear -> ReLU -> Linear, optionally
/// followed by unit-length normalization.
struct EncoderParams {
  ModelDims dims;
  Var w1, b1, w2, b2;

  std::vector<Var> parameters() const { return {w1, b1, w2, b2}; }
};

/// g_W: Z = W^T e + b, W is (embedding x m_l).
struct ClassifierParams {
  Var w, b;

  std::size_t classes() const { return b->value.size(); }
  std::vector<Var> parameters() const { return {w, b}; }
};

namespace detail {

inline Tensor uniform_weights(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({fan_in, fan_out});
  for (double& v : w.values()) v = dist(rng);
  return w;
}

}  // namespace detail

inline ClassifierParams init_classifier(std::mt19937_64& rng, std::size_t embedding, std::size_t classes) {
  if (embedding == 0 || classes == 0) throw Error(ErrorCode::InvalidConfig, "classifier dims must be >= 1");
  return {parameter(detail::uniform_weights(rng, embedding, classes)), parameter(Tensor({classes}))};
}

inline EncoderParams init_encoder(std::mt19937_64& rng, ModelDims dims) {
  if (dims.input == 0 || dims.hidden == 0 || dims.embedding == 0)
    throw Error(ErrorCode::InvalidConfig, "encoder dims must be >= 1");
  EncoderParams enc;
  enc.dims = dims;
  enc.w1 = parameter(detail::uniform_weights(rng, dims.input, dims.hidden));
  enc.b1 = parameter(Tensor({dims.hidden}));
  enc.w2 = parameter(detail::uniform_weights(rng, dims.hidden, dims.embedding));
  enc.b2 = parameter(Tensor({dims.embedding}));
  return enc;
}

struct Model {
  EncoderParams encoder;
  ClassifierParams classifier;
};

inline Model init_model(std::uint64_t seed, ModelDims dims, std::size_t classes) {
  std::mt19937_64 rng(seed);
  Model m;
  m.encoder = init_encoder(rng, dims);
  m.classifier = init_classifier(rng, dims.embedding, classes);
  return m;
}

inline void check_frames(const EncoderParams& enc, const Tensor& frames) {
  if (frames.rank() != 2 || frames.dim(0) == 0) throw Error(ErrorCode::EmptyTracklet, "tracklet has no frames");
  if (frames.dim(1) != enc.dims.input)
    throw Error(ErrorCode::DimensionMismatch, "frame dim " + std::to_string(frames.dim(1)) + " vs encoder input " +
                                                  std::to_string(enc.dims.input));
}

/// Differentiable embedding of a stack of frames (rows).
inline Var embed_frames(const EncoderParams& enc, const Tensor& frames) {
  check_frames(enc, frames);
  Var pooled = mean_over_axis(constant(frames), 0);
  Var hidden = relu(add(matmul(pooled, enc.w1), enc.b1));
  Var out = add(matmul(hidden, enc.w2), enc.b2);
  return enc.dims.normalize ? l2_normalize(out) : out;
}

inline Var embed_tracklet(const EncoderParams& enc, const Tracklet& t) { return embed_frames(enc, t.frames); }

/// Graph-free forward pass; bit-identical to embed_frames(...)->value.
inline Tensor embed_value(const EncoderParams& enc, const Tensor& frames) {
  check_frames(enc, frames);
  Tensor pooled = kernels::mean_over_axis(frames, 0);
  Tensor hidden = kernels::relu(kernels::add(kernels::matmul(pooled, enc.w1->value), enc.b1->value));
  Tensor out = kernels::add(kernels::matmul(hidden, enc.w2->value), enc.b2->value);
  return enc.dims.normalize ? kernels::l2_normalize(out) : out;
}

inline std::vector<Tensor> embed_all(const EncoderParams& enc, const std::vector<Tracklet>& tracklets) {
  std::vector<Tensor> out;
  out.reserve(tracklets.size());
  for (const auto& t : tracklets) out.push_back(embed_value(enc, t.frames));
  return out;
}

inline Var classify(const ClassifierParams& cls, const Var& embedding) {
  if (embedding->value.rank() != 1 || embedding->value.size() != cls.w->value.dim(0))
    throw Error(ErrorCode::DimensionMismatch, "embedding " + shape_string(embedding->value.shape()) +
                                                  " vs classifier " + shape_string(cls.w->value.shape()));
  return add(matmul(embedding, cls.w), cls.b);
}

// Checkpoint: little-endian binary.
//   "TCPLCKPT" | u32 version=1 | u64 input, hidden, embedding, normalize, classes
//   | u64 len + rng state text | 6 x (u64 count + count f64): w1 b1 w2 b2 W b
struct Checkpoint {
  Model model;
  std::string rng_state;
};

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorCode::ParseError, "truncated checkpoint");
  return v;
}

inline void write_tensor(std::ostream& out, const Tensor& t) {
  write_u64(out, t.size());
  out.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& in, Shape shape) {
  if (read_u64(in) != shape_size(shape)) throw Error(ErrorCode::ParseError, "checkpoint tensor size mismatch");
  Tensor t(std::move(shape));
  in.read(reinterpret_cast<char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw Error(ErrorCode::ParseError, "truncated checkpoint");
  return t;
}

inline constexpr char kCheckpointMagic[8] = {'T', 'C', 'P', 'L', 'C', 'K', 'P', 'T'};

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& enc = ckpt.model.encoder;
  out.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  detail::write_u64(out, enc.dims.input);
  detail::write_u64(out, enc.dims.hidden);
  detail::write_u64(out, enc.dims.embedding);
  detail::write_u64(out, enc.dims.normalize ? 1 : 0);
  detail::write_u64(out, ckpt.model.classifier.classes());
  detail::write_u64(out, ckpt.rng_state.size());
  out.write(ckpt.rng_state.data(), static_cast<std::streamsize>(ckpt.rng_state.size()));
  for (const Var& p : enc.parameters()) detail::write_tensor(out, p->value);
  for (const Var& p : ckpt.model.classifier.parameters()) detail::write_tensor(out, p->value);
}

inline Checkpoint load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof magic) != 0)
    throw Error(ErrorCode::ParseError, "not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || version != 1) throw Error(ErrorCode::ParseError, "unsupported checkpoint version");

  ModelDims dims;
  dims.input = detail::read_u64(in);
  dims.hidden = detail::read_u64(in);
  dims.embedding = detail::read_u64(in);
  const std::uint64_t flags = detail::read_u64(in);
  if (flags > 1) throw Error(ErrorCode::ParseError, "invalid normalize flag");
  dims.normalize = flags == 1;
  const std::size_t classes = detail::read_u64(in);
  if (dims.input == 0 || dims.hidden == 0 || dims.embedding == 0 || classes == 0)
    throw Error(ErrorCode::ParseError, "checkpoint has zero dimension");

  Checkpoint ckpt;
  ckpt.rng_state.resize(detail::read_u64(in));
  in.read(ckpt.rng_state.data(), static_cast<std::streamsize>(ckpt.rng_state.size()));
  if (!in) throw Error(ErrorCode::ParseError, "truncated checkpoint");

  auto& enc = ckpt.model.encoder;
  enc.dims = dims;
  enc.w1 = parameter(detail::read_tensor(in, {dims.input, dims.hidden}));
  enc.b1 = parameter(detail::read_tensor(in, {dims.hidden}));
  enc.w2 = parameter(detail::read_tensor(in, {dims.hidden, dims.embedding}));
  enc.b2 = parameter(detail::read_tensor(in, {dims.embedding}));
  ckpt.model.classifier.w = parameter(detail::read_tensor(in, {dims.embedding, classes}));
  ckpt.model.classifier.b = parameter(detail::read_tensor(in, {classes}));
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  save_checkpoint(out, ckpt);
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return load_checkpoint(in);
}

inline std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline std::mt19937_64 rng_from_state(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw Error(ErrorCode::ParseError, "invalid RNG state");
  return rng;
}

/// Deep copy: fresh parameter leaves with the same values, gradients zeroed.
inline Model clone_model(const Model& m) {
  Model c;
  c.encoder.dims = m.encoder.dims;
  c.encoder.w1 = parameter(m.encoder.w1->value);
  c.encoder.b1 = parameter(m.encoder.b1->value);
  c.encoder.w2 = parameter(m.encoder.w2->value);
  c.encoder.b2 = parameter(m.encoder.b2->value);
  c.classifier.w = parameter(m.classifier.w->value);
  c.classifier.b = parameter(m.classifier.b->value);
  return c;
}

}  // namespace tcpl
