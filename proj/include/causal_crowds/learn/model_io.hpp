#pragma once

#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>

#include "causal_crowds/dataset_io.hpp"
#include "causal_crowds/learn/train.hpp"

namespace causal_crowds::learn {

inline constexpr std::string_view kModelMagic = "causal-crowds-toy-model";
inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline void append_vector(std::string& out, std::string_view tag, const Eigen::VectorXd& v) {
  out += tag;
  out += ' ';
  out += std::to_string(v.size());
  char buf[32];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto r = std::to_chars(buf, buf + sizeof buf, v[i]);
    out += ' ';
    out.append(buf, r.ptr);
  }
  out += '\n';
}

inline Eigen::VectorXd parse_vector(std::istringstream& line, std::string_view tag) {
  std::string got;
  long long n = -1;
  line >> got >> n;
  if (got != tag || n < 0) throw Error(ErrorCode::ParseError, "model file: expected '" + std::string(tag) + "'");
  Eigen::VectorXd v(n);
  for (long long i = 0; i < n; ++i) {
    std::string tok;
    if (!(line >> tok)) throw Error(ErrorCode::ParseError, "model file: truncated '" + std::string(tag) + "'");
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v[i]);
    if (r.ec != std::errc{} || r.ptr != tok.data() + tok.size() || !std::isfinite(v[i])) {
      throw Error(ErrorCode::ParseError, "model file: bad number '" + tok + "'");
    }
  }
  std::string extra;
  if (line >> extra) throw Error(ErrorCode::ParseError, "model file: trailing data after '" + std::string(tag) + "'");
  return v;
}

}  // namespace detail

/// Plain text; numbers use the shortest round-trip form so save/load is exact.
inline std::string serialize_model(const ToyModel& m) {
  const ModelDims d = m.params.dims();
  std::string out = std::string(kModelMagic) + " " + std::to_string(kModelFormatVersion) + "\n";
  out += "dims " + std::to_string(d.input) + " " + std::to_string(d.hidden) + " " + std::to_string(d.latent) + " " +
         std::to_string(d.projection) + " " + std::to_string(d.output) + "\n";
  detail::append_vector(out, "normalizer", m.normalizer.flatten());
  detail::append_vector(out, "params", m.params.flatten());
  return out;
}

inline ToyModel parse_model(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto next = [&]() {
    if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "model file: unexpected end");
    return std::istringstream(line);
  };
  {
    auto s = next();
    std::string magic;
    int version = 0;
    s >> magic >> version;
    if (magic != kModelMagic) throw Error(ErrorCode::ParseError, "not a toy model file");
    if (version != kModelFormatVersion) {
      throw Error(ErrorCode::InvariantViolation, "unsupported model format version " + std::to_string(version));
    }
  }
  ModelDims d;
  {
    auto s = next();
    std::string tag;
    s >> tag >> d.input >> d.hidden >> d.latent >> d.projection >> d.output;
    if (tag != "dims" || !s || d.hidden <= 0 || d.latent <= 0 || d.projection <= 0) {
      throw Error(ErrorCode::ParseError, "model file: bad dims line");
    }
  }
  if (d.input != kInputDim || d.output != kOutputDim) {
    throw Error(ErrorCode::DimensionMismatch, "model dimensions do not match the featurizer");
  }
  ToyModel m;
  {
    auto s = next();
    m.normalizer = Normalizer::unflatten(detail::parse_vector(s, "normalizer"));
  }
  {
    auto s = next();
    m.params = Params::unflatten(d, detail::parse_vector(s, "params"));
  }
  return m;
}

inline void save_model(const std::filesystem::path& path, const ToyModel& m) {
  io::write_file(path, serialize_model(m));
}

inline ToyModel load_model(const std::filesystem::path& path) { return parse_model(io::read_file(path)); }

}  // namespace causal_crowds::learn
