#include "featdesc/tensor_store.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "featdesc/error.hpp"

namespace featdesc {

namespace {

std::string shape_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(t.numel()), 0.0);
  return t;
}

TensorStore TensorStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::IoError, "cannot open tensor file '" + path + "'");

  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) raise(ErrorCode::ParseError, "truncated tensor header in '" + path + "'");
  if (header_len == 0 || header_len > (64u << 20)) {
    raise(ErrorCode::ParseError, "implausible header length in '" + path + "'");
  }

  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) raise(ErrorCode::ParseError, "truncated tensor header in '" + path + "'");

  std::vector<char> payload{std::istreambuf_iterator<char>(in),
                            std::istreambuf_iterator<char>()};

  nlohmann::json meta = nlohmann::json::parse(header, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) {
    raise(ErrorCode::ParseError, "tensor header is not valid JSON in '" + path + "'");
  }

  TensorStore store;
  for (auto& [name, entry] : meta.items()) {
    if (name == "__metadata__") continue;
    const std::string dtype = entry.at("dtype").get<std::string>();
    Tensor t;
    t.shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > payload.size()) {
      raise(ErrorCode::ParseError, "bad data_offsets for tensor '" + name + "'");
    }
    const uint64_t bytes = offsets[1] - offsets[0];
    const size_t numel = static_cast<size_t>(t.numel());
    const char* src = payload.data() + offsets[0];
    t.data.resize(numel);
    if (dtype == "F64") {
      if (bytes != numel * sizeof(double)) {
        raise(ErrorCode::ParseError, "byte count mismatch for tensor '" + name + "'");
      }
      std::memcpy(t.data.data(), src, bytes);
    } else if (dtype == "F32") {
      if (bytes != numel * sizeof(float)) {
        raise(ErrorCode::ParseError, "byte count mismatch for tensor '" + name + "'");
      }
      for (size_t i = 0; i < numel; ++i) {
        float v;
        std::memcpy(&v, src + i * sizeof(float), sizeof(float));
        t.data[i] = static_cast<double>(v);
      }
    } else {
      raise(ErrorCode::ParseError, "unsupported dtype '" + dtype + "' for tensor '" + name + "'");
    }
    store.tensors_.emplace(name, std::move(t));
  }
  return store;
}

void TensorStore::save(const std::string& path) const {
  nlohmann::json meta = nlohmann::json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(double);
    meta[name] = {{"dtype", "F64"},
                  {"shape", t.shape},
                  {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  const std::string header = meta.dump();
  const uint64_t header_len = header.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::IoError, "cannot write tensor file '" + path + "'");
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : tensors_) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) raise(ErrorCode::IoError, "short write to tensor file '" + path + "'");
}

const Tensor& TensorStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    raise(ErrorCode::MissingTensor, "tensor '" + name + "' not found in container");
  }
  return it->second;
}

const Tensor& TensorStore::get_checked(const std::string& name,
                                       const std::vector<int64_t>& shape) const {
  const Tensor& t = get(name);
  if (t.shape != shape) {
    raise(ErrorCode::ShapeMismatch, "tensor '" + name + "' expected shape " +
                                        shape_string(shape) + " but found " +
                                        shape_string(t.shape));
  }
  return t;
}

void TensorStore::put(const std::string& name, Tensor tensor) {
  tensors_[name] = std::move(tensor);
}

Eigen::MatrixXd TensorStore::matrix(const std::string& name) const {
  const Tensor& t = get(name);
  if (t.shape.size() != 2) {
    raise(ErrorCode::ShapeMismatch, "tensor '" + name + "' is not 2-D");
  }
  Eigen::MatrixXd m(t.shape[0], t.shape[1]);
  for (int64_t r = 0; r < t.shape[0]; ++r) {
    for (int64_t c = 0; c < t.shape[1]; ++c) {
      m(r, c) = t.data[static_cast<size_t>(r * t.shape[1] + c)];
    }
  }
  return m;
}

Eigen::VectorXd TensorStore::vector(const std::string& name) const {
  const Tensor& t = get(name);
  if (t.shape.size() != 1) {
    raise(ErrorCode::ShapeMismatch, "tensor '" + name + "' is not 1-D");
  }
  return Eigen::Map<const Eigen::VectorXd>(t.data.data(), t.shape[0]);
}

Eigen::MatrixXd TensorStore::matrix_slice(const std::string& name, int64_t index) const {
  const Tensor& t = get(name);
  if (t.shape.size() != 3) {
    raise(ErrorCode::ShapeMismatch, "tensor '" + name + "' is not 3-D");
  }
  if (index < 0 || index >= t.shape[0]) {
    raise(ErrorCode::IndexOutOfRange, "slice index out of range for '" + name + "'");
  }
  const int64_t rows = t.shape[1];
  const int64_t cols = t.shape[2];
  Eigen::MatrixXd m(rows, cols);
  const double* base = t.data.data() + index * rows * cols;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      m(r, c) = base[r * cols + c];
    }
  }
  return m;
}

Eigen::VectorXd TensorStore::vector_slice(const std::string& name, int64_t index) const {
  const Tensor& t = get(name);
  if (t.shape.size() != 2) {
    raise(ErrorCode::ShapeMismatch, "tensor '" + name + "' is not 2-D");
  }
  if (index < 0 || index >= t.shape[0]) {
    raise(ErrorCode::IndexOutOfRange, "slice index out of range for '" + name + "'");
  }
  return Eigen::Map<const Eigen::VectorXd>(t.data.data() + index * t.shape[1], t.shape[1]);
}

Tensor TensorStore::from_matrix(const Eigen::MatrixXd& m) {
  Tensor t;
  t.shape = {m.rows(), m.cols()};
  t.data.resize(static_cast<size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      t.data[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    }
  }
  return t;
}

Tensor TensorStore::from_vector(const Eigen::VectorXd& v) {
  Tensor t;
  t.shape = {v.size()};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TokenizationFailed: return "TokenizationFailed";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::Precondition: return "Precondition";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::RequestError: return "RequestError";
    case ErrorCode::CalibrationFailed: return "CalibrationFailed";
    case ErrorCode::DependencyMissing: return "DependencyMissing";
    case ErrorCode::IoError: return "IoError";
  }
  return "Error";
}

std::string hex64(uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace featdesc
