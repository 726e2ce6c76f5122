#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace featdesc {

/// A named tensor held in row-major order. Values are widened to double on
/// load regardless of on-disk dtype.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int64_t> shape);
};

/// Container for named tensors using the safetensors layout: an 8-byte
/// little-endian header length, a UTF-8 JSON header mapping tensor name to
/// {dtype, shape, data_offsets}, then raw little-endian tensor data.
/// Supported dtypes: F32 and F64. Files are written as F64.
class TensorStore {
 public:
  TensorStore() = default;

  static TensorStore load(const std::string& path);
  void save(const std::string& path) const;

  bool has(const std::string& name) const { return tensors_.count(name) > 0; }

  /// Throws MissingTensor when absent.
  const Tensor& get(const std::string& name) const;

  /// Throws MissingTensor / ShapeMismatch (with expected vs actual shapes).
  const Tensor& get_checked(const std::string& name,
                            const std::vector<int64_t>& shape) const;

  void put(const std::string& name, Tensor tensor);

  /// 2-D tensor as an Eigen matrix (row-major source copied into Eigen's
  /// default layout).
  Eigen::MatrixXd matrix(const std::string& name) const;
  /// 1-D tensor as a column vector.
  Eigen::VectorXd vector(const std::string& name) const;
  /// Slice [index, :, :] of a 3-D tensor.
  Eigen::MatrixXd matrix_slice(const std::string& name, int64_t index) const;
  /// Slice [index, :] of a 2-D tensor.
  Eigen::VectorXd vector_slice(const std::string& name, int64_t index) const;

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  static Tensor from_matrix(const Eigen::MatrixXd& m);
  static Tensor from_vector(const Eigen::VectorXd& v);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace featdesc
