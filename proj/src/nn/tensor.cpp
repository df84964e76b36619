#include "rawvsr/nn/tensor.h"

#include <sstream>

namespace rawvsr::nn {

template <typename T>
std::string Tensor<T>::shape_str() const {
  std::ostringstream os;
  os << "[" << n << "," << c << "," << h << "," << w << "]";
  return os.str();
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace rawvsr::nn
