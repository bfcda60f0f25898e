#pragma once

#include <cmath>

namespace arisaoi {

template <typename Scalar>
Scalar db_to_linear(Scalar db) {
  return std::pow(Scalar(10), db / Scalar(10));
}

template <typename Scalar>
Scalar linear_to_db(Scalar linear) {
  return Scalar(10) * std::log10(linear);
}

// dBm -> watts
template <typename Scalar>
Scalar dbm_to_watts(Scalar dbm) {
  return db_to_linear(dbm - Scalar(30));
}

template <typename Scalar>
Scalar watts_to_dbm(Scalar watts) {
  return linear_to_db(watts) + Scalar(30);
}

}  // namespace arisaoi
