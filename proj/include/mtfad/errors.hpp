#pragma once

#include <stdexcept>
#include <string>

namespace mtfad {

// Error categories map one-to-one onto CLI exit codes (see tools/).
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct pipeline_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct divergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitPipeline = 4;
inline constexpr int kExitDivergence = 5;

}  // namespace mtfad
