#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace prevalid {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Index = Eigen::Index;

enum class ErrorCode {
  InvalidArgument,
  SingularDesign,
  LeverageOne,
  NoConvergence,
  DegenerateResponse,
  CollinearPV,
  ZeroResidual,
  Separation,
  SingularActiveSet,
  DegenerateProbability,
  NotPD,
  DegenerateG,
  TooManyFailures,
  Io,
};

const char* to_string(ErrorCode code);

// Every failure in the library surfaces as this exception; the code is what
// callers (and the CLI's error JSON) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, msg);
}

/// SplitMix64 finalizer. Used to derive independent substream seeds from a
/// master seed and a counter, so parallel work never shares an engine.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix64(mix64(master) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  bool bernoulli(double prob) { return uniform() < prob; }

  Mat normal_matrix(Index rows, Index cols, double sd = 1.0) {
    Mat m(rows, cols);
    // column-major fill order is part of the reproducibility contract
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = sd * normal();
    return m;
  }
  Vec normal_vector(Index n, double sd = 1.0) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v(i) = sd * normal();
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Resolve a user thread count: 0 means hardware concurrency.
inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs body(i) for i in [0, count) on up to `threads` workers. Work is
/// handed out by index, so any result written to slot i is independent of
/// scheduling. The first exception thrown by a body is rethrown here.
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
  const int workers =
      std::max(1, std::min<int>(resolve_threads(threads), static_cast<int>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace prevalid
