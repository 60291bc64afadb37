#pragma once
/**
 * @file common.hpp
 * @brief Error types, seed streams and small shared utilities.
 */

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace apinn {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
  virtual const char *kind() const noexcept { return "error"; }
};

class UsageError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
  const char *kind() const noexcept override { return "usage"; }
};

/// Malformed or inconsistent input data (files, shapes, ranges).
class DataError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  const char *kind() const noexcept override { return "data"; }
};

/// Non-finite values, failed factorizations, solver non-convergence.
class NumericalError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
  const char *kind() const noexcept override { return "numerical"; }
};

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for a named sub-stream of `root` ("data", "init", "split", ...).
/// Stable under changes to sibling streams.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(root ^ mix64(h));
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                    std::uint64_t index) noexcept {
  return mix64(derive_seed(root, stream) + mix64(index + 1));
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers write results
/// into per-index slots so output order never depends on scheduling.
inline void parallel_for(std::size_t n, std::size_t jobs,
                         const std::function<void(std::size_t)> &fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr first_error;
  std::vector<std::jthread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= n || first_error) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  if (first_error) std::rethrow_exception(first_error);
}

/// Writes `contents` to a temp file next to `path`, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path &path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file '" + path.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("short write to '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace apinn
