#include "retention/error.hpp"
#include "retention/random.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace retention {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::BadEventCode: return "BadEventCode";
    case ErrorCode::NonPositiveWaitingTime: return "NonPositiveWaitingTime";
    case ErrorCode::OrphanVisit: return "OrphanVisit";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::NonPositiveDelta: return "NonPositiveDelta";
    case ErrorCode::EmptyStratum: return "EmptyStratum";
    case ErrorCode::NonPositiveTime: return "NonPositiveTime";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::AllDivergent: return "AllDivergent";
    case ErrorCode::TooFewChains: return "TooFewChains";
    case ErrorCode::UnknownStratum: return "UnknownStratum";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::OneClassOnly: return "OneClassOnly";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ArtifactLoadError: return "ArtifactLoadError";
    case ErrorCode::BindError: return "BindError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("RETENTION_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  int workers = std::min<std::size_t>(static_cast<std::size_t>(resolve_threads(threads)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace retention
