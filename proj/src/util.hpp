#pragma once

#include <functional>
#include <string>

namespace gdpo {

inline constexpr const char* kVersion = "0.1.0";

// GDPO_MAX_WORKERS caps the worker count for trajectory sampling; defaults
// to 1 (fully serial).
int max_workers();

// fixed %.17g formatting so emitted CSVs are byte-stable across reruns
std::string fmt_g17(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Runs fn(0..n-1), splitting contiguous index ranges across at most
// `workers` threads. Results must be written to per-index slots; the call is
// deterministic regardless of the worker count.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace gdpo
