#include "util.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include "error.hpp"

namespace gdpo {

int max_workers() {
  const char* env = std::getenv("GDPO_MAX_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  const int v = std::atoi(env);
  return std::clamp(v, 1, 64);
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_io("cannot write file " + path);
  os << content;
  if (!os) throw_io("failed writing file " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_io("cannot read file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w)
    threads.emplace_back([=, &fn]() {
      for (int i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : threads) t.join();
}

}  // namespace gdpo
