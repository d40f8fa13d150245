#include "hyspec/error.hpp"

#include <mutex>

namespace hyspec {
namespace {
std::mutex g_mu;
std::vector<Warning>& sink() {
  static std::vector<Warning> w;
  return w;
}
}  // namespace

void warn(std::string code, std::string message) {
  std::lock_guard lk(g_mu);
  sink().push_back({std::move(code), std::move(message)});
}

std::vector<Warning> drain_warnings() {
  std::lock_guard lk(g_mu);
  std::vector<Warning> out;
  out.swap(sink());
  return out;
}

std::size_t pending_warnings() {
  std::lock_guard lk(g_mu);
  return sink().size();
}

}  // namespace hyspec
