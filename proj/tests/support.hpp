#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "enmcs/nn.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("enmcs_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path write(const std::string& name, const std::string& text) const {
    const auto p = path_ / name;
    std::ofstream(p) << text;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline enmcs::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  enmcs::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

/// Erdos-Renyi edge list on n nodes.
inline std::vector<enmcs::Edge> random_edges(enmcs::NodeId n, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<enmcs::Edge> edges;
  for (enmcs::NodeId u = 0; u < n; ++u)
    for (enmcs::NodeId v = u + 1; v < n; ++v)
      if (coin(rng) < p) edges.push_back({u, v});
  return edges;
}

/// Dense copy of a sparse matrix.
inline enmcs::Matrix dense(const enmcs::SparseMatrix& s) { return enmcs::Matrix(s); }

struct GradCheck {
  double worst = 0.0;        // largest relative error seen
  std::string worst_entry;   // "param[i,j]"
  std::size_t entries = 0;
};

/// Central differences of `loss` against every entry of every parameter,
/// compared with the analytic gradient already stored in Parameter::grad.
/// Relative error |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(const std::vector<enmcs::nn::Parameter*>& params,
                                 const std::function<double()>& loss, double h = 1e-5, double floor = 1e-6) {
  GradCheck out;
  for (auto* p : params) {
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      double& x = p->value.data()[k];
      const double saved = x;
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.data()[k];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++out.entries;
      if (rel > out.worst) {
        out.worst = rel;
        out.worst_entry = p->name + "[" + std::to_string(k) + "] analytic=" + std::to_string(analytic) +
                          " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace testing_support
