#pragma once

// Canned 64-bit gradient verification: every differentiable primitive
// and every loss is checked against central finite differences on
// several random small shapes.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace glifuse {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int shapes = 0;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  bool all_passed = true;
};

GradSuiteResult run_gradient_suite(std::uint64_t seed = 7,
                                   int shapes_per_op = 5,
                                   double tolerance = 1e-4);

// One line per entry plus a summary; returns all_passed.
bool print_gradient_suite(std::ostream& out, const GradSuiteResult& result);

}  // namespace glifuse
