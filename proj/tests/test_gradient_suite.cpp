#include <gtest/gtest.h>

#include "lgr/errors.hpp"
#include "lgr/gradient_suite.hpp"

using namespace lgr;

TEST(GradientSuite, EveryOperationIsCheckedOnAnInformativeInstance) {
  const auto ops = gradient_suite_ops();
  EXPECT_GE(ops.size(), 12u);
  const auto cases = run_gradient_suite({11});
  ASSERT_EQ(cases.size(), ops.size());
  for (const GradientCase& c : cases) {
    EXPECT_LE(c.report.worst, 1e-4) << c.op;
    EXPECT_GE(c.report.max_abs_grad, kMinGradient) << c.op;
    EXPECT_GT(c.report.coords_checked, 0u) << c.op;
  }
}

TEST(GradientSuite, SelectionAndUnknownNames) {
  const auto cases = run_gradient_suite({1, 2}, {"pyramid"});
  ASSERT_EQ(cases.size(), 2u);
  EXPECT_EQ(cases[1].op, "pyramid");
  EXPECT_EQ(cases[1].seed, 2u);
  EXPECT_THROW(run_gradient_suite({1}, {"no_such_op"}), ArgumentError);
}

TEST(GradientSuite, Deterministic) {
  const auto a = run_gradient_suite({3}, {"cluster_step", "head"});
  const auto b = run_gradient_suite({3}, {"cluster_step", "head"});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].report.worst, b[i].report.worst);
    EXPECT_EQ(a[i].attempts, b[i].attempts);
  }
}
