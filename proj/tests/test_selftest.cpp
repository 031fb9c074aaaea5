// Copyright (C) 2026 The hiprompt Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "hiprompt/selftest.hpp"

using namespace hiprompt;

TEST(Selftest, CleanBuildPasses) {
    const SelftestReport r = selftest();
    EXPECT_TRUE(r.passed()) << r.text();
    EXPECT_EQ(r.checks.size(), 4u);
}

TEST(Selftest, DeterministicText) { EXPECT_EQ(selftest().text(), selftest().text()); }

TEST(Selftest, CorruptKernelFailsReconstruction) {
    SelftestOptions opts;
    opts.kernel_gain = 1.05;
    const SelftestReport r = selftest(opts);
    EXPECT_FALSE(r.passed());
    EXPECT_FALSE(r.checks[0].passed) << r.text();
    EXPECT_NE(r.text().find("FAIL reconstruction identity"), std::string::npos);
    // The hook is restored afterwards.
    EXPECT_EQ(detail::kernel_gain_fault(), 1.0);
    EXPECT_TRUE(selftest().passed());
}
