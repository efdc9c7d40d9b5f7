#include "doctest.h"

#include "support/grad_suite.hpp"

TEST_CASE("analytic gradients agree with central differences") {
    for (const auto& c : cxdi::testing::gradient_suite(20240611)) {
        INFO(c.name << ": probes " << c.probes << ", kinks " << c.kinks << ", max rel " << c.max_rel << " at " << c.worst_index << " (analytic " << c.worst_analytic
             << ", numeric " << c.worst_numeric << ")");
        CHECK(c.ok());
    }
}
