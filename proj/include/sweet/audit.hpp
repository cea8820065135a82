#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sweet {

struct AuditResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;  // audited coordinates (support with non-negligible gradient)
};

// Central finite-difference audits of analytic gradients on randomized
// fixtures from the slot environment with a narrow linear policy.
AuditResult audit_bt_loss(std::uint64_t seed);
AuditResult audit_dpo_loss(std::uint64_t seed);
AuditResult audit_multiturn_dpo_loss(std::uint64_t seed);
AuditResult audit_rft_nll(std::uint64_t seed);
AuditResult audit_value_bce(std::uint64_t seed);

std::vector<AuditResult> run_gradient_audits(std::uint64_t seed);

}  // namespace sweet
