#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace enlm::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kIngestion = 3,
  kNumerical = 4,
  kFailure = 5,
};

inline constexpr const char* kConfigEnv = "ENTITYNLM_CONFIG";
inline constexpr int kReportSchemaVersion = 1;

// Entry point behind the entitynlm binary. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace enlm::cli
