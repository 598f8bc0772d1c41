#pragma once

#include <functional>
#include <string>

namespace ahdc {

/// Warnings go to stderr unless a sink is installed (tests capture them).
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

/// Progress lines for long-running stages; silenced by AHDC_QUIET=1.
void info(const std::string& message);

}  // namespace ahdc
