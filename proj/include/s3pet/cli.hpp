#pragma once

namespace s3pet {

/// Parses argv and runs one pipeline command; returns the process exit
/// status (0 on success, nonzero with a diagnostic on stderr).
int run_cli(int argc, const char* const* argv);

}  // namespace s3pet
