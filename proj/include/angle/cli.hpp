#pragma once

namespace angle {

// Full command-line driver. Returns the process exit code: 0 on success,
// 2 for configuration and usage problems, 3 for data and file I/O problems,
// 4 for numerical failures or anything unexpected.
int run_cli(int argc, const char* const* argv);

}  // namespace angle
