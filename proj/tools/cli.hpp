// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// The tinyvid command line: subcommand dispatch over the shared config.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tinyvid/tensor.hpp"

namespace tinyvid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // I/O and other runtime failures
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

/// args excludes the program name, e.g. {"sample", "--out", "run"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Binary P6 raster of frame `f` of a [F, 3, H, W] clip in [0, 1].
void write_p6(const std::string& path, const Tensor& clip, long f);

}  // namespace tinyvid::cli
