// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include "hetmerge/cli.h"

int main(int argc, char** argv) {
  return hetmerge::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
