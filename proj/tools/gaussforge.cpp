// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

int main() {
    std::printf("gaussforge: no subcommands wired up yet\n");
    return 2;
}
