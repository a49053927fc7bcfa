// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "advlora/cli.hpp"

int main(int argc, char** argv) { return advlora::cli::run_cli(argc, argv, std::cout, std::cerr); }
