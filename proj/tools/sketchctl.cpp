// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "sketch/cli.hpp"

int main(int argc, char** argv) { return sketch::run_cli(argc, argv, std::cout, std::cerr); }
