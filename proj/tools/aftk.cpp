// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "aftk/cli.hpp"

int main(int argc, char** argv) {
  return aftk::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
