// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "mgf/cli.hpp"

int main(int argc, char** argv) { return mgf::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }
