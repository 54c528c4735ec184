// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "sldro/cli.hpp"

int main(int argc, char** argv) { return sldro::run_cli(std::vector<std::string>(argv, argv + argc)); }
