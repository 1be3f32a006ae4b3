// SPDX-License-Identifier: Apache-2.0
#include "cli_main.hpp"

int main(int argc, char** argv) { return ldar::cli::run(argc, argv); }
