// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "dynaip/cli.hpp"

int main(int argc, char** argv) { return dynaip::run_cli(argc, argv, std::cout, std::cerr); }
