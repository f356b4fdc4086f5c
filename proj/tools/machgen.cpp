// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#include "machgen/pipeline.hpp"

int main(int argc, char** argv) {
  return machgen::pipeline::run_cli(argc, argv);
}
