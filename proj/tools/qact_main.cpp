// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/cli.hpp"

int main(int argc, char** argv) { return qact::cli::main_entry(argc, argv); }
