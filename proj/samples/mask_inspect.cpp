// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prints the structural attention mask for a small set of stream lengths.
//
//   mask_inspect [text image style ref]

#include <cstdio>
#include <cstdlib>

#include "stylecomp/model.hpp"

using namespace stylecomp;

int main(int argc, char** argv) {
  std::array<std::size_t, 4> len{1, 4, 4, 2};
  if (argc == 5)
    for (int i = 0; i < 4; ++i) len[static_cast<std::size_t>(i)] = std::strtoul(argv[i + 1], nullptr, 10);
  const auto m = build_structural_mask<float>(len[0], len[1], len[2], len[3]);
  const char tag[] = {'T', 'I', 'S', 'R'};
  std::string labels;
  for (std::size_t s = 0; s < 4; ++s) labels += std::string(len[s], tag[s]);
  std::printf("   %s\n", labels.c_str());
  for (std::size_t q = 0; q < m.total(); ++q) {
    std::printf("%c  ", labels[q]);
    for (std::size_t k = 0; k < m.total(); ++k) std::putchar(m.blocked(q, k) ? 'x' : '.');
    std::putchar('\n');
  }
  std::printf("%zu of %zu pairs blocked\n", m.blocked_count(), m.total() * m.total());
  return 0;
}
