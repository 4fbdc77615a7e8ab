#include "urec/cli.hpp"

#include <malloc.h>

#include <iostream>

auto main(int argc, char **argv) -> int
{
  // Activations are a few hundred KiB each; keep them on the heap instead of
  // paying an mmap/munmap round trip per tensor.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return urec::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
