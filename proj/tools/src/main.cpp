#include <malloc.h>

#include <iostream>
#include <string>
#include <vector>

#include "restgate/cli.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees the same large activation buffers every step;
  // keeping them in the heap avoids re-faulting fresh pages each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return restgate::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
