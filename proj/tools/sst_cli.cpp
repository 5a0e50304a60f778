#include <iostream>

#include "sst/pipeline.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sst::run_cli(args, std::cout, std::cerr);
}
