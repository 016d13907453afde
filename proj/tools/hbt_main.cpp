#include <iostream>

#include "hbt/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hbt::run_cli(args, std::cout, std::cerr);
}
