#include <iostream>
#include <string>
#include <vector>

#include "routenav/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return routenav::run_subcommand(args, std::cout, std::cerr);
}
