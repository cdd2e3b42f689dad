#include <iostream>
#include <string>
#include <vector>

#include "faultrange_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return faultrange::cli::dispatch(args, std::cout, std::cerr);
}
