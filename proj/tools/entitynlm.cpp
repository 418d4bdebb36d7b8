#include <iostream>
#include <string>
#include <vector>

#include "entitynlm/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return enlm::cli::run(args, std::cout, std::cerr);
}
