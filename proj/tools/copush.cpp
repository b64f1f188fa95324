#include <iostream>
#include <string>
#include <vector>

#include "copush/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return copush::cli::run(args, std::cerr, std::cerr);
}
