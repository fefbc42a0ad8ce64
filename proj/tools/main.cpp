#include <string>
#include <vector>

#include "cli/cli.hpp"

int main(int argc, char** argv) {
  return tdir::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
