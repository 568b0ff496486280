#include <string>
#include <vector>

#include "npsn/cli.hpp"

int main(int argc, char** argv) {
  return npsn::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
