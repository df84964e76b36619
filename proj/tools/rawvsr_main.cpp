#include <string>
#include <vector>

#include "rawvsr/cli.h"

int main(int argc, char** argv) {
  return rawvsr::cli::run(std::vector<std::string>(argv, argv + argc));
}
