#include "softstack/cli.hpp"

int main(int argc, char** argv) {
    return softstack::cli::cli_main(argc, argv);
}
