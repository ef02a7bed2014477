#include "mlsl/cli.hpp"

int main(int argc, char** argv) {
    return mlsl::cli_main(argc, argv);
}
