#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "s3im/cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // keep freed tensor storage in the heap instead of returning it to the kernel every step
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    std::vector<std::string> args(argv + 1, argv + argc);
    return s3im::cli::run(args);
}
