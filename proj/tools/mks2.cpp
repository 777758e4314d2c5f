#include <cstdio>

int main() {
    std::puts("mks2: placeholder");
    return 0;
}
