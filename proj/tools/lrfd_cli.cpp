#include <cstdio>

int main() {
  std::puts("lrfd: not yet wired");
  return 1;
}
