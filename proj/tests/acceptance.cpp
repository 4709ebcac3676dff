// Acceptance suite: one pass/fail line per criterion. Placeholder until the
// full suite lands.
#include <cstdio>
int main() {
  std::printf("acceptance suite not yet implemented\n");
  return 1;
}
