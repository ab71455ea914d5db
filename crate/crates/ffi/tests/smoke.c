#include <math.h>
#include <stdio.h>
#include "photoapp.h"

#define CHECK(call)                                                      \
  do {                                                                   \
    PaStatus s_ = (call);                                                \
    if (s_ != PA_STATUS_OK) {                                            \
      char msg_[256];                                                    \
      pa_last_error_message(msg_, sizeof msg_);                          \
      fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, msg_);     \
      return 1;                                                          \
    }                                                                    \
  } while (0)

int main(void) {
  PaBasis *basis = NULL;
  PaEnvMap *env = NULL;
  PaStack *stack = NULL;
  float weights[3 * 8];
  float images[2 * 4 * 3 * 3];
  float out[4 * 3 * 3];
  size_t w = 0, h = 0, n = 0;

  CHECK(pa_basis_fibonacci(8, &basis));
  CHECK(pa_envmap_constant(64, 32, 1.0f, 1.0f, 1.0f, &env));
  CHECK(pa_envmap_resample(env, basis, weights, pa_basis_len(basis) * 3));
  double sum = 0.0;
  for (size_t i = 0; i < 8; i++) sum += weights[3 * i];
  if (fabs(sum - 4.0 * M_PI) > 0.05 * 4.0 * M_PI) {
    fprintf(stderr, "weight sum %f\n", sum);
    return 1;
  }

  for (size_t i = 0; i < sizeof images / sizeof images[0]; i++) images[i] = (float)i;
  CHECK(pa_stack_new(4, 3, 2, images, sizeof images / sizeof images[0], &stack));
  CHECK(pa_stack_info(stack, &w, &h, &n));
  if (w != 4 || h != 3 || n != 2) return 1;
  float two[6] = {0.0f, 0.0f, 0.0f, 1.0f, 1.0f, 1.0f};
  CHECK(pa_relight(stack, two, 6, out, sizeof out / sizeof out[0]));
  for (size_t i = 0; i < 36; i++)
    if (out[i] != images[36 + i]) return 1;

  if (pa_relight(stack, two, 6, out, 3) != PA_STATUS_BUFFER_TOO_SMALL) return 1;
  if (pa_relight(NULL, two, 6, out, 36) != PA_STATUS_NULL_POINTER) return 1;

  pa_stack_free(stack);
  pa_envmap_free(env);
  pa_basis_free(basis);
  puts("ok");
  return 0;
}
