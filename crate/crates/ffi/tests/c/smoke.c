#include <stdio.h>
#include <string.h>
#include "promogen.h"

#define CHECK(cond)                                               \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "failed: %s (%s)\n", #cond,                 \
              pmg_last_error_message());                          \
      return 1;                                                   \
    }                                                             \
  } while (0)

int main(int argc, char **argv) {
  uint64_t count = 0;
  CHECK(pmg_fm_count_valid(10, 3, 2, &count) == PMG_STATUS_OK);
  CHECK(count == 20);

  size_t anchors[5];
  CHECK(pmg_fm_sample(64, 5, 4, 7, anchors, 5) == PMG_STATUS_OK);
  for (int i = 1; i < 5; i++) CHECK(anchors[i] - anchors[i - 1] >= 5);
  CHECK(pmg_fm_sample(10, 5, 3, 7, anchors, 5) == PMG_STATUS_INFEASIBLE);
  CHECK(strlen(pmg_last_error_message()) > 0);

  size_t k = 0;
  CHECK(pmg_k_min_for_stage(2, 4, &k) == PMG_STATUS_OK && k == 13);

  if (argc > 1) {
    PmgModel *model = NULL;
    CHECK(pmg_model_load(argv[1], &model) == PMG_STATUS_OK);
    size_t d = pmg_model_feature_dim(model);
    double out[16 * 66];
    CHECK(d == 66);
    CHECK(pmg_model_sample(model, 16, NULL, NULL, NULL, 0, 2, 1, out, 16 * d) == PMG_STATUS_OK);
    pmg_model_free(model);
  }
  printf("ok %s\n", pmg_version());
  return 0;
}
