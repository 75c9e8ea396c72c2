#include <stdio.h>
#include <stdlib.h>

#include "ffcdnn.h"

int main(int argc, char **argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: %s MODEL\n", argv[0]);
        return 2;
    }
    FfcdnnModel *model = NULL;
    if (ffcdnn_model_load(argv[1], &model) != FFCDNN_STATUS_OK) {
        fprintf(stderr, "load failed: %s\n", ffcdnn_last_error());
        return 2;
    }
    size_t n = ffcdnn_model_input_len(model);
    double *patch = calloc(n, sizeof(double));
    uint32_t label = 0;
    double scores[3];
    FfcdnnStatus st = ffcdnn_model_predict(model, patch, n, &label, scores);
    if (st == FFCDNN_STATUS_OK) {
        printf("class %u scores %.4f %.4f %.4f\n", label, scores[0], scores[1], scores[2]);
    } else {
        fprintf(stderr, "predict failed: %s\n", ffcdnn_last_error());
    }
    free(patch);
    ffcdnn_model_free(model);
    return st == FFCDNN_STATUS_OK ? 0 : 3;
}
