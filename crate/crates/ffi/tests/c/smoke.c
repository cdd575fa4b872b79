#include <stdio.h>
#include <string.h>

#include "crenet.h"

#define CHECK(call)                                                         \
    do {                                                                    \
        enum CrenStatus st_ = (call);                                       \
        if (st_ != CREN_STATUS_OK) {                                        \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)st_,        \
                    cren_last_error() ? cren_last_error() : "?");           \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    enum { H = 6, W = 8 };
    float rgb[H * W * 3];
    for (int i = 0; i < H * W * 3; i++) rgb[i] = (float)(i % 17) / 40.0f;

    CrenImage *img = NULL;
    CrenCondition *cond = NULL;
    CrenModel *model = NULL;
    CrenImage *out = NULL;
    CHECK(cren_image_new(H, W, rgb, &img));
    CHECK(cren_condition_make(img, "gamma:0.45", &cond));
    CHECK(cren_model_init(1, &model));
    CHECK(cren_enhance(model, img, cond, &out));

    size_t h = 0, w = 0;
    CHECK(cren_image_dims(out, &h, &w));
    if (h != H || w != W) return 2;

    double psnr = 0.0;
    CHECK(cren_psnr(img, img, &psnr));
    if (psnr != 99.0) return 3;

    if (cren_image_new(H, W, NULL, &out) != CREN_STATUS_NULL_POINTER) return 4;
    if (cren_last_error() == NULL) return 5;

    cren_image_free(out);
    cren_image_free(img);
    cren_condition_free(cond);
    cren_model_free(model);
    printf("ok %s\n", cren_version());
    return 0;
}
