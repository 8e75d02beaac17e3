/* Prints the dominant periods of a two-tone signal and scores a flat forecast. */
#include <math.h>
#include <stdio.h>

#include "times2d.h"

int main(void) {
    double x[96];
    for (int t = 0; t < 96; t++) {
        x[t] = sin(2.0 * M_PI * t / 24.0) + 0.5 * cos(2.0 * M_PI * t / 12.0);
    }
    size_t freqs[2], periods[2];
    double amps[2];
    if (t2d_top_k_periods(x, 96, 2, freqs, periods, amps) != T2D_STATUS_OK) {
        fprintf(stderr, "%s\n", t2d_last_error_message());
        return 1;
    }
    for (int i = 0; i < 2; i++) {
        printf("f=%zu period=%zu\n", freqs[i], periods[i]);
    }

    double pred[2] = {0.0, 0.0}, actual[2] = {1.0, 3.0};
    T2dMetrics m;
    if (t2d_metrics(pred, actual, 2, 1, &m) != T2D_STATUS_OK) {
        fprintf(stderr, "%s\n", t2d_last_error_message());
        return 1;
    }
    printf("mse=%g mae=%g\n", m.mse, m.mae);

    T2dModel *model = NULL;
    T2dStatus status = t2d_model_load("/nonexistent.ckpt", &model);
    printf("load status=%d\n", (int)status);
    return 0;
}
