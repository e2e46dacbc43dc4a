#include <math.h>
#include <stdio.h>
#include "stcp.h"

#define CHECK(x) do { StcpStatus s_ = (x); if (s_ != STCP_STATUS_OK) { \
    fprintf(stderr, "%s -> %d: %s\n", #x, (int)s_, stcp_last_error()); return 1; } } while (0)

int main(void) {
    /* 9 calibration samples of a 2-cell field, scores 0.1 .. 0.9 */
    double pred[18] = {0}, truth[18];
    for (int i = 0; i < 9; i++) {
        truth[2 * i] = 0.1 * (i + 1);
        truth[2 * i + 1] = -0.1 * (i + 1);
    }
    StcpStack *p = NULL, *t = NULL;
    CHECK(stcp_stack_new(1, 2, 1, 1, pred, 18, &p));
    CHECK(stcp_stack_new(1, 2, 1, 1, truth, 18, &t));

    StcpQuantile *q = NULL;
    CHECK(stcp_calibrate(STCP_METHOD_AER, p, NULL, t, 0.2, &q));
    double qv[2];
    CHECK(stcp_quantile_values(q, qv, 2));
    if (fabs(qv[0] - 0.8) > 1e-12 || fabs(qv[1] - 0.8) > 1e-12) return 2;

    StcpBand *b = NULL;
    CHECK(stcp_band_build(q, STCP_METHOD_AER, p, NULL, &b));
    StcpCoverage cov;
    CHECK(stcp_coverage(b, t, &cov));
    if (fabs(cov.mean_coverage - 8.0 / 9.0) > 1e-12 || !cov.has_beta) return 3;

    if (stcp_stack_new(1, 2, 1, 1, pred, 3, &p) != STCP_STATUS_SHAPE) return 4;
    if (stcp_last_error()[0] == '\0') return 5;

    stcp_band_free(b);
    stcp_quantile_free(q);
    stcp_stack_free(p);
    stcp_stack_free(t);
    printf("ok %s\n", stcp_version());
    return 0;
}
