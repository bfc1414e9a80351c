#include <math.h>
#include <stdio.h>
#include <string.h>

#include "fmscale.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            fprintf(stderr, "check failed at line %d: %s (%s)\n",     \
                    __LINE__, #cond, fms_last_error_message());       \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    const double w[2] = {0.5, 0.5};
    const double mu[4] = {-2.0, 0.0, 2.0, 0.0};
    const double var[4] = {0.5, 0.5, 0.5, 0.5};
    FmsTarget *target = NULL;
    CHECK(fms_target_new(2, 2, w, mu, var, &target) == FMS_STATUS_OK);
    CHECK(fms_target_dim(target) == 2);

    const double x[2] = {0.3, -0.1};
    double s[2], u[2], lp;
    CHECK(fms_score(target, x, 0.5, s) == FMS_STATUS_OK);
    CHECK(fms_velocity(target, x, 0.5, u) == FMS_STATUS_OK);
    CHECK(fms_log_density(target, x, 1.0, &lp) == FMS_STATUS_OK);
    CHECK(isfinite(lp));

    const double eps[2] = {0.7, -1.3};
    double w_proj[2];
    CHECK(fms_score_orth_project(eps, s, 2, w_proj) == FMS_STATUS_OK);
    CHECK(fabs(w_proj[0] * s[0] + w_proj[1] * s[1]) < 1e-12);

    FmsStepperConfig cfg = fms_stepper_default(FMS_METHOD_DMFM_ODE, 20);
    const double x0[6] = {0.0, 0.0, 1.0, -1.0, -0.5, 0.5};
    double out[6];
    CHECK(fms_sample(target, &cfg, x0, 3, 7, out) == FMS_STATUS_OK);

    double best[2], score, compute;
    CHECK(fms_random_search(target, 4, 20, 1, best, &score, &compute) == FMS_STATUS_OK);
    CHECK(fabs(compute - 4.0) < 1e-9);

    cfg = fms_stepper_default(FMS_METHOD_SDE, 20);
    CHECK(fms_noise_search(target, &cfg, x0, 2, 3, best, &score, &compute) == FMS_STATUS_OK);

    CHECK(fms_velocity(NULL, x, 0.5, u) == FMS_STATUS_NULL_POINTER);
    CHECK(strlen(fms_last_error_message()) > 0);
    CHECK(fms_velocity(target, x, 1.5, u) == FMS_STATUS_TIME_RANGE);

    fms_target_free(target);
    printf("fmscale %s ok\n", fms_version());
    return 0;
}
