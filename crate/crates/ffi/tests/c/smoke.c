#include <math.h>
#include <stdio.h>
#include <string.h>

#include "sfrbsde.h"

int main(void) {
    double cov = 0.0;
    if (sfrbsde_fbm_covariance(1.0, 2.0, 0.75, &cov) != SFRBSDE_STATUS_OK) return 1;
    if (fabs(cov - 1.4142135623730951) > 1e-12) return 2;

    if (sfrbsde_fbm_covariance(1.0, 2.0, 0.5, &cov) != SFRBSDE_STATUS_INVALID_ARGUMENT) return 3;
    if (sfrbsde_last_error() == NULL) return 4;

    SfrbsdeConfig *cfg = NULL;
    if (sfrbsde_config_parse("hurst = 0.75\nn_time = 32\nn_space = 64\nn_paths = 1000\n", &cfg) != SFRBSDE_STATUS_OK) return 5;
    if (sfrbsde_config_set(cfg, "hurst", "1.5") != SFRBSDE_STATUS_CONFIG) return 6;
    if (strstr(sfrbsde_last_error(), "hurst") == NULL) return 7;

    SfrbsdeSweep *sweep = NULL;
    if (sfrbsde_sweep_run(cfg, &sweep) != SFRBSDE_STATUS_OK) {
        fprintf(stderr, "%s\n", sfrbsde_last_error());
        return 8;
    }
    if (sfrbsde_sweep_len(sweep) != 5) return 9;
    SfrbsdeSweepRow row;
    if (sfrbsde_sweep_row(sweep, 0, &row) != SFRBSDE_STATUS_OK) return 10;
    if (row.epsilon != 0.5 || !(row.sup_mse > 0.0)) return 11;
    if (sfrbsde_sweep_row(sweep, 99, &row) != SFRBSDE_STATUS_OUT_OF_RANGE) return 12;

    sfrbsde_sweep_free(sweep);
    sfrbsde_config_free(cfg);
    printf("ok %s\n", sfrbsde_version());
    return 0;
}
