/* Generates an episode, filters it with the true Replica and prints the
   test-segment errors. Build against include/gkf.h and libgkf_ffi. */
#include <stdio.h>

#include "gkf.h"

static int fail(const char *what) {
    char msg[256];
    gkf_last_error(msg, sizeof msg);
    fprintf(stderr, "%s: %s\n", what, msg);
    return 1;
}

int main(void) {
    GkfEpisode *ep = NULL;
    GkfModel *model = NULL;
    GkfReport rep;

    if (gkf_episode_generate("lingss", 1, 0, 1000, &ep) != GKF_STATUS_OK)
        return fail("generate");
    if (gkf_model_true_replica(ep, &model) != GKF_STATUS_OK)
        return fail("model");
    if (gkf_evaluate(model, ep, GKF_KFR_BOTH, &rep) != GKF_STATUS_OK)
        return fail("evaluate");
    printf("gkf %s\n", gkf_version());
    printf("without %.6f with %.6f rpi %.2f batches %zu\n", rep.mse_without_kfr, rep.mse_with_kfr,
           rep.rpi_mean, rep.n_batches);

    if (gkf_episode_generate("bogus", 1, 0, 0, &ep) != GKF_STATUS_INVALID_ARGUMENT)
        return 1;

    gkf_model_free(model);
    gkf_episode_free(ep);
    return rep.mse_with_kfr < rep.mse_without_kfr ? 0 : 1;
}
