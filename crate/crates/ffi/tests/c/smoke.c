#include <stdio.h>
#include "prefelicit.h"

#define CHECK(call) do { PeStatus st_ = (call); if (st_ != PE_STATUS_OK) { \
    fprintf(stderr, "%s -> %d: %s\n", #call, (int)st_, pe_last_error_message()); return 1; } } while (0)

int main(void) {
    const char *cfg = "{\"dims\":2,\"mh\":{\"m_samples\":500,\"burn_in\":50},"
                      "\"mi\":{\"m_outer\":16,\"m_inner\":4,\"n_candidates\":4},"
                      "\"stop\":{\"max_steps\":4}}";
    PeSession *s = NULL;
    CHECK(pe_session_new_with_config(cfg, 7, &s));
    double ref[2], alt[2], theta[2];
    PeSessionStatus status = PE_SESSION_STATUS_AWAITING_RESPONSE;
    int answered = 0;
    while (status == PE_SESSION_STATUS_AWAITING_RESPONSE) {
        CHECK(pe_session_current_trial(s, ref, alt, 2));
        CHECK(pe_session_submit(s, alt[0] < 0.5 ? 1 : 0));
        CHECK(pe_session_status(s, &status));
        answered++;
    }
    CHECK(pe_session_estimate(s, theta, NULL, 2));
    double rsu = 0;
    CHECK(pe_session_rsu(s, &rsu));
    if (pe_session_submit(s, 1) != PE_STATUS_INVALID_STATE) return 2;
    if (pe_last_error_message() == NULL) return 3;
    pe_session_free(s);
    printf("answered=%d status=%d theta=%.4f,%.4f rsu=%.4f\n", answered, (int)status, theta[0], theta[1], rsu);
    return answered == 4 && status == PE_SESSION_STATUS_MAX_STEPS_REACHED ? 0 : 4;
}
