#ifndef SGLD_LAB_H
#define SGLD_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
enum SgldLabStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  SgldLabStatus_Ok = 0,
  SgldLabStatus_NullPointer = 1,
  SgldLabStatus_InvalidArgument = 2,
  SgldLabStatus_ValidityNotMet = 3,
  SgldLabStatus_NumericFailure = 4,
};
#ifndef __cplusplus
typedef int32_t SgldLabStatus;
#endif // __cplusplus

/**
 * Opaque privacy-ledger handle.
 */
typedef struct SgldLabLedger SgldLabLedger;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a ledger over the default order grid (1/2 and integers
 * 2..=64). On success writes the new handle to `out`.
 */
SgldLabStatus sgld_lab_ledger_new(uint64_t dataset_size, struct SgldLabLedger **out);

/**
 * Appends one SGLD step. `step_index` must equal the current ledger
 * length.
 */
SgldLabStatus sgld_lab_ledger_append_step(struct SgldLabLedger *ledger,
                                          uint64_t step_index,
                                          double alpha,
                                          double tau,
                                          double clip_bound);

/**
 * Writes the composed total at the given order to `out`. The order must
 * be on the ledger's grid.
 */
SgldLabStatus sgld_lab_ledger_total(const struct SgldLabLedger *ledger, double lambda, double *out);

/**
 * Serializes the ledger to JSON. The returned string is owned by the
 * caller and must be released with `sgld_lab_string_free`.
 */
SgldLabStatus sgld_lab_ledger_to_json(const struct SgldLabLedger *ledger, char **out);

/**
 * Releases a ledger handle. A null handle is ignored.
 */
void sgld_lab_ledger_free(struct SgldLabLedger *ledger);

/**
 * Releases a string returned by this library. A null pointer is ignored.
 */
void sgld_lab_string_free(char *string);

/**
 * Binomial-sum Renyi bound of the subsampled Gaussian mechanism at
 * integer order `lambda` in [2, 256].
 */
SgldLabStatus sgld_lab_subsampled_gaussian_renyi(uint32_t lambda,
                                                 double tau,
                                                 double sigma_sq,
                                                 double *out);

/**
 * Stability-route generalization bound sqrt(2)*L*C/n * sqrt(sum alpha).
 */
SgldLabStatus sgld_lab_stability_bound(double clip_bound,
                                       double loss_bound,
                                       uint64_t dataset_size,
                                       const double *alphas,
                                       uintptr_t alpha_count,
                                       double *out);

/**
 * Information-route generalization bound sqrt(2)*sigma*L/n * sqrt(sum alpha).
 */
SgldLabStatus sgld_lab_info_bound(double clip_bound,
                                  double subgaussian_param,
                                  uint64_t dataset_size,
                                  const double *alphas,
                                  uintptr_t alpha_count,
                                  double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SGLD_LAB_H */
