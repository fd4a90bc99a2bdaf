#ifndef PERSUASION_H
#define PERSUASION_H

#include <stddef.h>
#include <stdint.h>

// Result codes.
typedef enum PersuasionStatus {
  PERSUASION_STATUS_OK = 0,
  PERSUASION_STATUS_NULL_POINTER = 1,
  PERSUASION_STATUS_INVALID_UTF8 = 2,
  PERSUASION_STATUS_CONFIG = 3,
  PERSUASION_STATUS_ASSUMPTION = 4,
  PERSUASION_STATUS_INVALID_ARGUMENT = 5,
  // Payment or posterior asked for at a type that is never asked to buy.
  PERSUASION_STATUS_UNDEFINED = 6,
  PERSUASION_STATUS_INTERNAL = 7,
  PERSUASION_STATUS_PANIC = 8,
} PersuasionStatus;

// Opaque mechanism handle.
typedef struct PersuasionMechanism PersuasionMechanism;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *persuasion_last_error(void);

// Builds the optimal mechanism for an instance config. `grid` overrides the
// config's grid size unless it is 0.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` a valid pointer.
enum PersuasionStatus persuasion_mechanism_build(const char *config_json,
                                                 size_t grid,
                                                 struct PersuasionMechanism **out);

// # Safety
// `m` must come from [`persuasion_mechanism_build`] and not be freed twice.
void persuasion_mechanism_free(struct PersuasionMechanism *m);

// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum PersuasionStatus persuasion_num_buyers(const struct PersuasionMechanism *m, size_t *out);

// Buyer asked at type profile `types[0..n]` and quality `q`, or -1 when the
// seller keeps the item.
//
// # Safety
// `types` must point to `n` doubles; `out` must be valid.
enum PersuasionStatus persuasion_allocate(const struct PersuasionMechanism *m,
                                          const double *types,
                                          size_t n,
                                          double q,
                                          int64_t *out);

// Payment of `buyer` at type `t` when asked.
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum PersuasionStatus persuasion_payment(const struct PersuasionMechanism *m,
                                         size_t buyer,
                                         double t,
                                         double *out);

// Expected revenue by quadrature.
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum PersuasionStatus persuasion_revenue(const struct PersuasionMechanism *m, double *out);

// Monte Carlo revenue: mean and standard error over `samples` draws.
//
// # Safety
// `m` must be a live handle; `mean` and `std_error` must be valid pointers.
enum PersuasionStatus persuasion_simulate(const struct PersuasionMechanism *m,
                                          uint64_t samples,
                                          uint64_t seed,
                                          double *mean,
                                          double *std_error);

// The mechanism as JSON. Release the string with [`persuasion_string_free`].
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum PersuasionStatus persuasion_to_json(const struct PersuasionMechanism *m, char **out);

// # Safety
// `s` must come from this library and not be freed twice.
void persuasion_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERSUASION_H */
