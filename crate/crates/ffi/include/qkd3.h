#ifndef QKD3_H
#define QKD3_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define QKD3_MODE_IDEAL 0
#define QKD3_MODE_UNCHARACTERIZED 1

typedef enum Qkd3Status {
  QKD3_STATUS_OK = 0,
  QKD3_STATUS_NULL_POINTER = 1,
  QKD3_STATUS_INVALID_ARGUMENT = 2,
  QKD3_STATUS_UNSUPPORTED_DIMENSION = 3,
  QKD3_STATUS_ZERO_DENOMINATOR = 4,
  QKD3_STATUS_MALFORMED_TABLE = 5,
  QKD3_STATUS_BUFFER_TOO_SMALL = 6,
  QKD3_STATUS_PANIC = 7,
} Qkd3Status;

/* Opaque probability table; release with qkd3_table_free. */
typedef struct Qkd3Table Qkd3Table;

typedef struct Qkd3OptimizerConfig {
  size_t grid_points;
  size_t refine_iterations;
  size_t multistarts;
  uint64_t seed;
  double constraint_tolerance;
  double coeff_max;
} Qkd3OptimizerConfig;

typedef struct Qkd3Report {
  uint32_t dim;
  double qs;
  double epsilon;
  double qp_bound;
  double r_sifted;
  double r_total;
  bool feasible_found;
} Qkd3Report;

/* Message of the last failed call on this thread; empty if none. */
const char *qkd3_last_error(void);

const char *qkd3_status_name(Qkd3Status status);

Qkd3Status qkd3_table_ideal(uint32_t dim_value, Qkd3Table **out);

Qkd3Status qkd3_table_channel(uint32_t dim_value, double loss_db, double dark, Qkd3Table **out);

/* (2d)^2 row-major entries, Alice's setting indexing rows. */
Qkd3Status qkd3_table_from_entries(uint32_t dim_value, const double *entries, size_t len, Qkd3Table **out);

/* needed (if non-null) receives the entry count even when cap is too small. */
Qkd3Status qkd3_table_entries(const Qkd3Table *table, double *buf, size_t cap, size_t *needed);

void qkd3_table_free(Qkd3Table *table);

Qkd3OptimizerConfig qkd3_optimizer_default(void);

/* config may be NULL for defaults; mode is a QKD3_MODE_* constant. */
Qkd3Status qkd3_analyze(const Qkd3Table *table, const Qkd3OptimizerConfig *config, uint32_t mode, Qkd3Report *out);

Qkd3Status qkd3_key_rate_sifted(uint32_t dim_value, double qs, double qp, double *out);

#ifdef __cplusplus
}
#endif

#endif
