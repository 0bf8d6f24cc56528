#ifndef UPSILON_H
#define UPSILON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UpsilonStatus {
  UPSILON_STATUS_OK = 0,
  UPSILON_STATUS_NULL_POINTER = 1,
  UPSILON_STATUS_INVALID_ARGUMENT = 2,
  UPSILON_STATUS_INVALID_PROGRAM = 3,
  UPSILON_STATUS_INVALID_CONFIG = 4,
  UPSILON_STATUS_RUNTIME = 5,
  UPSILON_STATUS_PANIC = 6,
} UpsilonStatus;

/**
 * A running environment process with the default machine and spaces.
 */
typedef struct UpsilonProcess UpsilonProcess;

/**
 * A decoded program.
 */
typedef struct UpsilonProgram UpsilonProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread. Valid until the next call
 * into the library from the same thread.
 */
const char *upsilon_last_error(void);

/**
 * Library version as a static string.
 */
const char *upsilon_version(void);

void upsilon_string_free(char *s);

/**
 * Assemble a program from instruction mnemonics such as `"+[.]"`.
 */
enum UpsilonStatus upsilon_program_from_mnemonics(const char *source, struct UpsilonProgram **out);

/**
 * Decode one fixture line such as `"len=11 hex=6500"`.
 */
enum UpsilonStatus upsilon_program_from_fixture(const char *line, struct UpsilonProgram **out);

void upsilon_program_free(struct UpsilonProgram *program);

enum UpsilonStatus upsilon_program_length_bits(const struct UpsilonProgram *program, uint32_t *out);

/**
 * The prior weight `2^-|p|`.
 */
enum UpsilonStatus upsilon_program_prior_weight(const struct UpsilonProgram *program, double *out);

/**
 * Fixture line with mnemonics, e.g. `"len=11 hex=6500 # +."`.
 */
enum UpsilonStatus upsilon_program_describe(const struct UpsilonProgram *program, char **out);

/**
 * Start a summable process for `program`. Random bits come from `seed`.
 */
enum UpsilonStatus upsilon_process_new(const struct UpsilonProgram *program,
                                       uint64_t seed,
                                       struct UpsilonProcess **out);

void upsilon_process_free(struct UpsilonProcess *process);

/**
 * Run one cycle. `action` must be -1 on the first call and an action index
 * afterwards. The percept is written to `observation` and `reward`; the
 * reward is a numerator over 255.
 */
enum UpsilonStatus upsilon_process_step(struct UpsilonProcess *process,
                                        int32_t action,
                                        uint32_t *observation,
                                        uint32_t *reward);

enum UpsilonStatus upsilon_process_is_halted(const struct UpsilonProcess *process, bool *out);

/**
 * Run the benchmark described by TOML `config` and return the JSON report.
 * Nothing is written to disk.
 */
enum UpsilonStatus upsilon_run_config(const char *config, char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UPSILON_H */
