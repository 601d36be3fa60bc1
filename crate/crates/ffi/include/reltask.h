#ifndef RELTASK_H
#define RELTASK_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum RtStatus {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_POINTER = 1,
  RT_STATUS_INVALID_ARGUMENT = 2,
  RT_STATUS_INVALID_UTF8 = 3,
  RT_STATUS_BUFFER_TOO_SMALL = 4,
  RT_STATUS_SINGULAR = 5,
  RT_STATUS_DIMENSION = 6,
  RT_STATUS_IO = 7,
  // A Rust panic was caught at the boundary.
  RT_STATUS_INTERNAL = 8,
} RtStatus;

// A sampled dataset.
typedef struct RtDataset RtDataset;

// A kernel with its pattern cache.
typedef struct RtKernel RtKernel;

// A template task.
typedef struct RtTask RtTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` as a
// NUL-terminated string, truncating to `cap` bytes. Returns the full
// message length without the terminator.
//
// # Safety
// `buf` must be null or valid for `cap` writable bytes.
size_t rt_last_error(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *rt_version(void);

// Creates a builtin task such as `"same_different"` or `"majority:5"`.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be valid for a write.
enum RtStatus rt_task_from_builtin(const char *name, struct RtTask **out);

// Creates a task from a JSON task document.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for a write.
enum RtStatus rt_task_from_json(const char *json, struct RtTask **out);

// Replaces the vocabulary size of the task.
//
// # Safety
// `task` must be a live handle.
enum RtStatus rt_task_set_vocab_size(struct RtTask *task, size_t vocab_size);

// Appends a classification token to every template.
//
// # Safety
// `task` must be a live handle.
enum RtStatus rt_task_add_cls(struct RtTask *task);

// Sequence length `k`, or 0 for a null handle.
//
// # Safety
// `task` must be null or a live handle.
size_t rt_task_k(const struct RtTask *task);

// Number of templates, or 0 for a null handle.
//
// # Safety
// `task` must be null or a live handle.
size_t rt_task_num_templates(const struct RtTask *task);

// Vocabulary size, or 0 for a null handle.
//
// # Safety
// `task` must be null or a live handle.
size_t rt_task_vocab_size(const struct RtTask *task);

// # Safety
// `task` must be null or a handle not yet freed.
void rt_task_free(struct RtTask *task);

// Samples `n` examples with substitutions drawn from the first
// `alphabet` free tokens of the task.
//
// # Safety
// `task` must be a live handle; `out` must be valid for a write.
enum RtStatus rt_dataset_sample(const struct RtTask *task,
                                size_t n,
                                size_t alphabet,
                                uint64_t seed,
                                struct RtDataset **out);

// Number of samples, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t rt_dataset_len(const struct RtDataset *ds);

// Copies the inputs row-major into `buf` (`len × k` tokens).
//
// # Safety
// `ds` must be a live handle and `buf` valid for `cap` writes.
enum RtStatus rt_dataset_tokens(const struct RtDataset *ds, uint32_t *buf, size_t cap);

// Copies the template index of every sample into `buf`.
//
// # Safety
// `ds` must be a live handle and `buf` valid for `cap` writes.
enum RtStatus rt_dataset_templates(const struct RtDataset *ds, size_t *buf, size_t cap);

// Copies real-valued labels into `buf`; fails for symbolic tasks.
//
// # Safety
// `ds` must be a live handle and `buf` valid for `cap` writes.
enum RtStatus rt_dataset_labels(const struct RtDataset *ds, double *buf, size_t cap);

// # Safety
// `ds` must be null or a handle not yet freed.
void rt_dataset_free(struct RtDataset *ds);

// Creates a kernel from a JSON spec such as
// `{"kind":"trans","beta":0.5,"gamma":0.5,"b1":1,"b2":0.3}`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for a write.
enum RtStatus rt_kernel_from_json(const char *json, struct RtKernel **out);

// Evaluates the kernel on two length-`k` sequences.
//
// # Safety
// `kernel` must be a live handle, `x` and `y` valid for `k` reads and
// `value` valid for a write; `std_error` may be null.
enum RtStatus rt_kernel_eval(const struct RtKernel *kernel,
                             const uint32_t *x,
                             const uint32_t *y,
                             size_t k,
                             double *value,
                             double *std_error);

// # Safety
// `kernel` must be null or a handle not yet freed.
void rt_kernel_free(struct RtKernel *kernel);

// Attention kernel estimate for one pair; exact at `beta == 0`.
//
// # Safety
// `x`, `y` must be valid for `k` reads, `value` for a write; `std_error`
// may be null.
enum RtStatus rt_k_attn(const uint32_t *x,
                        const uint32_t *y,
                        size_t k,
                        double beta,
                        double gamma,
                        size_t n_samples,
                        uint64_t seed,
                        double *value,
                        double *std_error);

// Builds the template-level matrix `N` (`r × r`, row-major into
// `values`). `condition_number` and `singular` may be null.
//
// # Safety
// Handles must be live, `values` valid for `cap` writes.
enum RtStatus rt_n_matrix(const struct RtTask *task,
                          const struct RtKernel *kernel,
                          uint64_t seed,
                          double *values,
                          size_t cap,
                          double *condition_number,
                          bool *singular);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELTASK_H */
