#ifndef TSF_CHECKPOINT_HPP
#define TSF_CHECKPOINT_HPP

#include "tsf/nn.hpp"

#include <map>
#include <string>

namespace tsf {

/**
 * Parameter checkpoint file.
 *
 * Little-endian binary layout:
 *   magic "TSFCKPT1" (8 bytes, carries the format version)
 *   u32 meta length, meta bytes (UTF-8, typically a JSON model header)
 *   u32 tensor count
 *   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
 *               f64 data (row-major)
 */
void save_checkpoint(const std::string& path, const NamedParams& params,
                     const std::string& meta = "");

struct Checkpoint {
    std::string meta;
    std::map<std::string, Tensor> tensors; // insertion order not preserved; keyed lookup
    std::vector<std::string> order;        // file order, for exact round-trips
};

Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint values into an existing parameter collection
/// (shapes must match; throws DataError on any mismatch or missing name).
void restore_params(const Checkpoint& ck, NamedParams& params);

} // namespace tsf

#endif // TSF_CHECKPOINT_HPP
