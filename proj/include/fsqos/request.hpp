#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace fsqos {

// File-system operations the data plane understands. The set is closed: a
// stage classifies every request into exactly one of these.
enum class OpType : uint8_t {
    open,
    close,
    read,
    write,
    getattr,
    setattr,
    mkdir,
    mknod,
    rmdir,
    rename,
    unlink,
    statfs,
    sync,
};

inline constexpr int kOpTypeCount = 13;

enum class OpClass : uint8_t {
    data,
    metadata,
    extended_attributes,
    directory_management,
};

// Fixed operation-to-class map. Total: every OpType has a class.
OpClass op_class_of(OpType t);

std::string_view op_type_name(OpType t);
std::string_view op_class_name(OpClass c);
std::optional<OpType> parse_op_type(std::string_view name);
std::optional<OpClass> parse_op_class(std::string_view name);

// Matching granularity for channel selection. Order is most-specific first;
// a stage probes granularities in this order when routing a request.
enum class MatchGranularity : uint8_t {
    op_type,
    op_class,
    job,
    user,
};

inline constexpr int kGranularityCount = 4;

std::string_view granularity_name(MatchGranularity g);
std::optional<MatchGranularity> parse_granularity(std::string_view name);

// One intercepted file-system request. target holds a path for path-based
// ops (open, rename, mkdir, ...) and a descriptor for fd-based ops
// (read, write, fd-getattr, close). size is nonzero only for data ops.
struct Request {
    OpType op;
    std::variant<std::string, int64_t> target;
    uint64_t size = 0;
    std::string job_id;
    std::string user_id;

    bool has_path() const { return std::holds_alternative<std::string>(target); }
    const std::string& path() const { return std::get<std::string>(target); }
    int64_t fd() const { return std::get<int64_t>(target); }
};

// Opaque 64-bit key a channel matcher is compared against. Equal tokens mean
// "same traffic class at the same granularity": the granularity is folded
// into the hashed bytes so op_type:getattr can never collide with a
// job-granularity token for a job named "getattr".
struct ClassifierToken {
    uint64_t value = 0;

    friend bool operator==(ClassifierToken a, ClassifierToken b) { return a.value == b.value; }
    friend bool operator!=(ClassifierToken a, ClassifierToken b) { return a.value != b.value; }
};

struct ClassifierTokenHash {
    size_t operator()(ClassifierToken t) const noexcept { return static_cast<size_t>(t.value); }
};

// 64-bit hash of an arbitrary byte string. Deployment-wide salt is fixed at
// zero; both controller and stage must agree on it for rule matchers to hit.
uint64_t hash64(const void* data, size_t len, uint64_t seed = 0);

// Token for the attribute of `req` selected by `g`.
ClassifierToken classify(const Request& req, MatchGranularity g);

// Token for an explicit attribute value, as used when installing a channel
// matcher: value is an OpType/OpClass name for those granularities, a job id
// or user id otherwise. Returns nullopt for an unparsable enum name.
std::optional<ClassifierToken> make_matcher(MatchGranularity g, std::string_view value);

}  // namespace fsqos
