#include "fsqos/request.hpp"

#include <cstring>

namespace fsqos {

OpClass op_class_of(OpType t) {
    switch (t) {
        case OpType::read:
        case OpType::write:
            return OpClass::data;
        case OpType::open:
        case OpType::close:
        case OpType::rename:
        case OpType::unlink:
        case OpType::statfs:
        case OpType::sync:
            return OpClass::metadata;
        case OpType::getattr:
        case OpType::setattr:
            return OpClass::extended_attributes;
        case OpType::mkdir:
        case OpType::mknod:
        case OpType::rmdir:
            return OpClass::directory_management;
    }
    return OpClass::metadata;  // unreachable; enum is closed
}

std::string_view op_type_name(OpType t) {
    switch (t) {
        case OpType::open: return "open";
        case OpType::close: return "close";
        case OpType::read: return "read";
        case OpType::write: return "write";
        case OpType::getattr: return "getattr";
        case OpType::setattr: return "setattr";
        case OpType::mkdir: return "mkdir";
        case OpType::mknod: return "mknod";
        case OpType::rmdir: return "rmdir";
        case OpType::rename: return "rename";
        case OpType::unlink: return "unlink";
        case OpType::statfs: return "statfs";
        case OpType::sync: return "sync";
    }
    return "?";
}

std::string_view op_class_name(OpClass c) {
    switch (c) {
        case OpClass::data: return "data";
        case OpClass::metadata: return "metadata";
        case OpClass::extended_attributes: return "extended_attributes";
        case OpClass::directory_management: return "directory_management";
    }
    return "?";
}

std::optional<OpType> parse_op_type(std::string_view name) {
    for (int i = 0; i < kOpTypeCount; ++i) {
        auto t = static_cast<OpType>(i);
        if (op_type_name(t) == name) return t;
    }
    return std::nullopt;
}

std::optional<OpClass> parse_op_class(std::string_view name) {
    for (int i = 0; i < 4; ++i) {
        auto c = static_cast<OpClass>(i);
        if (op_class_name(c) == name) return c;
    }
    return std::nullopt;
}

std::string_view granularity_name(MatchGranularity g) {
    switch (g) {
        case MatchGranularity::op_type: return "op_type";
        case MatchGranularity::op_class: return "op_class";
        case MatchGranularity::job: return "job";
        case MatchGranularity::user: return "user";
    }
    return "?";
}

std::optional<MatchGranularity> parse_granularity(std::string_view name) {
    for (int i = 0; i < kGranularityCount; ++i) {
        auto g = static_cast<MatchGranularity>(i);
        if (granularity_name(g) == name) return g;
    }
    return std::nullopt;
}

// MurmurHash64A. 64-bit finalized hash with good avalanche behavior; the
// classifier only needs stability within one deployment, not cryptographic
// strength.
uint64_t hash64(const void* data, size_t len, uint64_t seed) {
    const uint64_t m = 0xc6a4a7935bd1e995ULL;
    const int r = 47;
    uint64_t h = seed ^ (len * m);

    const auto* p = static_cast<const unsigned char*>(data);
    const unsigned char* end = p + (len & ~size_t{7});
    while (p != end) {
        uint64_t k;
        std::memcpy(&k, p, 8);
        p += 8;
        k *= m;
        k ^= k >> r;
        k *= m;
        h ^= k;
        h *= m;
    }

    switch (len & 7) {
        case 7: h ^= uint64_t{p[6]} << 48; [[fallthrough]];
        case 6: h ^= uint64_t{p[5]} << 40; [[fallthrough]];
        case 5: h ^= uint64_t{p[4]} << 32; [[fallthrough]];
        case 4: h ^= uint64_t{p[3]} << 24; [[fallthrough]];
        case 3: h ^= uint64_t{p[2]} << 16; [[fallthrough]];
        case 2: h ^= uint64_t{p[1]} << 8; [[fallthrough]];
        case 1: h ^= uint64_t{p[0]}; h *= m; break;
        case 0: break;
    }

    h ^= h >> r;
    h *= m;
    h ^= h >> r;
    return h;
}

namespace {

// Buffer layout: one granularity tag byte followed by the attribute bytes.
// The tag byte keeps tokens from different granularities in disjoint input
// spaces even when the attribute bytes coincide.
ClassifierToken token_for(MatchGranularity g, std::string_view attr) {
    char buf[256];
    size_t n = attr.size() < sizeof(buf) - 1 ? attr.size() : sizeof(buf) - 1;
    buf[0] = static_cast<char>(g);
    std::memcpy(buf + 1, attr.data(), n);
    if (n < attr.size()) {
        // Rare long job/user ids: fold the tail in via a second pass.
        uint64_t head = hash64(buf, n + 1, 0);
        return {hash64(attr.data() + n, attr.size() - n, head)};
    }
    return {hash64(buf, n + 1, 0)};
}

}  // namespace

ClassifierToken classify(const Request& req, MatchGranularity g) {
    switch (g) {
        case MatchGranularity::op_type: return token_for(g, op_type_name(req.op));
        case MatchGranularity::op_class: return token_for(g, op_class_name(op_class_of(req.op)));
        case MatchGranularity::job: return token_for(g, req.job_id);
        case MatchGranularity::user: return token_for(g, req.user_id);
    }
    return {0};
}

std::optional<ClassifierToken> make_matcher(MatchGranularity g, std::string_view value) {
    switch (g) {
        case MatchGranularity::op_type:
            if (!parse_op_type(value)) return std::nullopt;
            break;
        case MatchGranularity::op_class:
            if (!parse_op_class(value)) return std::nullopt;
            break;
        case MatchGranularity::job:
        case MatchGranularity::user:
            if (value.empty()) return std::nullopt;
            break;
    }
    return token_for(g, value);
}

}  // namespace fsqos
