#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "fsqos/request.hpp"

using namespace fsqos;

TEST_SUITE_BEGIN("request_model");

TEST_CASE("operation classes cover the full operation set") {
    CHECK(op_class_of(OpType::read) == OpClass::data);
    CHECK(op_class_of(OpType::write) == OpClass::data);

    CHECK(op_class_of(OpType::open) == OpClass::metadata);
    CHECK(op_class_of(OpType::close) == OpClass::metadata);
    CHECK(op_class_of(OpType::rename) == OpClass::metadata);
    CHECK(op_class_of(OpType::unlink) == OpClass::metadata);
    CHECK(op_class_of(OpType::statfs) == OpClass::metadata);
    CHECK(op_class_of(OpType::sync) == OpClass::metadata);

    CHECK(op_class_of(OpType::getattr) == OpClass::extended_attributes);
    CHECK(op_class_of(OpType::setattr) == OpClass::extended_attributes);

    CHECK(op_class_of(OpType::mkdir) == OpClass::directory_management);
    CHECK(op_class_of(OpType::mknod) == OpClass::directory_management);
    CHECK(op_class_of(OpType::rmdir) == OpClass::directory_management);
}

TEST_CASE("op type and class names round-trip through parsing") {
    for (int i = 0; i < kOpTypeCount; ++i) {
        auto t = static_cast<OpType>(i);
        auto parsed = parse_op_type(op_type_name(t));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == t);
    }
    for (int i = 0; i < 4; ++i) {
        auto c = static_cast<OpClass>(i);
        auto parsed = parse_op_class(op_class_name(c));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == c);
    }
    CHECK_FALSE(parse_op_type("fsync"));
    CHECK_FALSE(parse_op_class("bulk"));
    for (int i = 0; i < kGranularityCount; ++i) {
        auto g = static_cast<MatchGranularity>(i);
        auto parsed = parse_granularity(granularity_name(g));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == g);
    }
}

// Every attribute value the deployment can realistically install a matcher
// for must map to a distinct token, including across granularities. The
// token space is 64-bit, so any collision in this small population would be
// a construction bug (e.g. the granularity not being folded in), not chance.
TEST_CASE("classifier tokens are distinct across values and granularities") {
    std::vector<ClassifierToken> all;

    for (int i = 0; i < kOpTypeCount; ++i) {
        auto tok = make_matcher(MatchGranularity::op_type,
                                std::string(op_type_name(static_cast<OpType>(i))));
        REQUIRE(tok.has_value());
        all.push_back(*tok);
    }
    for (int i = 0; i < 4; ++i) {
        auto tok = make_matcher(MatchGranularity::op_class,
                                std::string(op_class_name(static_cast<OpClass>(i))));
        REQUIRE(tok.has_value());
        all.push_back(*tok);
    }
    for (int j = 0; j < 200; ++j) {
        auto tok = make_matcher(MatchGranularity::job, "job-" + std::to_string(j));
        REQUIRE(tok.has_value());
        all.push_back(*tok);
    }
    for (int u = 0; u < 50; ++u) {
        auto tok = make_matcher(MatchGranularity::user, "user" + std::to_string(u));
        REQUIRE(tok.has_value());
        all.push_back(*tok);
    }
    // Adversarial cross-granularity values: same bytes, different kind.
    all.push_back(*make_matcher(MatchGranularity::job, "getattr"));
    all.push_back(*make_matcher(MatchGranularity::user, "getattr"));
    all.push_back(*make_matcher(MatchGranularity::job, "metadata"));

    std::set<uint64_t> uniq;
    for (auto t : all) uniq.insert(t.value);
    CHECK(uniq.size() == all.size());
}

TEST_CASE("classify matches the installed matcher for each granularity") {
    Request req;
    req.op = OpType::getattr;
    req.target = std::string("/scratch/f1");
    req.job_id = "job-7";
    req.user_id = "alice";

    CHECK(classify(req, MatchGranularity::op_type) ==
          *make_matcher(MatchGranularity::op_type, "getattr"));
    CHECK(classify(req, MatchGranularity::op_class) ==
          *make_matcher(MatchGranularity::op_class, "extended_attributes"));
    CHECK(classify(req, MatchGranularity::job) == *make_matcher(MatchGranularity::job, "job-7"));
    CHECK(classify(req, MatchGranularity::user) == *make_matcher(MatchGranularity::user, "alice"));

    // Same request, different granularity: never the same token.
    CHECK(classify(req, MatchGranularity::op_type) != classify(req, MatchGranularity::op_class));
    CHECK(classify(req, MatchGranularity::job) != classify(req, MatchGranularity::user));
}

TEST_CASE("classification ignores non-selected attributes") {
    Request a;
    a.op = OpType::open;
    a.target = std::string("/scratch/x");
    a.job_id = "j1";
    a.user_id = "u1";

    Request b;
    b.op = OpType::open;
    b.target = int64_t{42};
    b.job_id = "j2";
    b.user_id = "u2";

    CHECK(classify(a, MatchGranularity::op_type) == classify(b, MatchGranularity::op_type));
    CHECK(classify(a, MatchGranularity::job) != classify(b, MatchGranularity::job));
}

TEST_CASE("matcher values are validated per granularity") {
    CHECK_FALSE(make_matcher(MatchGranularity::op_type, "chmod"));
    CHECK_FALSE(make_matcher(MatchGranularity::op_class, "getattr"));
    CHECK_FALSE(make_matcher(MatchGranularity::job, ""));
    CHECK_FALSE(make_matcher(MatchGranularity::user, ""));
    CHECK(make_matcher(MatchGranularity::op_type, "sync").has_value());
}

TEST_CASE("long ids hash without truncation collisions") {
    std::string base(300, 'a');
    auto t1 = make_matcher(MatchGranularity::job, base + "x");
    auto t2 = make_matcher(MatchGranularity::job, base + "y");
    REQUIRE(t1.has_value());
    REQUIRE(t2.has_value());
    CHECK(*t1 != *t2);
}

TEST_SUITE_END();
