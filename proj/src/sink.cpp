#include "fsqos/sink.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <sys/statvfs.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

namespace fsqos {

SinkResult NullSink::apply(const Request& req) {
    ops_.fetch_add(1, std::memory_order_relaxed);
    SinkResult r;
    if (req.op == OpType::open)
        r.fd = next_fd_.fetch_add(1, std::memory_order_relaxed);
    else if (req.op == OpType::read || req.op == OpType::write)
        r.bytes = req.size;
    return r;
}

DirectorySink::DirectorySink(std::string root) : root_(std::move(root)) {
    ::mkdir(root_.c_str(), 0755);  // best effort; open below reports failures
    root_fd_ = ::open(root_.c_str(), O_RDONLY | O_DIRECTORY);
}

DirectorySink::~DirectorySink() {
    if (root_fd_ >= 0) ::close(root_fd_);
}

std::string DirectorySink::resolve(const std::string& path, int* err) const {
    *err = 0;
    if (path.empty() || path.front() != '/') {
        *err = EINVAL;
        return {};
    }
    // Reject parent traversal instead of canonicalizing: replay paths are
    // synthetic and must stay confined under root.
    size_t i = 0;
    while (i < path.size()) {
        size_t j = path.find('/', i + 1);
        if (j == std::string::npos) j = path.size();
        if (path.compare(i, j - i, "/..") == 0) {
            *err = EINVAL;
            return {};
        }
        i = j;
    }
    return root_ + path;
}

SinkResult DirectorySink::apply(const Request& req) {
    SinkResult r;
    int err = 0;
    std::string full;
    if (req.has_path()) {
        full = resolve(req.path(), &err);
        if (err != 0) {
            r.status = err;
            return r;
        }
    }

    auto fail_errno = [&r]() { r.status = errno != 0 ? errno : EIO; };

    switch (req.op) {
        case OpType::open: {
            int fd = ::open(full.c_str(), O_CREAT | O_RDWR, 0644);
            if (fd < 0)
                fail_errno();
            else
                r.fd = fd;
            break;
        }
        case OpType::close:
            if (::close(static_cast<int>(req.fd())) != 0) fail_errno();
            break;
        case OpType::read:
        case OpType::write: {
            std::array<char, 64 * 1024> buf{};
            uint64_t left = req.size;
            uint64_t off = 0;
            while (left > 0) {
                size_t n = left < buf.size() ? static_cast<size_t>(left) : buf.size();
                ssize_t got =
                    req.op == OpType::read
                        ? ::pread(static_cast<int>(req.fd()), buf.data(), n, static_cast<off_t>(off))
                        : ::pwrite(static_cast<int>(req.fd()), buf.data(), n, static_cast<off_t>(off));
                if (got < 0) {
                    fail_errno();
                    break;
                }
                r.bytes += static_cast<uint64_t>(got);
                off += static_cast<uint64_t>(n);
                left -= n;
                if (req.op == OpType::read && got == 0) break;  // EOF
            }
            break;
        }
        case OpType::getattr: {
            struct stat st{};
            int rc = req.has_path() ? ::stat(full.c_str(), &st)
                                    : ::fstat(static_cast<int>(req.fd()), &st);
            if (rc != 0) fail_errno();
            break;
        }
        case OpType::setattr: {
            int rc = req.has_path() ? ::utimensat(AT_FDCWD, full.c_str(), nullptr, 0)
                                    : ::futimens(static_cast<int>(req.fd()), nullptr);
            if (rc != 0) fail_errno();
            break;
        }
        case OpType::mkdir:
            if (::mkdir(full.c_str(), 0755) != 0) fail_errno();
            break;
        case OpType::mknod: {
            // Portable node creation: exclusive create of a regular file.
            int fd = ::open(full.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
            if (fd < 0)
                fail_errno();
            else
                ::close(fd);
            break;
        }
        case OpType::rmdir:
            if (::rmdir(full.c_str()) != 0) fail_errno();
            break;
        case OpType::rename:
            // Self-rename: a real VFS round trip with no tree mutation, so
            // replayed rename storms are repeatable.
            if (::rename(full.c_str(), full.c_str()) != 0) fail_errno();
            break;
        case OpType::unlink:
            if (::unlink(full.c_str()) != 0) fail_errno();
            break;
        case OpType::statfs: {
            struct statvfs sv{};
            if (::statvfs(root_.c_str(), &sv) != 0) fail_errno();
            break;
        }
        case OpType::sync:
            if (root_fd_ >= 0 && ::fsync(root_fd_) != 0) fail_errno();
            break;
    }
    return r;
}

}  // namespace fsqos
