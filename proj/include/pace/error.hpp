#pragma once

#include <stdexcept>
#include <string>

namespace pace {

// Error categories map 1:1 onto CLI exit codes (usage=1 ... internal=5).
enum class ErrorKind { usage = 1, config = 2, data = 3, backend = 4, internal = 5 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    int exit_code() const { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

} // namespace pace
