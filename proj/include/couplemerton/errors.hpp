#pragma once

#include <stdexcept>
#include <string>

namespace couplemerton {

// A1 left every finite bound before the end of the requested span. The
// conditional moment behind the exponential-affine form is infinite past
// blowup_time().
class SingularityDetected : public std::runtime_error {
public:
    SingularityDetected(const std::string& what, double blowup_time)
        : std::runtime_error(what), blowup_time_(blowup_time) {}

    double blowup_time() const noexcept { return blowup_time_; }

private:
    double blowup_time_;
};

class NonFinite : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace couplemerton
