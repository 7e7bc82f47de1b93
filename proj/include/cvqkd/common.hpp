#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cvqkd {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Pipeline stage an error originated from. Used by the CLI to pick exit codes
/// and by reports to tag diagnostics.
enum class Stage {
    config,
    protocol,
    txdsp,
    channel,
    rxdsp,
    estimation,
    keyrate,
    io,
};

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::config: return "config";
        case Stage::protocol: return "protocol";
        case Stage::txdsp: return "txdsp";
        case Stage::channel: return "channel";
        case Stage::rxdsp: return "rxdsp";
        case Stage::estimation: return "estimation";
        case Stage::keyrate: return "keyrate";
        case Stage::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Stage stage, const std::string& what)
        : std::runtime_error(std::string(to_string(stage)) + ": " + what), stage_(stage) {}

    Stage stage() const noexcept { return stage_; }

private:
    Stage stage_;
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }

/// Hermitian part, used after products that should be Hermitian up to rounding.
inline CMatrix hermitian_part(const CMatrix& a) { return 0.5 * (a + a.adjoint()); }

}  // namespace cvqkd
