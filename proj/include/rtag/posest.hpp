// Proximity, orientation, Helmholtz pose and mechanical-parameter estimates
// from tag amplitudes and frequencies.
#pragma once

#include "rtag/error.hpp"
#include "rtag/tagphys.hpp"
#include "rtag/types.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace rtag::posest {

/// Squared couplings of an orthogonal tag triad, in the object's tag order.
struct TriadObservation {
    std::array<double, 3> amplitudes{};
    std::int64_t frame_index = 0;

    void validate() const;
    double sum() const noexcept { return amplitudes[0] + amplitudes[1] + amplitudes[2]; }
};

/// Monotone map from distance along the coil axis to the triad sum
/// s(d) = (|B(d)| / B_ref)^2, tabulated and inverted by interpolation.
class RangeModel {
public:
    explicit RangeModel(const tagphys::CouplingModel& field, double d_max = 2.5, double step = 1e-3);

    double sum_at(double d) const;
    /// Distance whose on-axis sum equals `s`, clamped to the table.
    double distance(double s) const;
    double d_max() const noexcept { return step_ * static_cast<double>(sums_.size() - 1); }

private:
    double step_;
    std::vector<double> sums_; // strictly decreasing
};

struct RangeEstimate {
    double sum = 0.0;
    double distance = 0.0; ///< [m] along the coil axis from the reference point
    double proximity = 0.0;
};

/// Proximity is reference_distance / d clamped to [0, 1].
/// Throws SignalError when the sum is at or below `presence_threshold`.
RangeEstimate range_from_sum(double s, const RangeModel& model, double reference_distance,
                             double presence_threshold = 0.0);
RangeEstimate range_from_triad(const TriadObservation& obs, const RangeModel& model, double reference_distance,
                               double presence_threshold = 0.0);

/// Unsigned direction cosines of the local field in the object frame, sqrt(a_i / s).
/// Throws SignalError when s is zero.
Vec3 orientation_from_triad(const TriadObservation& obs);

/// Chooses signs for unsigned direction cosines by continuity with the previous frame.
class AxisContinuity {
public:
    /// First call returns the unsigned vector; later calls pick the sign pattern
    /// nearest the estimate extrapolated from the last two frames. The overall
    /// sign follows the history, since the AC field cannot fix it.
    Vec3 update(const Vec3& unsigned_cosines);
    void reset() noexcept {
        previous_.reset();
        before_.reset();
    }
    bool has_history() const noexcept { return previous_.has_value(); }

private:
    std::optional<Vec3> previous_;
    std::optional<Vec3> before_;
};

/// Angle between two direction-cosine vectors after folding every component to |.|.
double unsigned_axis_angle(const Vec3& a, const Vec3& b);

/// Three orthogonal Helmholtz pairs driven one axis per frame.
class HelmholtzRig {
public:
    /// Pairs of `radius` along x, y, z around `center`; the tracking volume is
    /// the cube of side `radius` centred there.
    explicit HelmholtzRig(double radius = 0.3, int turns = 20, Vec3 center = Vec3::Zero(), int segments = 256);

    /// Idealised rig whose three fields are perfectly uniform.
    static HelmholtzRig uniform(double radius = 0.3, Vec3 center = Vec3::Zero());

    /// Rows are the three drive fields at `p`, each normalised by its value at the centre.
    Mat3 normalized_fields(const Vec3& p) const;
    /// Amplitude matrix (drive axis x tag axis) for tag normals given by the columns of `rotation`.
    Mat3 predict(const Vec3& p, const Mat3& rotation) const;

    double half_extent() const noexcept { return 0.5 * radius_; }
    const Vec3& center() const noexcept { return center_; }
    bool is_uniform() const noexcept { return models_.empty(); }

private:
    struct Uniform {};
    HelmholtzRig(Uniform, double radius, Vec3 center) : radius_(radius), center_(center) {}
    double radius_ = 0.3;
    Vec3 center_ = Vec3::Zero();
    std::vector<tagphys::CouplingModel> models_;
};

struct PoseEstimate {
    double proximity = 0.0;
    std::array<Vec3, 3> axes{}; ///< tag normals in world frame, sign-ambiguous
    /// Unsigned direction cosines of the local field in the object frame.
    Vec3 field_direction = Vec3::Zero();
    std::optional<Vec3> position;
    Quat orientation = Quat::Identity();
    double residual = 0.0; ///< rms amplitude misfit
    int iterations = 0;
    bool underdetermined = false;
    std::vector<double> cost_history; ///< cost after each accepted iteration
};

struct SolveOptions {
    int grid = 7;
    int max_iterations = 50;
    int starts = 343;               ///< best grid candidates refined, stopping at the first exact fit
    double reject_residual = 1e-3;
    double tolerance = 1e-14;       ///< stop when the cost falls below this
};

class PoseSolveError : public Error {
public:
    PoseSolveError(const std::string& what, PoseEstimate best) : Error(what), best_(std::move(best)) {}
    const PoseEstimate& best() const noexcept { return best_; }

private:
    PoseEstimate best_;
};

/// Fit position and orientation to a full 3x3 amplitude matrix by damped least
/// squares from a coarse grid. Throws PoseSolveError (carrying the best
/// candidate) when the residual exceeds the rejection threshold.
PoseEstimate pose_solve(const Mat3& observed, const HelmholtzRig& rig, const SolveOptions& opts = {});

/// Single-axis solenoid data cannot fix six unknowns: returns proximity and the
/// unsigned field direction only, flagged underdetermined, with no axes or position.
PoseEstimate pose_solve(const TriadObservation& obs, const RangeModel& model, double reference_distance);

/// Largest angle between corresponding tag axes, ignoring the sign of each axis [rad].
double axis_error(const Mat3& a, const Mat3& b);

/// p = (f0 - f_obs) / (alpha f0), clamped to [0, 1]. Throws DomainError for alpha = 0.
double param_estimate(double f_obs, const tagphys::TagSpec& tag);

} // namespace rtag::posest
