#include "rtag/posest.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace rtag::posest {

namespace {

Vec3 coil_axis(const tagphys::CoilSpec& coil) {
    if (const auto* h = std::get_if<tagphys::HelmholtzPair>(&coil.geometry)) return h->axis.normalized();
    return Vec3::UnitZ();
}

// Nearest rotation to `x`; an improper result has its last column negated,
// which leaves every squared amplitude unchanged.
Mat3 nearest_rotation(const Mat3& x) {
    Eigen::JacobiSVD<Mat3> svd(x, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) r.col(2) = -r.col(2);
    return r;
}

Mat3 exp_so3(const Vec3& w) {
    const double angle = w.norm();
    if (angle == 0.0) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

Vec9 residual(const HelmholtzRig& rig, const Vec3& p, const Mat3& r, const Mat3& observed) {
    const Mat3 d = rig.predict(p, r) - observed;
    return Eigen::Map<const Vec9>(d.data());
}

struct Candidate {
    Vec3 position;
    Mat3 rotation;
    double cost;
};

} // namespace

void TriadObservation::validate() const {
    for (double a : amplitudes) {
        if (!std::isfinite(a) || a < 0.0) throw DomainError("triad amplitudes must be finite and non-negative");
    }
}

RangeModel::RangeModel(const tagphys::CouplingModel& field, double d_max, double step) : step_(step) {
    if (!(step > 0.0 && d_max > step)) throw ConfigError("range table needs 0 < step < d_max");
    const Vec3 axis = coil_axis(field.coil_field().spec());
    const auto n = static_cast<std::size_t>(std::ceil(d_max / step)) + 1;
    sums_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = field.field_ratio(field.reference_point() + axis * (step * static_cast<double>(i)));
        sums_[i] = r * r;
        if (i > 0 && !(sums_[i] < sums_[i - 1])) {
            throw ConfigError("on-axis field is not monotone beyond the reference point");
        }
    }
}

double RangeModel::sum_at(double d) const {
    if (!(d >= 0.0)) throw DomainError("distance must be non-negative");
    const double x = d / step_;
    if (x >= static_cast<double>(sums_.size() - 1)) return sums_.back();
    const auto i = static_cast<std::size_t>(x);
    const double t = x - static_cast<double>(i);
    return std::exp((1.0 - t) * std::log(sums_[i]) + t * std::log(sums_[i + 1]));
}

double RangeModel::distance(double s) const {
    if (s >= sums_.front()) return 0.0;
    if (s <= sums_.back()) return d_max();
    // first entry strictly below s
    const auto it = std::upper_bound(sums_.begin(), sums_.end(), s, std::greater<>());
    const auto i = static_cast<std::size_t>(it - sums_.begin()) - 1;
    const double a = std::log(sums_[i]);
    const double b = std::log(sums_[i + 1]);
    const double t = (a - std::log(s)) / (a - b);
    return step_ * (static_cast<double>(i) + t);
}

RangeEstimate range_from_sum(double s, const RangeModel& model, double reference_distance,
                             double presence_threshold) {
    if (!(reference_distance > 0.0)) throw DomainError("reference distance must be positive");
    if (!(s > presence_threshold) || !(s > 0.0)) throw SignalError("tag signal below the presence threshold");
    RangeEstimate out;
    out.sum = s;
    out.distance = model.distance(s);
    out.proximity = out.distance <= reference_distance ? 1.0 : std::clamp(reference_distance / out.distance, 0.0, 1.0);
    return out;
}

RangeEstimate range_from_triad(const TriadObservation& obs, const RangeModel& model, double reference_distance,
                               double presence_threshold) {
    obs.validate();
    return range_from_sum(obs.sum(), model, reference_distance, presence_threshold);
}

Vec3 orientation_from_triad(const TriadObservation& obs) {
    obs.validate();
    const double s = obs.sum();
    if (!(s > 0.0)) throw SignalError("orientation undefined for a zero triad sum");
    Vec3 c(std::sqrt(obs.amplitudes[0] / s), std::sqrt(obs.amplitudes[1] / s), std::sqrt(obs.amplitudes[2] / s));
    return c / c.norm();
}

Vec3 AxisContinuity::update(const Vec3& unsigned_cosines) {
    if (!previous_) {
        previous_ = unsigned_cosines;
        return unsigned_cosines;
    }
    // extrapolate so that a component passing through zero keeps its new sign
    const Vec3 predicted = before_ ? Vec3(2.0 * *previous_ - *before_) : *previous_;
    Vec3 best = unsigned_cosines;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int mask = 0; mask < 8; ++mask) {
        const Vec3 cand(mask & 1 ? -unsigned_cosines.x() : unsigned_cosines.x(),
                        mask & 2 ? -unsigned_cosines.y() : unsigned_cosines.y(),
                        mask & 4 ? -unsigned_cosines.z() : unsigned_cosines.z());
        const double d = (cand - predicted).squaredNorm();
        if (d < best_dist) {
            best_dist = d;
            best = cand;
        }
    }
    before_ = previous_;
    previous_ = best;
    return best;
}

double unsigned_axis_angle(const Vec3& a, const Vec3& b) {
    const Vec3 fa = a.cwiseAbs().normalized();
    const Vec3 fb = b.cwiseAbs().normalized();
    return std::acos(std::clamp(fa.dot(fb), -1.0, 1.0));
}

HelmholtzRig::HelmholtzRig(double radius, int turns, Vec3 center, int segments) : radius_(radius), center_(center) {
    if (!(radius > 0.0)) throw ConfigError("Helmholtz radius must be positive");
    for (const Vec3 axis : {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()}) {
        tagphys::CoilSpec coil;
        coil.geometry = tagphys::HelmholtzPair{radius, axis, turns, segments};
        coil.center = center;
        models_.emplace_back(coil);
    }
}

HelmholtzRig HelmholtzRig::uniform(double radius, Vec3 center) {
    return HelmholtzRig(Uniform{}, radius, center);
}

Mat3 HelmholtzRig::normalized_fields(const Vec3& p) const {
    if (is_uniform()) return Mat3::Identity();
    Mat3 g;
    for (std::size_t j = 0; j < 3; ++j) {
        g.row(static_cast<int>(j)) = models_[j].field(p).transpose() / models_[j].b_ref();
    }
    return g;
}

Mat3 HelmholtzRig::predict(const Vec3& p, const Mat3& rotation) const {
    return (normalized_fields(p) * rotation).cwiseAbs2();
}

PoseEstimate pose_solve(const Mat3& observed, const HelmholtzRig& rig, const SolveOptions& opts) {
    if (!observed.allFinite() || (observed.array() < 0.0).any()) {
        throw DomainError("amplitude matrix must be finite and non-negative");
    }
    if (opts.grid < 1 || opts.max_iterations < 1 || opts.starts < 1) throw DomainError("invalid solver options");
    const Mat3 magnitude = observed.cwiseSqrt();
    const double h = rig.half_extent();

    // Coarse grid: at each point, orientation from every sign pattern of the
    // field-frame direction cosines (first row fixed, since flipping a tag
    // normal leaves its amplitudes unchanged).
    std::vector<Candidate> candidates;
    for (int ix = 0; ix < opts.grid; ++ix) {
        for (int iy = 0; iy < opts.grid; ++iy) {
            for (int iz = 0; iz < opts.grid; ++iz) {
                auto coord = [&](int i) { return opts.grid == 1 ? 0.0 : -h + 2.0 * h * i / (opts.grid - 1); };
                const Vec3 p = rig.center() + Vec3(coord(ix), coord(iy), coord(iz));
                const Mat3 g = rig.normalized_fields(p);
                const Mat3 g_inv = g.inverse();
                Candidate best{p, Mat3::Identity(), std::numeric_limits<double>::infinity()};
                for (int mask = 0; mask < 64; ++mask) {
                    Mat3 signed_m = magnitude;
                    for (int b = 0; b < 6; ++b) {
                        if (mask & (1 << b)) signed_m(1 + b / 3, b % 3) *= -1.0;
                    }
                    const Mat3 r = nearest_rotation(g_inv * signed_m);
                    const double cost = ((g * r).cwiseAbs2() - observed).squaredNorm();
                    if (cost < best.cost) best = {p, r, cost};
                }
                candidates.push_back(best);
            }
        }
    }
    const auto n_starts = std::min<std::size_t>(static_cast<std::size_t>(opts.starts), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(n_starts), candidates.end(),
                      [](const Candidate& a, const Candidate& b) { return a.cost < b.cost; });

    PoseEstimate best;
    double best_cost = std::numeric_limits<double>::infinity();
    Mat3 best_rotation = Mat3::Identity();
    const double bound = 1.5 * h;
    for (std::size_t s = 0; s < n_starts; ++s) {
        Vec3 p = candidates[s].position;
        Mat3 r = candidates[s].rotation;
        double cost = candidates[s].cost;
        double lambda = 1e-3;
        std::vector<double> history;
        int iterations = 0;
        for (; iterations < opts.max_iterations && cost > opts.tolerance; ++iterations) {
            const Vec9 r0 = residual(rig, p, r, observed);
            Eigen::Matrix<double, 9, 6> jac;
            for (int k = 0; k < 6; ++k) {
                const double step = 1e-6;
                Vec3 dp = Vec3::Zero(), dw = Vec3::Zero();
                (k < 3 ? dp : dw)(k % 3) = step;
                const Vec9 plus = residual(rig, p + dp, r * exp_so3(dw), observed);
                const Vec9 minus = residual(rig, p - dp, r * exp_so3(-dw), observed);
                jac.col(k) = (plus - minus) / (2.0 * step);
            }
            const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
            const Vec6 grad = jac.transpose() * r0;
            bool accepted = false;
            while (lambda < 1e12) {
                Eigen::Matrix<double, 6, 6> a = jtj;
                a.diagonal() += lambda * (jtj.diagonal() + Vec6::Constant(1e-9));
                const Vec6 delta = a.ldlt().solve(-grad);
                Vec3 p_new = p + delta.head<3>();
                for (int i = 0; i < 3; ++i) p_new(i) = std::clamp(p_new(i), rig.center()(i) - bound, rig.center()(i) + bound);
                const Mat3 r_new = r * exp_so3(delta.tail<3>());
                double cost_new = std::numeric_limits<double>::infinity();
                try {
                    cost_new = residual(rig, p_new, r_new, observed).squaredNorm();
                } catch (const SingularityError&) {
                    // a step onto a winding is rejected like any uphill step
                }
                if (cost_new < cost) {
                    p = p_new;
                    r = r_new;
                    cost = cost_new;
                    lambda = std::max(lambda / 3.0, 1e-12);
                    history.push_back(cost);
                    accepted = true;
                    break;
                }
                lambda *= 4.0;
            }
            if (!accepted) break;
        }
        if (cost < best_cost) {
            best_cost = cost;
            best_rotation = r;
            best.position = p;
            best.iterations = iterations;
            best.cost_history = std::move(history);
        }
        if (best_cost <= opts.tolerance) break;
    }

    const Mat3 r = nearest_rotation(best_rotation);
    for (int i = 0; i < 3; ++i) best.axes[static_cast<std::size_t>(i)] = r.col(i);
    best.orientation = Quat(r);
    best.residual = std::sqrt(best_cost / 9.0);
    if (rig.is_uniform()) {
        best.position.reset(); // unobservable in a uniform field
        best.proximity = 1.0;
    } else {
        best.proximity = std::clamp(1.0 - (*best.position - rig.center()).norm() / (std::sqrt(3.0) * h), 0.0, 1.0);
    }
    if (best.residual > opts.reject_residual) {
        throw PoseSolveError("pose solve did not converge", best);
    }
    return best;
}

PoseEstimate pose_solve(const TriadObservation& obs, const RangeModel& model, double reference_distance) {
    PoseEstimate out;
    out.underdetermined = true;
    out.proximity = range_from_triad(obs, model, reference_distance).proximity;
    out.field_direction = orientation_from_triad(obs);
    return out;
}

double axis_error(const Mat3& a, const Mat3& b) {
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = std::abs(a.col(i).normalized().dot(b.col(i).normalized()));
        worst = std::max(worst, std::acos(std::min(1.0, d)));
    }
    return worst;
}

double param_estimate(double f_obs, const tagphys::TagSpec& tag) {
    if (!(tag.alpha > 0.0)) throw DomainError("tag '" + tag.id + "' is not parametric");
    return std::clamp((tag.f0 - f_obs) / (tag.alpha * tag.f0), 0.0, 1.0);
}

} // namespace rtag::posest
