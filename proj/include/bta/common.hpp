#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bta {

// ---- errors ------------------------------------------------------------

// Bad scenario/config input. Maps to CLI exit code 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required prior-stage artifact is missing. Maps to CLI exit code 3.
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller broke an API precondition (shape mismatch, empty mask, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- dense row-major matrix ---------------------------------------------

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    std::span<const double> flat() const { return {a.data(), a.size()}; }
    std::span<double> flat() { return {a.data(), a.size()}; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Solves A x = b for symmetric positive definite A (in-place Cholesky).
// Throws ContractError on a non-positive pivot.
std::vector<double> solve_spd(Matrix A, std::vector<double> b);

// Lower-triangular Cholesky factor L of a symmetric positive definite matrix.
Matrix cholesky(const Matrix& sigma);

// ---- deterministic rng ---------------------------------------------------

// mt19937_64 plus a hand-rolled Box-Muller so that streams are identical
// across standard libraries (std::normal_distribution is not portable).
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    // uniform index in [0, n)
    size_t index(size_t n) { return static_cast<size_t>(eng_() % n); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---- seed derivation ------------------------------------------------------

// FNV-1a over the little-endian master seed followed by the stage name.
// Every stage/sub-experiment seed is derived this way from the master seed.
uint64_t derive_seed(uint64_t master, const std::string& name);

// FNV-1a over an arbitrary string (config hashing, run directory names).
uint64_t fnv1a64(const std::string& bytes);

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace bta
