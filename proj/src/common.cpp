#include "bta/common.hpp"

namespace bta {

std::vector<double> solve_spd(Matrix A, std::vector<double> b) {
    const int n = A.rows;
    if (A.cols != n || static_cast<int>(b.size()) != n) {
        throw ContractError("solve_spd: dimension mismatch");
    }
    // in-place LL^T factorization
    for (int j = 0; j < n; ++j) {
        double d = A.at(j, j);
        for (int k = 0; k < j; ++k) d -= A.at(j, k) * A.at(j, k);
        if (!(d > 0.0)) {
            throw ContractError("solve_spd: matrix not positive definite");
        }
        const double ljj = std::sqrt(d);
        A.at(j, j) = ljj;
        for (int i = j + 1; i < n; ++i) {
            double s = A.at(i, j);
            for (int k = 0; k < j; ++k) s -= A.at(i, k) * A.at(j, k);
            A.at(i, j) = s / ljj;
        }
    }
    // forward then backward substitution
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= A.at(i, k) * b[k];
        b[i] = s / A.at(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= A.at(k, i) * b[k];
        b[i] = s / A.at(i, i);
    }
    return b;
}

Matrix cholesky(const Matrix& sigma) {
    const int n = sigma.rows;
    if (sigma.cols != n) throw ContractError("cholesky: matrix not square");
    Matrix L(n, n, 0.0);
    for (int j = 0; j < n; ++j) {
        double d = sigma.at(j, j);
        for (int k = 0; k < j; ++k) d -= L.at(j, k) * L.at(j, k);
        if (!(d > 0.0)) throw ContractError("cholesky: matrix not positive definite");
        L.at(j, j) = std::sqrt(d);
        for (int i = j + 1; i < n; ++i) {
            double s = sigma.at(i, j);
            for (int k = 0; k < j; ++k) s -= L.at(i, k) * L.at(j, k);
            L.at(i, j) = s / L.at(j, j);
        }
    }
    return L;
}

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t derive_seed(uint64_t master, const std::string& name) {
    uint64_t h = 14695981039346656037ull;
    for (int i = 0; i < 8; ++i) {
        h ^= static_cast<unsigned char>(master >> (8 * i));
        h *= 1099511628211ull;
    }
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace bta
