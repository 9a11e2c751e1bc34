#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace otprl {
namespace stats {

inline double mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

inline double sample_var(const std::vector<double>& x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

inline double log_gamma(double x) { return std::lgamma(x); }

/// Regularized incomplete beta I_x(a, b) by continued fraction.
inline double betacf(double a, double b, double x) {
    const int max_iter = 300;
    const double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double betainc(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

/// P(T > t) for Student's t with nu degrees of freedom (t may be negative).
inline double student_t_sf(double t, double nu) {
    const double p_two_sided = betainc(0.5 * nu, 0.5, nu / (nu + t * t));
    return t >= 0.0 ? 0.5 * p_two_sided : 1.0 - 0.5 * p_two_sided;
}

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p_one_sided = 1.0; // P(mean(x) > mean(y)) under H0
};

/// Welch's unequal-variance t test of mean(x) > mean(y).
inline WelchResult welch_t_test(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() < 2 || y.size() < 2)
        throw std::invalid_argument("welch_t_test: need at least 2 samples per group");
    const double n1 = static_cast<double>(x.size()), n2 = static_cast<double>(y.size());
    const double v1 = sample_var(x) / n1, v2 = sample_var(y) / n2;
    WelchResult r;
    if (v1 + v2 == 0.0) {
        r.t = 0.0;
        r.df = n1 + n2 - 2.0;
        r.p_one_sided = mean(x) > mean(y) ? 0.0 : 1.0;
        if (mean(x) == mean(y)) r.p_one_sided = 0.5;
        return r;
    }
    r.t = (mean(x) - mean(y)) / std::sqrt(v1 + v2);
    r.df = (v1 + v2) * (v1 + v2) /
           (v1 * v1 / (n1 - 1.0) + v2 * v2 / (n2 - 1.0));
    r.p_one_sided = student_t_sf(r.t, r.df);
    return r;
}

struct SignTestResult {
    int wins = 0;   // x < y (x "better" when lower is better; caller decides)
    int losses = 0; // x > y
    int ties = 0;
    double p_two_sided = 1.0;
};

/// Exact paired sign test; ties are dropped.
inline SignTestResult sign_test(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("sign_test: unmatched sample sizes");
    SignTestResult r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < y[i])
            ++r.wins;
        else if (x[i] > y[i])
            ++r.losses;
        else
            ++r.ties;
    }
    const int n = r.wins + r.losses;
    if (n == 0) return r;
    const int k = std::min(r.wins, r.losses);
    // Binomial(n, 1/2) lower tail, exact.
    double tail = 0.0, log_half_n = n * std::log(0.5);
    for (int i = 0; i <= k; ++i) {
        const double log_c = log_gamma(n + 1.0) - log_gamma(i + 1.0) - log_gamma(n - i + 1.0);
        tail += std::exp(log_c + log_half_n);
    }
    r.p_two_sided = std::min(1.0, 2.0 * tail);
    return r;
}

/// Upper critical value of chi-squared at tail probability alpha
/// (Wilson-Hilferty approximation; adequate for the test sizes used here).
inline double chi2_critical(double df, double alpha) {
    // normal quantile via Acklam-style rational approximation on common alphas
    auto norm_quantile = [](double p) {
        // Beasley-Springer-Moro
        static const double a[] = {2.50662823884, -18.61500062529, 41.39119773534, -25.44106049637};
        static const double b[] = {-8.47351093090, 23.08336743743, -21.06224101826, 3.13082909833};
        static const double c[] = {0.3374754822726147, 0.9761690190917186, 0.1607979714918209,
                                   0.0276438810333863, 0.0038405729373609, 0.0003951896511919,
                                   0.0000321767881768, 0.0000002888167364, 0.0000003960315187};
        const double y = p - 0.5;
        if (std::fabs(y) < 0.42) {
            const double r = y * y;
            return y * (((a[3] * r + a[2]) * r + a[1]) * r + a[0]) /
                   ((((b[3] * r + b[2]) * r + b[1]) * r + b[0]) * r + 1.0);
        }
        double r = p > 0.5 ? 1.0 - p : p;
        r = std::log(-std::log(r));
        double x = c[0];
        double rp = 1.0;
        for (int i = 1; i < 9; ++i) {
            rp *= r;
            x += c[i] * rp;
        }
        return p > 0.5 ? x : -x;
    };
    const double z = norm_quantile(1.0 - alpha);
    const double t = 1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df));
    return df * t * t * t;
}

} // namespace stats
} // namespace otprl
