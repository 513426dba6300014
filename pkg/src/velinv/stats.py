"""Quality metrics and the ablation statistics toolkit.

SSIM follows the Wang et al. windowed formulation (11x11 Gaussian window,
sigma 1.5, k1=0.01, k2=0.03), evaluated over valid-mode windows only.

The hypothesis tests are self-contained: Shapiro-Wilk uses Royston's
AS R94 polynomial approximation with the published coefficients embedded,
Levene is the classical mean-centered variant, and one-way ANOVA p-values
come from the F distribution evaluated through a continued-fraction
regularized incomplete beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window_size % 2 != 1 or self.window_size < 3:
            raise ValueError("window_size must be an odd integer >= 3")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    df: tuple[float, ...]

    __test__ = False  # not a pytest class despite the name

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0):
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g1 = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    w = np.outer(g1, g1)
    return w / w.sum()


def _window_mean(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # valid-mode weighted local mean via sliding windows
    views = sliding_window_view(img, win.shape)
    return np.einsum("ijkl,kl->ij", views, win)


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity between two equally shaped 2D images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"expected 2D images, got {a.ndim}D")
    if min(a.shape) < params.window_size:
        raise ValueError(
            f"images {a.shape} smaller than the {params.window_size}x{params.window_size} window"
        )
    win = _gaussian_window(params.window_size, params.sigma)
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2

    mu_a = _window_mean(a, win)
    mu_b = _window_mean(b, win)
    var_a = _window_mean(a * a, win) - mu_a * mu_a
    var_b = _window_mean(b * b, win) - mu_b * mu_b
    cov = _window_mean(a * b, win) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------------------
# distribution helpers
# ---------------------------------------------------------------------------


def norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


# Acklam's rational approximation for the inverse normal CDF, refined with
# one Halley step against erfc so the Shapiro-Wilk scores are accurate to
# near machine precision.
_PPF_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
          1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_PPF_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
          6.680131188771972e01, -1.328068155288572e01)
_PPF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
          -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_PPF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
          3.754408661907416e00)


def norm_ppf(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be in (0, 1), got {p}")
    a, b, c, d = _PPF_A, _PPF_B, _PPF_C, _PPF_D
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    # Halley refinement
    e = norm_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def _betacf(a: float, b: float, x: float) -> float:
    # continued fraction for the incomplete beta (modified Lentz)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise RuntimeError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F distribution with (d1, d2) degrees of freedom."""
    if d1 <= 0 or d2 <= 0:
        raise ValueError(f"degrees of freedom must be positive, got ({d1}, {d2})")
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return betainc_regularized(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))


# ---------------------------------------------------------------------------
# hypothesis tests
# ---------------------------------------------------------------------------

# Royston (1995) AS R94 polynomial corrections for the two outer
# Shapiro-Wilk coefficients, ascending powers of 1/sqrt(n).
_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
# p-value approximations: shifted log-normal for 4 <= n <= 11,
# log-normal in ln(n) for n >= 12.
_SW_G = (-2.273, 0.459)
_SW_C3 = (0.5440, -0.39978, 0.025054, -0.0006714)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)


def _poly(coeffs, x: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def shapiro_wilk(sample) -> TestResult:
    """Shapiro-Wilk normality test via the AS R94 approximation, 3 <= n <= 50."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    if n < 3 or n > 50:
        raise ValueError(f"sample size {n} outside supported range [3, 50]")
    if x[0] == x[-1]:
        raise ValueError("sample is constant; W statistic undefined")

    m = np.array([norm_ppf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
    ssumm2 = float(m @ m)
    rsn = 1.0 / math.sqrt(n)
    a = m / math.sqrt(ssumm2)

    if n > 5:
        a_n = _poly(_SW_C1, rsn) + a[-1]
        a_n1 = _poly(_SW_C2, rsn) + a[-2]
        phi = (ssumm2 - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (
            1.0 - 2.0 * a_n**2 - 2.0 * a_n1**2
        )
        a = m / math.sqrt(phi)
        a[-1], a[-2] = a_n, a_n1
        a[0], a[1] = -a_n, -a_n1
    elif n > 3:
        a_n = _poly(_SW_C1, rsn) + a[-1]
        phi = (ssumm2 - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n**2)
        a = m / math.sqrt(phi)
        a[-1] = a_n
        a[0] = -a_n
    else:
        a = np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])

    w_num = float(a @ x) ** 2
    w_den = float(np.sum((x - x.mean()) ** 2))
    w = min(w_num / w_den, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = min(max(p, 0.0), 1.0)
    else:
        if 1.0 - w < 1e-99:
            p = 1.0
        elif n <= 11:
            gamma = _poly(_SW_G, n)
            arg = gamma - math.log(1.0 - w)
            if arg <= 0:
                p = 0.0
            else:
                mu = _poly(_SW_C3, n)
                sigma = math.exp(_poly(_SW_C4, n))
                p = 1.0 - norm_cdf((-math.log(arg) - mu) / sigma)
        else:
            ln_n = math.log(n)
            mu = _poly(_SW_C5, ln_n)
            sigma = math.exp(_poly(_SW_C6, ln_n))
            p = 1.0 - norm_cdf((math.log(1.0 - w) - mu) / sigma)
    return TestResult(statistic=w, p_value=p, df=(float(n),))


def levene(groups) -> TestResult:
    """Classical (mean-centered) Levene test for equality of variances."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    k = len(groups)
    if k < 2:
        raise ValueError(f"need at least 2 groups, got {k}")
    if any(g.size < 2 for g in groups):
        raise ValueError("every group needs at least 2 observations")
    z = [np.abs(g - g.mean()) for g in groups]
    n_i = np.array([g.size for g in groups], dtype=np.float64)
    n_total = float(n_i.sum())
    zbar_i = np.array([zi.mean() for zi in z])
    zbar = float(sum(zi.sum() for zi in z)) / n_total
    between = float(np.sum(n_i * (zbar_i - zbar) ** 2))
    within = float(sum(np.sum((zi - zb) ** 2) for zi, zb in zip(z, zbar_i)))
    df = (k - 1.0, n_total - k)
    if within == 0.0:
        if between == 0.0:
            return TestResult(statistic=0.0, p_value=1.0, df=df)
        return TestResult(statistic=math.inf, p_value=0.0, df=df)
    stat = (df[1] / df[0]) * between / within
    return TestResult(statistic=stat, p_value=1.0 - f_cdf(stat, df[0], df[1]), df=df)


def anova_oneway(groups) -> TestResult:
    """One-way ANOVA F-test for equality of group means."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    k = len(groups)
    if k < 2:
        raise ValueError(f"need at least 2 groups, got {k}")
    if any(g.size < 2 for g in groups):
        raise ValueError("every group needs at least 2 observations")
    n_i = np.array([g.size for g in groups], dtype=np.float64)
    n_total = float(n_i.sum())
    means = np.array([g.mean() for g in groups])
    grand = float(sum(g.sum() for g in groups)) / n_total
    ss_between = float(np.sum(n_i * (means - grand) ** 2))
    ss_within = float(sum(np.sum((g - mu) ** 2) for g, mu in zip(groups, means)))
    df = (k - 1.0, n_total - k)
    if ss_within == 0.0:
        if ss_between == 0.0:
            raise ValueError("all observations identical; F statistic undefined")
        return TestResult(statistic=math.inf, p_value=0.0, df=df)
    f_stat = (ss_between / df[0]) / (ss_within / df[1])
    return TestResult(statistic=f_stat, p_value=1.0 - f_cdf(f_stat, df[0], df[1]), df=df)
