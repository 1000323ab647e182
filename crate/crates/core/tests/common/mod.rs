//! Independent reference implementations used only by integration tests.
#![allow(dead_code)]

use rrg_core::numerics::Matrix;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix: `(values, V)`
/// with `S = V·diag(values)·Vᵀ`.
pub fn jacobi_eigen(s: &Matrix) -> (Vec<f64>, Matrix) {
    let n = s.rows();
    let mut a: Vec<Vec<f64>> = s.to_rows();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - sn * akq;
                    a[k][q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - sn * aqk;
                    a[q][k] = sn * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - sn * vkq;
                    row[q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    (values, Matrix::from_rows(&v).unwrap())
}

/// `S^(-1/2)` through the eigen-decomposition.
pub fn inverse_sqrt(s: &Matrix) -> Matrix {
    let (vals, v) = jacobi_eigen(s);
    let n = s.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (0..n).map(|k| v[(i, k)] * v[(j, k)] / vals[k].sqrt()).sum();
        }
    }
    out
}

pub fn mat_vec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|i| (0..a.cols()).map(|j| a[(i, j)] * x[j]).sum())
        .collect()
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// χ² density evaluated independently of the library.
pub fn chi2_density(x: f64, k: u32) -> f64 {
    if x <= 0.0 {
        return if k == 2 { 0.5 } else { 0.0 };
    }
    let h = k as f64 / 2.0;
    ((h - 1.0) * x.ln() - x / 2.0 - h * 2f64.ln() - ln_gamma_half(k)).exp()
}

/// `ln Γ(k/2)` by the recurrences from `Γ(1) = 1`, `Γ(1/2) = √π`.
pub fn ln_gamma_half(k: u32) -> f64 {
    let mut acc = if k.is_multiple_of(2) {
        0.0
    } else {
        0.5 * std::f64::consts::PI.ln()
    };
    let mut z = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while z < k as f64 / 2.0 - 1e-12 {
        acc += z.ln();
        z += 1.0;
    }
    acc
}

/// Exact rational `num / 2^shift` with `i128` numerator, enough for the
/// small operands property tests draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dyadic {
    pub num: i128,
    pub shift: u32,
}

impl Dyadic {
    pub fn new(num: i128, shift: u32) -> Self {
        Self { num, shift }
    }

    fn align(self, other: Self) -> (i128, i128, u32) {
        let s = self.shift.max(other.shift);
        (
            self.num << (s - self.shift),
            other.num << (s - other.shift),
            s,
        )
    }

    pub fn add(self, o: Self) -> Self {
        let (a, b, s) = self.align(o);
        Self::new(a + b, s)
    }

    pub fn sub(self, o: Self) -> Self {
        let (a, b, s) = self.align(o);
        Self::new(a - b, s)
    }

    pub fn mul(self, o: Self) -> Self {
        Self::new(self.num * o.num, self.shift + o.shift)
    }
}

/// Round `p / q` (q > 0) to nearest with ties toward +∞.
pub fn round_half_up_div(p: i128, q: i128) -> i128 {
    assert!(q > 0);
    // floor((2p + q) / (2q))
    let n = 2 * p + q;
    let d = 2 * q;
    n.div_euclid(d)
}

/// Raw value of `x` at `frac` fractional bits, rounded half up.
pub fn dyadic_to_raw(x: Dyadic, frac: u32) -> i128 {
    if frac >= x.shift {
        x.num << (frac - x.shift)
    } else {
        round_half_up_div(x.num, 1i128 << (x.shift - frac))
    }
}

/// Reference ranges and formats per variable: `(name, min, max, whole, (signed,
/// word, frac))`.
pub const REFERENCE_FORMATS: [(&str, f64, f64, bool, (bool, u32, u32)); 16] = [
    (
        "chi_sq",
        0.707_759_862_765_392,
        1557.604152595377,
        false,
        (false, 17, 6),
    ),
    ("N", 10.0, 10.0, true, (false, 4, 0)),
    ("count", 1.0, 2001.0, true, (false, 11, 0)),
    ("dhat", 2.04, 2.04, false, (false, 8, 6)),
    ("i", 1.0, 10.0, true, (false, 4, 0)),
    (
        "r",
        -8.063083634712106,
        16.23254809745425,
        false,
        (true, 12, 6),
    ),
    (
        "r_avg",
        -3.65277233214348,
        10.692100391687019,
        false,
        (true, 15, 6),
    ),
    ("r_sq", 0.0, 263.4956467044852, false, (false, 15, 6)),
    ("r_sq_sum", 0.0, 1172.7825383849695, false, (false, 17, 6)),
    (
        "r_sub_avg",
        -11.286388915769156,
        13.783910814366264,
        false,
        (true, 11, 6),
    ),
    (
        "r_sub_avg_sq",
        0.0,
        189.99619733840325,
        false,
        (false, 14, 6),
    ),
    (
        "r_sub_avg_sq_sum",
        0.0,
        454.8409417263664,
        false,
        (false, 15, 6),
    ),
    (
        "r_sum",
        -36.5277233214348,
        106.92100391687019,
        false,
        (true, 14, 6),
    ),
    ("r_var", 0.0, 45.48409417261664, false, (false, 12, 6)),
    ("u", 2.0, 2.0, true, (false, 2, 0)),
    (
        "ym",
        -3.983083634712197,
        20.31254809745427,
        false,
        (true, 12, 6),
    ),
];

/// Student-t density with `nu` degrees of freedom.
pub fn student_t_density(t: f64, nu: u32) -> f64 {
    let nu_f = nu as f64;
    let ln_c = ln_gamma_half(nu + 1) - ln_gamma_half(nu) - 0.5 * (nu_f * std::f64::consts::PI).ln();
    (ln_c - (nu_f + 1.0) / 2.0 * (1.0 + t * t / nu_f).ln()).exp()
}

/// `P(|T| > c)` for Student-t by quadrature of the density on `[0, c]`.
pub fn student_t_two_sided(c: f64, nu: u32) -> f64 {
    1.0 - 2.0 * simpson(|t| student_t_density(t, nu), 0.0, c, 20_000)
}
