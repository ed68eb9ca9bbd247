//! One-dimensional quadrature: Gauss–Legendre rules, adaptive Gauss–Kronrod,
//! and a substitution for integrable endpoint singularities.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A Gauss–Legendre rule mapped to `[a, b]`.
pub struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(x, w)` pairs mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(a: f64, b: f64, f: &mut impl FnMut(f64) -> f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for j in 0..7 {
        let dx = half * GK_NODES[j];
        let s = f(mid - dx) + f(mid + dx);
        kronrod += GK_WEIGHTS[j] * s;
        if j % 2 == 1 {
            gauss += G_WEIGHTS[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut segments = vec![{
        let (v, e) = gk15(a, b, &mut f);
        (a, b, v, e)
    }];
    for _ in 0..2000 {
        let total: f64 = segments.iter().map(|s| s.2).sum();
        let err: f64 = segments.iter().map(|s| s.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let (k, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (lo, hi, _, _) = segments.swap_remove(k);
        let m = 0.5 * (lo + hi);
        let (v1, e1) = gk15(lo, m, &mut f);
        let (v2, e2) = gk15(m, hi, &mut f);
        segments.push((lo, m, v1, e1));
        segments.push((m, hi, v2, e2));
    }
    segments.iter().map(|s| s.2).sum()
}

/// `∫_a^b f(ρ) dρ` where `f` behaves like `(ρ − a)^{-gamma}` near `a`,
/// with `0 <= gamma < 1`. Uses `s = (ρ − a)^{1−gamma}`, which turns the
/// singular factor into a smooth one.
pub fn integrate_left_singular(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    gamma: f64,
    rel_tol: f64,
) -> f64 {
    assert!((0.0..1.0).contains(&gamma));
    if b <= a {
        return 0.0;
    }
    let e = 1.0 - gamma;
    let s_max = (b - a).powf(e);
    integrate(
        |s| {
            if s <= 0.0 {
                return 0.0;
            }
            let t = s.powf(1.0 / e);
            // dρ = t^{gamma} / e ds; a + t can round back onto the
            // singularity, where the true contribution is negligible
            let v = f(a + t);
            if v.is_finite() {
                v * t.powf(gamma) / e
            } else {
                0.0
            }
        },
        0.0,
        s_max,
        rel_tol,
        1e-300,
    )
}

/// Composite Gauss–Legendre on `[a, b]` with nodes clustered toward both
/// ends by `ψ(v) = v^p / (v^p + (1 − v)^p)`. Handles integrable endpoint
/// singularities of strength `< 1 − 1/p` without knowing where they are.
pub fn integrate_clustered(f: impl Fn(f64) -> f64, a: f64, b: f64, p: f64, rule: &Rule) -> f64 {
    if b <= a {
        return 0.0;
    }
    rule.mapped(0.0, 1.0)
        .map(|(v, w)| {
            let vp = v.powf(p);
            let up = (1.0 - v).powf(p);
            let den = vp + up;
            let psi = vp / den;
            let dpsi = p * (v.powf(p - 1.0) * up + vp * (1.0 - v).powf(p - 1.0)) / (den * den);
            w * dpsi * (b - a) * f(a + (b - a) * psi)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let rule = Rule::new(5);
        // exact through degree 9
        let v = rule.integrate(0.0, 2.0, |x| x.powi(9) - 3.0 * x.powi(4));
        let exact = 2f64.powi(10) / 10.0 - 3.0 * 2f64.powi(5) / 5.0;
        assert!((v - exact).abs() < 1e-10);
        let (_, w) = gauss_legendre(40);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn adaptive_handles_peaks() {
        let v = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12, 0.0);
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn left_singular_matches_antiderivative() {
        // ∫_{0.5}^{0.75} (ρ−0.5)^{−1/2} ρ² dρ
        let v = integrate_left_singular(|r| (r - 0.5f64).powf(-0.5) * r * r, 0.5, 0.75, 0.5, 1e-13);
        let s: f64 = 0.25;
        let exact = 0.4 * s.powf(2.5) + 2.0 / 3.0 * s.powf(1.5) + 0.5 * s.sqrt();
        assert!((v - exact).abs() < 1e-12, "{v} {exact}");
    }

    #[test]
    fn clustered_rule_tolerates_endpoint_singularity() {
        let rule = Rule::new(32);
        let v = integrate_clustered(|x| x.powf(-0.5), 0.0, 1.0, 4.0, &rule);
        assert!((v - 2.0).abs() < 1e-9, "{v}");
    }
}
