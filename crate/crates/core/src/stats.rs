//! Small statistics and quadrature helpers shared by the estimators.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Ratio estimator `Σ s_i / Σ n_i` over independent clusters with its
/// cluster-robust standard error.
///
/// Samples inside a cluster (one trajectory) may be arbitrarily correlated;
/// only the clusters themselves are assumed independent.
pub fn cluster_ratio(sums: &[f64], counts: &[f64]) -> (f64, f64) {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sums.iter().sum::<f64>() / total;
    let active = counts.iter().filter(|&&c| c > 0.0).count();
    if active < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = sums
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c > 0.0)
        .map(|(&s, &c)| (s - mean * c).powi(2))
        .sum();
    let k = active as f64;
    (mean, (k / (k - 1.0) * ss).sqrt() / total)
}

/// Jarque–Bera normality test. Returns `(statistic, p_value)`.
pub fn jarque_bera(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    let jb = n / 6.0 * (skew * skew + kurt * kurt / 4.0);
    (jb, (-0.5 * jb).exp())
}

/// Chi-square goodness of fit of `xs` against `N(mean, sigma²)` using
/// `n_bins` equiprobable bins. Returns `(statistic, p_value)`.
pub fn normal_chi_square(xs: &[f64], mean: f64, sigma: f64, n_bins: usize) -> (f64, f64) {
    assert!(n_bins >= 3);
    let normal = Normal::new(mean, sigma).expect("valid normal");
    let mut counts = vec![0usize; n_bins];
    for &x in xs {
        let p = normal.cdf(x);
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let expected = xs.len() as f64 / n_bins as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((n_bins - 1) as f64).expect("valid dof");
    (stat, 1.0 - dist.cdf(stat))
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_sf(stat: f64, dof: f64) -> f64 {
    ChiSquared::new(dof).map(|d| 1.0 - d.cdf(stat)).unwrap_or(f64::NAN)
}

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss–Legendre quadrature on `panels` equal panels.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            s += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += s * half;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let v = gauss_legendre(|x| x.powi(7) - 3.0 * x.powi(2), -1.0, 2.0, 1);
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn cluster_ratio_reduces_to_mean_for_unit_clusters() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let ones = [1.0; 4];
        let (m, se) = cluster_ratio(&xs, &ones);
        let (m2, se2) = mean_and_se(&xs);
        assert!((m - m2).abs() < 1e-15);
        assert!((se - se2).abs() < 1e-12);
    }

    #[test]
    fn jarque_bera_rejects_uniform() {
        let xs: Vec<f64> = (0..20_000).map(|i| (i as f64 + 0.5) / 20_000.0).collect();
        assert!(jarque_bera(&xs).1 < 1e-6);
    }
}
