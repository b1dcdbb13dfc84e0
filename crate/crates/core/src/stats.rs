//! Two-sample t-tests, Bonferroni adjustment and a two-way between-subjects
//! ANOVA, with the distribution tails computed from the regularized
//! incomplete beta function.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("each group needs at least 2 values (got {0} and {1})")]
    TooFewValues(usize, usize),
    #[error("non-finite input value")]
    NonFinite,
    #[error("m = {m} is smaller than the number of tests ({tests})")]
    TooFewComparisons { m: usize, tests: usize },
    #[error("empty ANOVA cell ({0}, {1})")]
    EmptyCell(usize, usize),
    #[error("ANOVA needs at least 2 levels per factor and one residual degree of freedom")]
    Degenerate,
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_inc_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_inc_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// `P(T <= t)`.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse of [`t_cdf`] by bisection.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf(lo, df) > p {
        lo *= 2.0;
    }
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `P(F >= f)` for the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_infinite() {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    beta_inc_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Set when both groups have zero variance but different means: `t` is
    /// infinite and `p` is reported as 0.
    pub degenerate: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn check_groups(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewValues(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn finish(diff: f64, se: f64, df: f64) -> TTest {
    if se == 0.0 {
        return if diff == 0.0 {
            TTest { t: 0.0, df, p: 1.0, degenerate: false }
        } else {
            TTest { t: diff.signum() * f64::INFINITY, df, p: 0.0, degenerate: true }
        };
    }
    let t = diff / se;
    TTest { t, df, p: t_two_sided_p(t, df), degenerate: false }
}

/// Student's two-sample t-test with pooled variance, `df = n1 + n2 - 2`.
pub fn t_test_two_sample(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    check_groups(a, b)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let df = n1 + n2 - 2.0;
    let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
    Ok(finish(m1 - m2, (pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), df))
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite `df`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    check_groups(a, b)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (q1, q2) = (v1 / n1, v2 / n2);
    let df = if q1 + q2 == 0.0 { n1 + n2 - 2.0 } else { (q1 + q2).powi(2) / (q1 * q1 / (n1 - 1.0) + q2 * q2 / (n2 - 1.0)) };
    Ok(finish(m1 - m2, (q1 + q2).sqrt(), df))
}

/// `min(1, m p)` for each p.
pub fn bonferroni(ps: &[f64], m: usize) -> Result<Vec<f64>, StatsError> {
    if m < ps.len() {
        return Err(StatsError::TooFewComparisons { m, tests: ps.len() });
    }
    Ok(ps.iter().map(|p| (p * m as f64).min(1.0)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub ss: f64,
    pub df: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub factor_a: Effect,
    pub factor_b: Effect,
    pub interaction: Effect,
    pub error_ss: f64,
    pub error_df: f64,
    /// Sum of squares of all observations around the grand mean.
    pub total_ss: f64,
}

/// Two-way between-subjects ANOVA. `cells[i][j]` holds the observations at
/// level `i` of factor A and level `j` of factor B. Unbalanced designs use
/// unweighted cell means scaled by the harmonic mean cell size; on balanced
/// designs this is the ordinary decomposition.
pub fn anova_two_way(cells: &[Vec<Vec<f64>>]) -> Result<AnovaTable, StatsError> {
    let a = cells.len();
    let b = cells.first().map_or(0, |r| r.len());
    if a < 2 || b < 2 || cells.iter().any(|r| r.len() != b) {
        return Err(StatsError::Degenerate);
    }
    for (i, row) in cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if cell.is_empty() {
                return Err(StatsError::EmptyCell(i, j));
            }
            if cell.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite);
            }
        }
    }
    let n_total: usize = cells.iter().flatten().map(|c| c.len()).sum();
    let error_df = (n_total - a * b) as f64;
    if error_df < 1.0 {
        return Err(StatsError::Degenerate);
    }
    let means: Vec<Vec<f64>> = cells.iter().map(|r| r.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()).collect();
    let n_h = (a * b) as f64 / cells.iter().flatten().map(|c| 1.0 / c.len() as f64).sum::<f64>();
    let grand = means.iter().flatten().sum::<f64>() / (a * b) as f64;
    let row_m: Vec<f64> = means.iter().map(|r| r.iter().sum::<f64>() / b as f64).collect();
    let col_m: Vec<f64> = (0..b).map(|j| means.iter().map(|r| r[j]).sum::<f64>() / a as f64).collect();
    let ss_a = n_h * b as f64 * row_m.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = n_h * a as f64 * col_m.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    for i in 0..a {
        for j in 0..b {
            ss_ab += (means[i][j] - row_m[i] - col_m[j] + grand).powi(2);
        }
    }
    ss_ab *= n_h;
    let mut error_ss = 0.0;
    for (row, mrow) in cells.iter().zip(&means) {
        for (cell, m) in row.iter().zip(mrow) {
            error_ss += cell.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        }
    }
    let obs_mean = cells.iter().flatten().flatten().sum::<f64>() / n_total as f64;
    let total_ss = cells.iter().flatten().flatten().map(|v| (v - obs_mean).powi(2)).sum();
    let ms_e = error_ss / error_df;
    let effect = |ss: f64, df: f64| {
        let ms = ss / df;
        let f = if ms_e > 0.0 {
            ms / ms_e
        } else if ms == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Effect { ss, df, f, p: f_sf(f, df, error_df) }
    };
    Ok(AnovaTable {
        factor_a: effect(ss_a, (a - 1) as f64),
        factor_b: effect(ss_b, (b - 1) as f64),
        interaction: effect(ss_ab, ((a - 1) * (b - 1)) as f64),
        error_ss,
        error_df,
        total_ss,
    })
}

/// One row of a stats report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    pub test: String,
    pub statistic: f64,
    /// One entry for t tests, `[effect, error]` for F tests.
    pub df: Vec<f64>,
    pub p: f64,
    pub p_adjusted: f64,
}

/// p value in the compact style used in reports.
pub fn format_p(p: f64) -> String {
    if p < 1e-4 {
        return "p<0.0001".into();
    }
    if p >= 1.0 {
        return "p=1".into();
    }
    let digits = (1 - p.log10().floor() as i32).max(1) as usize;
    let s = format!("{p:.digits$}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("p={s}")
}

fn format_df(df: f64) -> String {
    if df.fract() == 0.0 {
        format!("{}", df as i64)
    } else {
        format!("{df:.1}")
    }
}

/// `t(28)=3.94, p=0.0005`.
pub fn format_t(t: &TTest) -> String {
    format!("t({})={:.2}, {}", format_df(t.df), t.t, format_p(t.p))
}

/// `F(4,58)=3.14, p=0.02`.
pub fn format_f(e: &Effect, error_df: f64) -> String {
    format!("F({},{})={:.2}, {}", format_df(e.df), format_df(error_df), e.f, format_p(e.p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
    use statrs::function::gamma::ln_gamma as oracle_ln_gamma;

    #[test]
    fn ln_gamma_matches_reference() {
        for x in [0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 14.5, 100.0] {
            assert!((ln_gamma(x) - oracle_ln_gamma(x)).abs() < 1e-12 * oracle_ln_gamma(x).abs().max(1.0), "{x}");
        }
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn tails_match_reference_distributions() {
        for df in [1.0, 4.0, 28.0, 100.0] {
            let d = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [0.0, 0.3, 1.0, 2.43, 3.94, 8.0] {
                let p = 2.0 * (1.0 - d.cdf(t));
                assert!((t_two_sided_p(t, df) - p).abs() < 1e-12, "t={t} df={df}");
            }
        }
        for (d1, d2) in [(1.0, 10.0), (4.0, 58.0), (2.0, 52.0)] {
            let d = FisherSnedecor::new(d1, d2).unwrap();
            for f in [0.2, 1.0, 3.14, 10.0] {
                assert!((f_sf(f, d1, d2) - d.sf(f)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let q = t_quantile(0.995, 14.0);
        assert!((t_cdf(q, 14.0) - 0.995).abs() < 1e-12);
        assert!((q - StudentsT::new(0.0, 1.0, 14.0).unwrap().inverse_cdf(0.995)).abs() < 1e-8);
    }

    #[test]
    fn pooled_t_by_hand() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 3.0, 4.0];
        let r = t_test_two_sample(&a, &b).unwrap();
        // means 2 and 3, pooled variance 1, se = sqrt(2/3)
        let t = -1.0 / (2.0f64 / 3.0).sqrt();
        assert!((r.t - t).abs() < 1e-12);
        assert_eq!(r.df, 4.0);
        let p = 2.0 * StudentsT::new(0.0, 1.0, 4.0).unwrap().cdf(t);
        assert!((r.p - p).abs() < 1e-12);
    }

    #[test]
    fn degenerate_groups() {
        let r = t_test_two_sample(&[2.0; 4], &[2.0; 4]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = t_test_two_sample(&[2.0; 4], &[3.0; 4]).unwrap();
        assert!(r.degenerate && r.p == 0.0 && r.t.is_infinite());
        assert!(t_test_two_sample(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn welch_df() {
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.5, 3.0]).unwrap();
        let (q1, q2) = (5.0 / 3.0 / 4.0, 0.25 / 3.0);
        let df = (q1 + q2) * (q1 + q2) / (q1 * q1 / 3.0 + q2 * q2 / 2.0);
        assert!((r.df - df).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_examples() {
        let adj = bonferroni(&[0.0005, 0.022, 0.2], 10).unwrap();
        assert!((adj[0] - 0.005).abs() < 1e-15);
        assert!((adj[1] - 0.22).abs() < 1e-15);
        assert_eq!(adj[2], 1.0);
        assert!(bonferroni(&[0.1; 3], 2).is_err());
    }

    #[test]
    fn two_by_two_anova_by_hand() {
        let cells = vec![vec![vec![1.0, 3.0], vec![5.0, 7.0]], vec![vec![2.0, 4.0], vec![10.0, 12.0]]];
        let r = anova_two_way(&cells).unwrap();
        // cell means 2, 6, 3, 11; grand 5.5; rows 4, 7; cols 2.5, 8.5
        assert!((r.factor_a.ss - 2.0 * 2.0 * (1.5f64.powi(2) * 2.0)).abs() < 1e-12);
        assert!((r.factor_b.ss - 2.0 * 2.0 * (3.0f64.powi(2) * 2.0)).abs() < 1e-12);
        // interaction residuals are all +-1
        assert!((r.interaction.ss - 2.0 * 4.0).abs() < 1e-12);
        assert!((r.error_ss - 8.0).abs() < 1e-12);
        assert_eq!(r.error_df, 4.0);
        assert!((r.interaction.f - 4.0).abs() < 1e-12);
        let sum = r.factor_a.ss + r.factor_b.ss + r.interaction.ss + r.error_ss;
        assert!((sum - r.total_ss).abs() < 1e-10 * r.total_ss);
    }

    #[test]
    fn additive_cells_have_no_interaction() {
        let (alpha, beta) = ([0.0, 2.0, -1.0], [1.0, 4.0, 0.5, -3.0]);
        let cells: Vec<Vec<Vec<f64>>> = alpha
            .iter()
            .map(|a| beta.iter().map(|b| vec![10.0 + a + b - 0.5, 10.0 + a + b + 0.5, 10.0 + a + b]).collect())
            .collect();
        let r = anova_two_way(&cells).unwrap();
        assert!(r.interaction.f.abs() < 1e-12);
        assert_eq!((r.factor_a.df, r.factor_b.df, r.interaction.df, r.error_df), (2.0, 3.0, 6.0, 24.0));
    }

    #[test]
    fn empty_cell_is_named() {
        let cells = vec![vec![vec![1.0, 2.0], vec![]], vec![vec![1.0], vec![2.0, 3.0]]];
        assert_eq!(anova_two_way(&cells), Err(StatsError::EmptyCell(0, 1)));
    }

    #[test]
    fn report_formats() {
        let t = TTest { t: 3.94, df: 28.0, p: 0.0005, degenerate: false };
        assert_eq!(format_t(&t), "t(28)=3.94, p=0.0005");
        let e = Effect { ss: 0.0, df: 4.0, f: 3.14, p: 0.02 };
        assert_eq!(format_f(&e, 58.0), "F(4,58)=3.14, p=0.02");
        assert_eq!(format_p(0.022), "p=0.022");
        assert_eq!(format_p(0.00001), "p<0.0001");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn group() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-100.0f64..100.0, 2..12)
        }

        proptest! {
            #[test]
            fn t_is_shift_and_scale_invariant(a in group(), b in group(), shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
                let base = t_test_two_sample(&a, &b).unwrap();
                let moved = |g: &[f64]| g.iter().map(|v| v * scale + shift).collect::<Vec<_>>();
                let r = t_test_two_sample(&moved(&a), &moved(&b)).unwrap();
                prop_assume!(base.t.is_finite());
                prop_assert!((r.t - base.t).abs() <= 1e-7 * base.t.abs().max(1.0));
                prop_assert!((0.0..=1.0).contains(&r.p));
            }

            #[test]
            fn p_is_monotone_in_t(t1 in 0.0f64..20.0, dt in 0.001f64..5.0, df in 1.0f64..80.0) {
                prop_assert!(t_two_sided_p(t1 + dt, df) <= t_two_sided_p(t1, df));
            }

            #[test]
            fn p_is_monotone_in_f(f in 0.0f64..30.0, df_ in 0.001f64..5.0, d1 in 1.0f64..6.0, d2 in 2.0f64..80.0) {
                let (p0, p1) = (f_sf(f, d1, d2), f_sf(f + df_, d1, d2));
                prop_assert!(p1 <= p0 && (0.0..=1.0).contains(&p0));
            }

            #[test]
            fn balanced_anova_closes(vals in proptest::collection::vec(-50.0f64..50.0, 24)) {
                let cells: Vec<Vec<Vec<f64>>> = (0..2)
                    .map(|i| (0..3).map(|j| vals[(i * 3 + j) * 4..(i * 3 + j + 1) * 4].to_vec()).collect())
                    .collect();
                let r = anova_two_way(&cells).unwrap();
                let sum = r.factor_a.ss + r.factor_b.ss + r.interaction.ss + r.error_ss;
                prop_assert!((sum - r.total_ss).abs() <= 1e-10 * r.total_ss.max(1e-12));
            }
        }
    }
}
