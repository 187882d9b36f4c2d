//! Least-squares main effects, pairwise interactions and template ranking.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::design::{DesignError, FactorSet, Setup, SetupId};
use crate::metrics::serialize_real;
use crate::sampler::TargetTemplates;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("design is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("{n_obs} observations cannot support {params} parameters")]
    TooFewObservations { n_obs: usize, params: usize },
    #[error("design row {row} has {found} columns, expected {expected}")]
    RaggedDesign {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{0} rows in the design but {1} responses")]
    LengthMismatch(usize, usize),
    #[error("factor {0} is observed at one level only")]
    SingleLevel(String),
    #[error("template ranking needs at least 4 templates, got {0}")]
    TooFewTemplates(usize),
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    /// Intercept first, in design column order.
    pub coefficients: Vec<f64>,
    pub stderr: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n_obs: usize,
    pub dof: usize,
}

/// Two-sided p-value of a Student-t statistic.
pub fn t_two_sided_p(t: f64, dof: usize) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let v = dof as f64;
    beta_reg(v / 2.0, 0.5, v / (v + t * t)).clamp(0.0, 1.0)
}

/// OLS on design rows that already contain the intercept column.
pub fn fit_ols(x: &[Vec<f64>], y: &[f64]) -> Result<RegressionFit, StatsError> {
    let k = x.first().map_or(0, Vec::len);
    let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
    fit_ols_named(x, y, &names)
}

/// [`fit_ols`] with column names used in rank-deficiency errors.
pub fn fit_ols_named(x: &[Vec<f64>], y: &[f64], names: &[String]) -> Result<RegressionFit, StatsError> {
    let n = x.len();
    if n != y.len() {
        return Err(StatsError::LengthMismatch(n, y.len()));
    }
    let k = names.len();
    for (row, r) in x.iter().enumerate() {
        if r.len() != k {
            return Err(StatsError::RaggedDesign {
                row,
                expected: k,
                found: r.len(),
            });
        }
    }
    if n <= k {
        return Err(StatsError::TooFewObservations { n_obs: n, params: k });
    }

    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (r, &yi) in x.iter().zip(y) {
        for a in 0..k {
            xty[a] += r[a] * yi;
            for b in 0..k {
                xtx[a][b] += r[a] * r[b];
            }
        }
    }
    let inverse = invert(&xtx).map_err(|cols| {
        StatsError::RankDeficient(cols.into_iter().map(|j| names[j].clone()).collect())
    })?;
    let beta: Vec<f64> = inverse
        .iter()
        .map(|row| row.iter().zip(&xty).map(|(a, b)| a * b).sum())
        .collect();

    let dof = n - k;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &yi)| {
            let fitted: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (yi - fitted).powi(2)
        })
        .sum();
    let sigma2 = rss / dof as f64;
    let stderr: Vec<f64> = (0..k).map(|j| (sigma2 * inverse[j][j]).max(0.0).sqrt()).collect();
    let t_stats: Vec<f64> = beta
        .iter()
        .zip(&stderr)
        .map(|(&b, &se)| match (b == 0.0, se == 0.0) {
            (true, true) => 0.0,
            (false, true) => b.signum() * f64::INFINITY,
            _ => b / se,
        })
        .collect();
    let p_values = t_stats.iter().map(|&t| t_two_sided_p(t, dof)).collect();
    Ok(RegressionFit {
        coefficients: beta,
        stderr,
        t_stats,
        p_values,
        n_obs: n,
        dof,
    })
}

/// Gauss-Jordan inversion with partial pivoting. On singularity returns the
/// offending column together with the earlier columns it is a combination of.
fn invert(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, Vec<usize>> {
    let k = a.len();
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..k).map(|j| f64::from(u8::from(i == j))));
            r
        })
        .collect();
    for col in 0..k {
        let best = (col..k)
            .max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs()))
            .expect("non-empty range");
        if m[best][col].abs() <= tol {
            // Rows above `col` hold pivots of earlier columns; their entries in
            // this column are the coefficients of the linear dependency.
            let mut cols: Vec<usize> = (0..col).filter(|&c| m[c][col].abs() > 1e-8).collect();
            cols.push(col);
            return Err(cols);
        }
        m.swap(col, best);
        let pivot = m[col][col];
        for v in m[col].iter_mut() {
            *v /= pivot;
        }
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            let f = row[col];
            if r != col && f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    Ok(m.into_iter().map(|r| r[k..].to_vec()).collect())
}

fn decoded(
    acc_by_setup: &BTreeMap<SetupId, f64>,
    factors: &FactorSet,
) -> Result<Vec<(Setup, f64)>, StatsError> {
    acc_by_setup
        .iter()
        .map(|(id, &acc)| Ok((factors.decode(id)?, acc)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MainEffect {
    pub factor: String,
    pub beta1: f64,
    pub beta0: f64,
    pub stderr: f64,
    #[serde(serialize_with = "serialize_real")]
    pub p: f64,
    pub n_obs: usize,
}

/// Regresses setup accuracy on the factor's 0/1 indicator. Setups where the
/// factor is irrelevant are left out.
pub fn main_effect(
    acc_by_setup: &BTreeMap<SetupId, f64>,
    factors: &FactorSet,
    factor: &str,
) -> Result<MainEffect, StatsError> {
    if factors.position(factor).is_none() {
        return Err(DesignError::UnknownFactor(factor.to_string()).into());
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (setup, acc) in decoded(acc_by_setup, factors)? {
        if let Some(ind) = factors.level(&setup, factor).indicator() {
            x.push(vec![1.0, ind]);
            y.push(acc);
        }
    }
    let levels = x.iter().filter(|r| r[1] == 1.0).count();
    if levels == 0 || levels == x.len() {
        return Err(StatsError::SingleLevel(factor.to_string()));
    }
    let names = ["intercept".to_string(), factor.to_string()];
    let fit = fit_ols_named(&x, &y, &names)?;
    Ok(MainEffect {
        factor: factor.to_string(),
        beta0: fit.coefficients[0],
        beta1: fit.coefficients[1],
        stderr: fit.stderr[1],
        p: fit.p_values[1],
        n_obs: fit.n_obs,
    })
}

/// Main effects of every factor observed at both levels, in position order.
pub fn main_effects(
    acc_by_setup: &BTreeMap<SetupId, f64>,
    factors: &FactorSet,
) -> Result<Vec<MainEffect>, StatsError> {
    let mut out = Vec::new();
    for name in factors.names() {
        match main_effect(acc_by_setup, factors, name) {
            Ok(effect) => out.push(effect),
            Err(StatsError::SingleLevel(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionEntry {
    pub factor_i: String,
    pub factor_j: String,
    pub estimable: bool,
    pub beta_ij: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    pub n_obs: usize,
}

/// OLS with regressors `[1, λi, λj, λi·λj]` over setups where both factors
/// apply. Fewer than four observed level combinations, or too few
/// observations to leave a residual degree of freedom, is not estimable.
pub fn interaction_effect(
    acc_by_setup: &BTreeMap<SetupId, f64>,
    factors: &FactorSet,
    factor_i: &str,
    factor_j: &str,
    alpha: f64,
) -> Result<InteractionEntry, StatsError> {
    for f in [factor_i, factor_j] {
        if factors.position(f).is_none() {
            return Err(DesignError::UnknownFactor(f.to_string()).into());
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut combos = [false; 4];
    for (setup, acc) in decoded(acc_by_setup, factors)? {
        let (Some(a), Some(b)) = (
            factors.level(&setup, factor_i).indicator(),
            factors.level(&setup, factor_j).indicator(),
        ) else {
            continue;
        };
        combos[usize::from(a == 1.0) * 2 + usize::from(b == 1.0)] = true;
        x.push(vec![1.0, a, b, a * b]);
        y.push(acc);
    }
    let not_estimable = |n_obs| InteractionEntry {
        factor_i: factor_i.to_string(),
        factor_j: factor_j.to_string(),
        estimable: false,
        beta_ij: None,
        p: None,
        significant: false,
        n_obs,
    };
    if combos.iter().any(|c| !c) || x.len() <= 4 {
        return Ok(not_estimable(x.len()));
    }
    let names = [
        "intercept".to_string(),
        factor_i.to_string(),
        factor_j.to_string(),
        format!("{factor_i}*{factor_j}"),
    ];
    match fit_ols_named(&x, &y, &names) {
        Ok(fit) => {
            let p = fit.p_values[3];
            Ok(InteractionEntry {
                factor_i: factor_i.to_string(),
                factor_j: factor_j.to_string(),
                estimable: true,
                beta_ij: Some(fit.coefficients[3]),
                p: Some(p),
                significant: p < alpha,
                n_obs: fit.n_obs,
            })
        }
        Err(StatsError::RankDeficient(_)) => Ok(not_estimable(x.len())),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionReport {
    pub alpha: f64,
    /// Threshold actually applied; `alpha / pairs` under Bonferroni.
    pub threshold: f64,
    pub bonferroni: bool,
    pub per_pair: Vec<InteractionEntry>,
}

/// Interaction fits for every unordered pair of factors in position order.
pub fn interaction_report(
    acc_by_setup: &BTreeMap<SetupId, f64>,
    factors: &FactorSet,
    alpha: f64,
    bonferroni: bool,
) -> Result<InteractionReport, StatsError> {
    let names = factors.names();
    let tests = names.len() * names.len().saturating_sub(1) / 2;
    let threshold = if bonferroni && tests > 0 {
        alpha / tests as f64
    } else {
        alpha
    };
    let mut per_pair = Vec::with_capacity(tests);
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            per_pair.push(interaction_effect(acc_by_setup, factors, a, b, threshold)?);
        }
    }
    Ok(InteractionReport {
        alpha,
        threshold,
        bonferroni,
        per_pair,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateScore {
    pub template_id: u32,
    pub name: String,
    pub accuracy: f64,
    #[serde(serialize_with = "serialize_real")]
    pub c_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateRanking {
    /// Best first.
    pub ranking: Vec<TemplateScore>,
    pub high: [u32; 2],
    pub low: [u32; 2],
    /// Whether the selection reproduces the built-in high/low target templates.
    pub matches_default: bool,
}

fn rank_order(a: &TemplateScore, b: &TemplateScore) -> Ordering {
    // NaN c_λ sorts after every defined value.
    let c = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    b.accuracy
        .total_cmp(&a.accuracy)
        .then_with(|| c(b.c_lambda).total_cmp(&c(a.c_lambda)))
        .then_with(|| a.template_id.cmp(&b.template_id))
}

/// Orders templates by accuracy, then consistency; the top two form the
/// high-performing pair and the bottom two the low-performing pair.
pub fn rank_templates(scores: &[TemplateScore]) -> Result<TemplateRanking, StatsError> {
    if scores.len() < 4 {
        return Err(StatsError::TooFewTemplates(scores.len()));
    }
    let mut ranking = scores.to_vec();
    ranking.sort_by(rank_order);
    let n = ranking.len();
    let high = [ranking[0].template_id, ranking[1].template_id];
    let low = [ranking[n - 1].template_id, ranking[n - 2].template_id];
    let default = TargetTemplates::default();
    let same = |a: [u32; 2], b: [u32; 2]| {
        let (mut a, mut b) = (a, b);
        a.sort_unstable();
        b.sort_unstable();
        a == b
    };
    Ok(TemplateRanking {
        matches_default: same(high, default.high) && same(low, default.low),
        ranking,
        high,
        low,
    })
}
