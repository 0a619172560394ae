//! Gini concentration of per-subspace patching effects.

use serde::{Deserialize, Serialize};

use crate::error::{NdmError, Result};

/// Coefficient above which an effect counts as concentrated.
pub const SATISFACTORY_GINI: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchingRecord {
    /// Effect of patching each subspace, averaged over examples.
    pub effects: Vec<f64>,
    pub dims: Vec<usize>,
    /// Sum of per-axis variances of each subspace.
    pub variances: Vec<f64>,
}

impl PatchingRecord {
    pub fn new(effects: Vec<f64>, dims: Vec<usize>, variances: Vec<f64>) -> Result<Self> {
        let rec = Self { effects, dims, variances };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.effects.len();
        for len in [self.dims.len(), self.variances.len()] {
            if len != s {
                return Err(NdmError::LengthMismatch { expected: s, actual: len });
            }
        }
        if self.dims.contains(&0) {
            return Err(NdmError::InvalidConfig("subspace dimensions must be positive".into()));
        }
        if self.effects.iter().chain(&self.variances).any(|v| !v.is_finite()) {
            return Err(NdmError::NonFinite("patching record"));
        }
        if let Some(&v) = self.variances.iter().find(|v| **v < 0.0) {
            return Err(NdmError::ValueOutOfRange { value: v, lo: 0.0, hi: f64::INFINITY });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gini {
    pub value: f64,
    /// Negative effects set to zero before computing `value`.
    pub clamped: usize,
}

/// `Σᵢⱼ |Δᵢ − Δⱼ| / (2 S ΣΔ)` after clamping negatives to zero.
pub fn gini(effects: &[f64]) -> Result<Gini> {
    if effects.iter().any(|v| !v.is_finite()) {
        return Err(NdmError::NonFinite("effects"));
    }
    let clamped = effects.iter().filter(|v| **v < 0.0).count();
    let mut x: Vec<f64> = effects.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        return Err(NdmError::NoEffect);
    }
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    // Σᵢⱼ |xᵢ − xⱼ| = 2 Σᵢ (2i − n + 1) x₍ᵢ₎ for ascending x
    let pairwise: f64 = x.iter().enumerate().map(|(i, v)| (2.0 * i as f64 - n + 1.0) * v).sum::<f64>() * 2.0;
    Ok(Gini { value: pairwise / (2.0 * n * total), clamped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GiniReport {
    pub raw: f64,
    pub per_dim: f64,
    pub per_var: f64,
    pub clamped: usize,
    /// Subspaces left out of `per_var` because their variance is zero.
    pub excluded_zero_variance: Vec<usize>,
}

impl GiniReport {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.clamped > 0 {
            out.push(format!("{} negative effect(s) clamped to zero", self.clamped));
        }
        if !self.excluded_zero_variance.is_empty() {
            out.push(format!("zero-variance subspaces {:?} left out of the variance column", self.excluded_zero_variance));
        }
        out
    }
}

/// Gini over `Δ_s`, `Δ_s / d_s` and `Δ_s / Var_s`.
pub fn gini_report(rec: &PatchingRecord) -> Result<GiniReport> {
    rec.validate()?;
    let raw = gini(&rec.effects)?;
    let per_dim: Vec<f64> = rec.effects.iter().zip(&rec.dims).map(|(e, d)| e / *d as f64).collect();
    let excluded: Vec<usize> = (0..rec.variances.len()).filter(|&s| rec.variances[s] == 0.0).collect();
    let per_var: Vec<f64> = rec
        .effects
        .iter()
        .zip(&rec.variances)
        .filter(|(_, v)| **v != 0.0)
        .map(|(e, v)| e / v)
        .collect();
    Ok(GiniReport {
        raw: raw.value,
        per_dim: gini(&per_dim)?.value,
        per_var: gini(&per_var)?.value,
        clamped: raw.clamped,
        excluded_zero_variance: excluded,
    })
}

/// One line of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub test: String,
    pub g_raw: f64,
    pub g_per_dim: f64,
    pub g_per_var: f64,
    pub satisfactory: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ReportRow {
    pub fn new(test: impl Into<String>, report: &GiniReport) -> Self {
        Self {
            test: test.into(),
            g_raw: report.raw,
            g_per_dim: report.per_dim,
            g_per_var: report.per_var,
            satisfactory: report.raw > SATISFACTORY_GINI,
            warnings: report.warnings(),
        }
    }
}

pub fn rows_to_jsonl(rows: &[ReportRow]) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(|e| NdmError::Parse(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Fixed-width table with a `*` marking raw coefficients above the threshold.
pub fn summary_table(rows: &[ReportRow]) -> String {
    let mut out = format!("{:<16} {:>8} {:>8} {:>8}\n", "test", "raw", "d_s", "Var_s");
    for row in rows {
        let mark = if row.satisfactory { "*" } else { " " };
        out.push_str(&format!(
            "{:<16} {:>7.3}{mark} {:>8.3} {:>8.3}\n",
            row.test, row.g_raw, row.g_per_dim, row.g_per_var
        ));
        for w in &row.warnings {
            out.push_str(&format!("  warning: {w}\n"));
        }
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let mean = |f: fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        out.push_str(&format!(
            "{:<16} {:>8.3} {:>8.3} {:>8.3}\n",
            "mean",
            mean(|r| r.g_raw),
            mean(|r| r.g_per_dim),
            mean(|r| r.g_per_var)
        ));
    }
    out.push_str(&format!("* raw coefficient above {SATISFACTORY_GINI}\n"));
    out
}
