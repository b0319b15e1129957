use crate::error::{Error, Result};
use crate::fem::AssembledForms;

/// Total positive and negative charges of a doping profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeTotals {
    /// Electron total `N = δ² + ∫C⁺`.
    pub n_total: f64,
    /// Hole total `P = δ² − ∫C⁻`.
    pub p_total: f64,
    /// Scaled intrinsic density δ².
    pub delta2: f64,
}

impl ChargeTotals {
    pub fn from_profile(forms: &AssembledForms, c: &[f64], delta2: f64) -> Result<Self> {
        forms.mesh.check(c)?;
        if !(delta2 > 0.0 && delta2.is_finite()) {
            return Err(Error::param(
                "delta2",
                format!("must be positive, got {delta2}"),
            ));
        }
        let (pos, neg) = split_integrals(forms, c);
        let totals = Self {
            n_total: delta2 + pos,
            p_total: delta2 + neg,
            delta2,
        };
        totals.validate()?;
        Ok(totals)
    }

    fn validate(&self) -> Result<()> {
        if !(self.n_total > 0.0 && self.p_total > 0.0)
            || !(self.n_total.is_finite() && self.p_total.is_finite())
        {
            return Err(Error::Inadmissible(format!(
                "totals must be positive and finite (N = {}, P = {})",
                self.n_total, self.p_total
            )));
        }
        Ok(())
    }
}

/// `(∫max(C,0), ∫max(−C,0))`
pub(crate) fn split_integrals(forms: &AssembledForms, c: &[f64]) -> (f64, f64) {
    forms
        .weights
        .iter()
        .zip(c)
        .fold((0.0, 0.0), |(pos, neg), (w, &v)| {
            (pos + w * v.max(0.0), neg + w * (-v).max(0.0))
        })
}

/// Doping profile `C` together with its reference `C_ref` and charge totals.
#[derive(Debug, Clone)]
pub struct DopingProfile {
    pub c: Vec<f64>,
    pub c_ref: Vec<f64>,
    pub totals: ChargeTotals,
}

impl DopingProfile {
    /// Profile with totals recomputed from `c`.
    pub fn new(forms: &AssembledForms, c: Vec<f64>, c_ref: Vec<f64>, delta2: f64) -> Result<Self> {
        forms.mesh.check(&c_ref)?;
        if c.iter().chain(&c_ref).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("doping profile"));
        }
        let totals = ChargeTotals::from_profile(forms, &c, delta2)?;
        Ok(Self { c, c_ref, totals })
    }

    /// The reference profile itself (`C = C_ref`).
    pub fn reference(forms: &AssembledForms, c_ref: Vec<f64>, delta2: f64) -> Result<Self> {
        Self::new(forms, c_ref.clone(), c_ref, delta2)
    }

    /// Profile whose totals are held fixed instead of being derived from `c`.
    ///
    /// Global neutrality `N − P = ∫C` and `P > ∫max(−C,0)` are required for the
    /// state equation to be solvable.
    pub fn with_totals(
        forms: &AssembledForms,
        c: Vec<f64>,
        c_ref: Vec<f64>,
        totals: ChargeTotals,
    ) -> Result<Self> {
        forms.mesh.check(&c)?;
        forms.mesh.check(&c_ref)?;
        if c.iter().chain(&c_ref).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("doping profile"));
        }
        totals.validate()?;
        let (pos, neg) = split_integrals(forms, &c);
        let defect = totals.n_total - totals.p_total - (pos - neg);
        if defect.abs() > 1e-10 * (totals.n_total + totals.p_total) {
            return Err(Error::Inadmissible(format!(
                "N − P differs from ∫C by {defect:.3e}"
            )));
        }
        if totals.p_total <= neg || totals.n_total <= pos {
            return Err(Error::Inadmissible(format!(
                "fixed totals N = {}, P = {} do not exceed the doping charges ({pos}, {neg})",
                totals.n_total, totals.p_total
            )));
        }
        Ok(Self { c, c_ref, totals })
    }

    /// `∫(C − C_ref) dx`
    pub fn control_mean_defect(&self, forms: &AssembledForms) -> f64 {
        forms
            .weights
            .iter()
            .zip(self.c.iter().zip(&self.c_ref))
            .map(|(w, (c, r))| w * (c - r))
            .sum()
    }

    /// `u = C − C_ref`
    pub fn control(&self) -> Vec<f64> {
        self.c.iter().zip(&self.c_ref).map(|(c, r)| c - r).collect()
    }
}
