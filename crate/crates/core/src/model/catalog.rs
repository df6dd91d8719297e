use std::collections::BTreeMap;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};

/// Named models shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    /// Constant coefficients: the classical log-normal Merton market.
    MertonConstant,
    /// One asset whose volatility is a logistic function of a mean-reverting factor.
    ScottBoundedVol,
    /// [`BuiltinModel::ScottBoundedVol`] plus a bounded dependence on the log-price.
    PriceDependentTest,
}

impl BuiltinModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            BuiltinModel::MertonConstant => "merton_constant",
            BuiltinModel::ScottBoundedVol => "scott_bounded_vol",
            BuiltinModel::PriceDependentTest => "price_dependent_test",
        }
    }

    pub fn all() -> [BuiltinModel; 3] {
        [
            BuiltinModel::MertonConstant,
            BuiltinModel::ScottBoundedVol,
            BuiltinModel::PriceDependentTest,
        ]
    }

    fn defaults(&self) -> &'static [(&'static str, f64)] {
        match self {
            BuiltinModel::MertonConstant => &[("sigma", 0.2), ("mu", 0.08), ("a", 0.5), ("T", 1.0)],
            BuiltinModel::ScottBoundedVol => &[
                ("mu", 0.05),
                ("vol_min", 0.1),
                ("vol_span", 0.3),
                ("rho", -0.5),
                ("kappa", 1.0),
                ("a", 0.5),
                ("T", 1.0),
                ("ou_drift", 0.0),
            ],
            BuiltinModel::PriceDependentTest => &[
                ("mu", 0.05),
                ("vol_min", 0.1),
                ("vol_span", 0.3),
                ("rho", -0.5),
                ("kappa", 1.0),
                ("a", 0.5),
                ("T", 1.0),
                ("coupling", 0.5),
            ],
        }
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinModel::all()
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidModel(format!("unknown builtin model '{s}'")))
    }
}

/// Switches that unlock catalog entries outside the checked envelope.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogOptions {
    /// Permits the linear (Ornstein-Uhlenbeck) factor drift, which violates
    /// the square-root growth bound on `μ₂`.
    pub unchecked: bool,
}

fn logistic(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

/// Instantiates a catalog model. Unknown or out-of-range parameters are rejected.
///
/// | model | parameters (defaults) |
/// |-------|------------------------|
/// | `merton_constant` | `sigma` 0.2, `mu` 0.08, `a` 0.5, `T` 1 |
/// | `scott_bounded_vol` | `mu` 0.05, `vol_min` 0.1, `vol_span` 0.3, `rho` -0.5, `kappa` 1, `a` 0.5, `T` 1, `ou_drift` 0 |
/// | `price_dependent_test` | as above without `ou_drift`, plus `coupling` 0.5 in `[0,1]` |
///
/// The stochastic-volatility entries use total volatility
/// `s(y) = vol_min + vol_span·logistic(y)` split as `σ₁ = √(1-ρ²)·s`,
/// `σ₂ = ρ·s`, so that `N = ρ²` and `M = s²`. The factor drift is
/// `-kappa·tanh(y)`, or `-kappa·y` when `ou_drift = 1` (requires
/// [`CatalogOptions::unchecked`]).
pub fn builtin_model(
    kind: BuiltinModel,
    params: &BTreeMap<String, f64>,
    options: CatalogOptions,
) -> Result<ModelSpec> {
    let defaults = kind.defaults();
    for key in params.keys() {
        if !defaults.iter().any(|(k, _)| k == key) {
            return Err(Error::InvalidModel(format!(
                "unknown parameter '{key}' for model {}",
                kind.as_str()
            )));
        }
    }
    let get = |key: &str| -> Result<f64> {
        let default = defaults.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap_or(f64::NAN);
        let v = params.get(key).copied().unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidModel(format!("parameter '{key}' must be finite")))
        }
    };
    let a = get("a")?;
    let horizon = get("T")?;

    match kind {
        BuiltinModel::MertonConstant => {
            let sigma = get("sigma")?;
            let mu = get("mu")?;
            if sigma <= 0.0 {
                return Err(Error::InvalidModel(format!("sigma must be positive, got {sigma}")));
            }
            ModelSpec::builder(kind.as_str(), 1, 1, 1)
                .horizon(horizon)
                .power(a)
                .time_homogeneous(true)
                .mu1_tilde(move |_, _| DVector::from_element(1, mu))
                .sigma1(move |_, _| DMatrix::from_element(1, 1, sigma))
                .sigma2(|_, _| DMatrix::zeros(1, 1))
                .mu2(|_, _| DVector::zeros(1))
                .build()
        }
        BuiltinModel::ScottBoundedVol | BuiltinModel::PriceDependentTest => {
            let mu = get("mu")?;
            let vol_min = get("vol_min")?;
            let vol_span = get("vol_span")?;
            let rho = get("rho")?;
            let kappa = get("kappa")?;
            if vol_min <= 0.0 || vol_span < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "need vol_min > 0 and vol_span >= 0, got {vol_min}, {vol_span}"
                )));
            }
            if rho.abs() >= 1.0 {
                return Err(Error::InvalidModel(format!("|rho| must be < 1, got {rho}")));
            }
            if kappa < 0.0 {
                return Err(Error::InvalidModel(format!("kappa must be >= 0, got {kappa}")));
            }
            let (coupling, linear_drift) = if kind == BuiltinModel::PriceDependentTest {
                let c = get("coupling")?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::InvalidModel(format!("coupling must lie in [0,1], got {c}")));
                }
                (c, false)
            } else {
                let flag = get("ou_drift")?;
                if flag != 0.0 && flag != 1.0 {
                    return Err(Error::InvalidModel(format!("ou_drift must be 0 or 1, got {flag}")));
                }
                if flag == 1.0 && !options.unchecked {
                    return Err(Error::InvalidModel(
                        "linear factor drift breaks the square-root growth bound; set unchecked".into(),
                    ));
                }
                (0.0, flag == 1.0)
            };
            let price_part = coupling != 0.0;
            let orth = (1.0 - rho * rho).sqrt();
            let vol = move |z: &[f64]| {
                let s = vol_min + vol_span * logistic(z[1]);
                if price_part {
                    s + coupling * 0.25 * vol_min * z[0].sin()
                } else {
                    s
                }
            };
            ModelSpec::builder(kind.as_str(), 1, 1, 1)
                .horizon(horizon)
                .power(a)
                .time_homogeneous(true)
                .mu1_tilde(move |_, z| {
                    let drift = if price_part { mu + coupling * 0.02 * z[0].cos() } else { mu };
                    DVector::from_element(1, drift)
                })
                .sigma1(move |_, z| DMatrix::from_element(1, 1, orth * vol(z)))
                .sigma2(move |_, z| DMatrix::from_element(1, 1, rho * vol(z)))
                .mu2(move |_, y| {
                    let drift = if linear_drift { -kappa * y[0] } else { -kappa * y[0].tanh() };
                    DVector::from_element(1, drift)
                })
                .build()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_conditions, ConditionBounds, DomainBox};

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn merton_defaults_pass_checks() {
        let model = builtin_model(
            BuiltinModel::MertonConstant,
            &params(&[("sigma", 0.2), ("mu", 0.08), ("a", 0.5), ("T", 1.0)]),
            CatalogOptions::default(),
        )
        .unwrap();
        let report = check_conditions(&model, &DomainBox::default_for(&model), 256, 3, &ConditionBounds::default());
        assert!(report.all_pass(), "{report:#?}");
    }

    #[test]
    fn every_builtin_passes_default_box() {
        for kind in BuiltinModel::all() {
            let model = builtin_model(kind, &BTreeMap::new(), CatalogOptions::default()).unwrap();
            let report = check_conditions(&model, &DomainBox::default_for(&model), 256, 11, &ConditionBounds::default());
            assert!(report.all_pass(), "{}: {report:#?}", kind.as_str());
        }
    }

    #[test]
    fn scott_n_equals_rho_squared() {
        let rho = -0.6;
        let model = builtin_model(BuiltinModel::ScottBoundedVol, &params(&[("rho", rho)]), CatalogOptions::default()).unwrap();
        for y in [-5.0, -1.0, 0.0, 0.7, 3.0] {
            let c = model.coefficients(0.0, &[0.0, y]).unwrap();
            assert!((c.n_mat[(0, 0)] - rho * rho).abs() < 1e-14);
            let s = 0.1 + 0.3 * logistic(y);
            assert!((c.m[(0, 0)] - s * s).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_coupling_matches_scott() {
        let scott = builtin_model(BuiltinModel::ScottBoundedVol, &BTreeMap::new(), CatalogOptions::default()).unwrap();
        let price = builtin_model(BuiltinModel::PriceDependentTest, &params(&[("coupling", 0.0)]), CatalogOptions::default()).unwrap();
        for (x, y) in [(0.3, -2.0), (-1.0, 0.5), (2.5, 4.0)] {
            let z = [x, y];
            assert_eq!(scott.mu1_tilde(0.2, &z), price.mu1_tilde(0.2, &z));
            assert_eq!(scott.sigma1(0.2, &z), price.sigma1(0.2, &z));
            assert_eq!(scott.sigma2(0.2, &z), price.sigma2(0.2, &z));
            assert_eq!(scott.mu2(0.2, &z), price.mu2(0.2, &z));
        }
    }

    #[test]
    fn rejects_out_of_range_params() {
        let opts = CatalogOptions::default();
        assert!(builtin_model(BuiltinModel::MertonConstant, &params(&[("sigma", -0.1)]), opts).is_err());
        assert!(builtin_model(BuiltinModel::MertonConstant, &params(&[("a", 0.0)]), opts).is_err());
        assert!(builtin_model(BuiltinModel::MertonConstant, &params(&[("bogus", 1.0)]), opts).is_err());
        assert!(builtin_model(BuiltinModel::ScottBoundedVol, &params(&[("rho", 1.0)]), opts).is_err());
        assert!(builtin_model(BuiltinModel::PriceDependentTest, &params(&[("coupling", 2.0)]), opts).is_err());
        assert!(builtin_model(BuiltinModel::ScottBoundedVol, &params(&[("ou_drift", 1.0)]), opts).is_err());
        assert!(builtin_model(
            BuiltinModel::ScottBoundedVol,
            &params(&[("ou_drift", 1.0)]),
            CatalogOptions { unchecked: true }
        )
        .is_ok());
    }

    #[test]
    fn names_round_trip() {
        for kind in BuiltinModel::all() {
            assert_eq!(kind.as_str().parse::<BuiltinModel>().unwrap(), kind);
        }
        assert!("heston".parse::<BuiltinModel>().is_err());
    }
}
