//! Problem description shared by the config file and the command line.

use std::f64::consts::PI;

use hillgap_core::coefficients::{base_family, perturbation_profile, CoefficientModel, Component, FullLine, PerturbationTerm, PerturbedPair};

use crate::config::ProblemConfig;
use crate::{AppError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PertSpec {
    pub family: String,
    pub params: Vec<f64>,
    pub component: Component,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub base: String,
    pub params: Vec<f64>,
    pub a: f64,
    /// `None` picks the largest order whose moment is finite.
    pub moment_class: Option<u8>,
    pub perturbations: Vec<PertSpec>,
    pub full_line: bool,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            base: "mathieu".into(),
            params: vec![1.0],
            a: 0.0,
            moment_class: None,
            perturbations: Vec::new(),
            full_line: false,
        }
    }
}

/// Parameters used when a perturbation is named without any.
pub fn default_pert_params(family: &str) -> Option<Vec<f64>> {
    let p: &[f64] = match family.trim_end_matches("_pert") {
        "well" | "square_well" => &[-2.0, 2.0, 0.0],
        "exp_decay" => &[-3.0, 1.0],
        "gaussian" => &[1.0, 1.0],
        "power_decay" => &[-1.0, 4.0],
        _ => return None,
    };
    Some(p.to_vec())
}

fn default_base_params(base: &str) -> Vec<f64> {
    match base {
        "mathieu" => vec![1.0],
        "free" => vec![PI, 1.0],
        _ => Vec::new(),
    }
}

pub fn parse_component(s: &str) -> Result<Component> {
    match s {
        "q" => Ok(Component::Q),
        "inv_p" | "1/p" => Ok(Component::InvP),
        "r" => Ok(Component::R),
        other => Err(AppError::Usage(format!("unknown coefficient component `{other}` (expected q, inv_p or r)"))),
    }
}

/// Numbers with optional multiples of π: `pi`, `2pi`, `-pi/2`, `3*pi`, `1e-3`.
pub fn parse_number(s: &str) -> Result<f64> {
    let bad = || AppError::Usage(format!("cannot read `{s}` as a number"));
    let t = s.trim().to_ascii_lowercase();
    let (num, den) = match t.split_once('/') {
        Some((n, d)) => (n.to_string(), d.trim().parse::<f64>().map_err(|_| bad())?),
        None => (t.clone(), 1.0),
    };
    let num = num.trim();
    let value = if let Some(coef) = num.strip_suffix("pi") {
        let coef = coef.trim().trim_end_matches('*').trim();
        let c = match coef {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().map_err(|_| bad())?,
        };
        c * PI
    } else {
        num.parse::<f64>().map_err(|_| bad())?
    };
    let v = value / den;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_number).collect()
}

impl ProblemSpec {
    /// `base` or `base+pert` (for example `mathieu+well`).
    pub fn from_family(family: &str) -> Result<Self> {
        let mut parts = family.split('+');
        let base = parts.next().unwrap_or_default().trim().to_string();
        let mut spec = ProblemSpec { params: default_base_params(&base), base, ..Default::default() };
        for p in parts {
            spec.push_pert(p.trim(), None)?;
        }
        Ok(spec)
    }

    pub fn from_config(cfg: &ProblemConfig) -> Result<Self> {
        let mut spec = match &cfg.base {
            Some(b) => Self::from_family(b)?,
            None => Self::default(),
        };
        if let Some(p) = &cfg.params {
            spec.params = p.clone();
        }
        if let Some(a) = cfg.a {
            spec.a = a;
        }
        spec.moment_class = cfg.moment_class;
        spec.full_line = cfg.full_line.unwrap_or(false);
        for p in &cfg.perturbation {
            let params = if p.params.is_empty() { None } else { Some(p.params.clone()) };
            spec.push_pert(&p.family, params)?;
            if let Some(c) = &p.component {
                spec.perturbations.last_mut().unwrap().component = parse_component(c)?;
            }
        }
        Ok(spec)
    }

    pub fn push_pert(&mut self, family: &str, params: Option<Vec<f64>>) -> Result<()> {
        let params = match params {
            Some(p) => p,
            None => default_pert_params(family)
                .ok_or_else(|| AppError::Core(hillgap_core::Error::UnknownFamily(family.to_string())))?,
        };
        self.perturbations.push(PertSpec { family: family.to_string(), params, component: Component::Q });
        Ok(())
    }

    /// Replace the parameters of the last perturbation.
    pub fn set_pert_params(&mut self, params: Vec<f64>) -> Result<()> {
        match self.perturbations.last_mut() {
            Some(p) => {
                p.params = params;
                Ok(())
            }
            None => Err(AppError::Usage("perturbation parameters given without a perturbation".into())),
        }
    }

    pub fn base_model(&self) -> Result<CoefficientModel> {
        Ok(CoefficientModel::periodic(base_family(&self.base, &self.params)?, self.a)?)
    }

    fn terms(&self) -> Result<Vec<PerturbationTerm>> {
        self.perturbations
            .iter()
            .map(|p| Ok(PerturbationTerm::new(p.component, perturbation_profile(&p.family, &p.params)?)))
            .collect()
    }

    pub fn pair(&self) -> Result<PerturbedPair> {
        let base = self.base_model()?;
        let terms = self.terms()?;
        match self.moment_class {
            Some(k) => Ok(PerturbedPair::new(base, terms, k)?),
            None => {
                let mut last = None;
                for k in [2u8, 1, 0] {
                    match PerturbedPair::new(base.clone(), terms.clone(), k) {
                        Ok(p) => return Ok(p),
                        Err(e @ hillgap_core::Error::MomentDivergent { .. }) => last = Some(e),
                        Err(e) => return Err(e.into()),
                    }
                }
                Err(last.expect("three attempts").into())
            }
        }
    }

    pub fn full(&self) -> Result<FullLine> {
        Ok(FullLine::from_pair(&self.pair()?)?)
    }

    /// With every perturbation amplitude scaled by `s`.
    pub fn scaled(&self, s: f64) -> ProblemSpec {
        let mut out = self.clone();
        for p in &mut out.perturbations {
            if let Some(first) = p.params.first_mut() {
                *first *= s;
            }
        }
        out
    }

    pub fn label(&self) -> String {
        let mut s = format!("{}{:?}", self.base, self.params);
        for p in &self.perturbations {
            s.push_str(&format!("+{}{:?}", p.family, p.params));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_with_pi() {
        assert_eq!(parse_number("pi").unwrap(), PI);
        assert_eq!(parse_number("2pi").unwrap(), 2.0 * PI);
        assert_eq!(parse_number("-pi/2").unwrap(), -PI / 2.0);
        assert_eq!(parse_number("3*pi").unwrap(), 3.0 * PI);
        assert_eq!(parse_number("-1e-3").unwrap(), -1e-3);
        assert!(parse_number("tau").is_err());
        assert_eq!(parse_list("1, pi,2").unwrap(), vec![1.0, PI, 2.0]);
    }

    #[test]
    fn shorthand_family() {
        let s = ProblemSpec::from_family("mathieu+well").unwrap();
        assert_eq!(s.base, "mathieu");
        assert_eq!(s.perturbations[0].params, vec![-2.0, 2.0, 0.0]);
        let pair = s.pair().unwrap();
        assert_eq!(pair.moment_class(), 2);
        assert!(ProblemSpec::from_family("mathieu+bump").is_err());
    }

    #[test]
    fn moment_class_falls_back() {
        // decay of order 2.5: first moment finite, second infinite
        let mut s = ProblemSpec::from_family("mathieu").unwrap();
        s.push_pert("power_decay", Some(vec![-1.0, 2.5])).unwrap();
        assert_eq!(s.pair().unwrap().moment_class(), 1);
    }
}
