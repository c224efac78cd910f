//! Coefficient models for the periodic base problem and its perturbations.
//!
//! A [`CoefficientModel`] evaluates the triple `(1/p, q, r)`. It consists of a
//! periodic [`BaseFamily`] plus zero or more [`PerturbationTerm`]s, each of
//! which adds a decaying profile to one coefficient. A model without terms is
//! periodic; a model with terms is not.
//!
//! Piecewise-defined coefficients declare their breakpoints so the integrator
//! can stop on them. At a breakpoint, evaluation returns the right limit.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::format;

use crate::error::{Error, Result};
use crate::math::{abs, cos, erfc, exp, pow, sqrt, PI};
use crate::quadrature;

/// Values of `(1/p, q, r)` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triple {
    pub inv_p: f64,
    pub q: f64,
    pub r: f64,
}

impl Triple {
    pub fn new(inv_p: f64, q: f64, r: f64) -> Self {
        Triple { inv_p, q, r }
    }

    /// Sum of absolute values, the integrand of the moment condition.
    pub fn l1(&self) -> f64 {
        abs(self.inv_p) + abs(self.q) + abs(self.r)
    }
}

/// Which coefficient a perturbation term acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    InvP,
    Q,
    R,
}

/// Smoothness metadata of a model on an interval.
#[derive(Clone, Debug, PartialEq)]
pub enum Smoothness {
    Smooth,
    PiecewiseWithBreakpoints(Vec<f64>),
}

/// Periodic coefficient families.
#[derive(Clone, Debug, PartialEq)]
pub enum BaseFamily {
    /// `p = 1`, `q = 0`, `r = weight`.
    Free { omega: f64, weight: f64 },
    /// `p = 1`, `q = q0`, `r = weight`.
    ConstShift { q0: f64, omega: f64, weight: f64 },
    /// `p = r = 1`, `q(x) = 2γ cos(2x)`, period π.
    Mathieu { gamma: f64 },
    /// Two piecewise-constant layers per period: the first occupies
    /// `[0, split·ω)` of each cell, measured from `x = 0`.
    Layered { omega: f64, split: f64, inv_p: [f64; 2], q: [f64; 2], r: [f64; 2] },
}

impl BaseFamily {
    pub fn period(&self) -> f64 {
        match *self {
            BaseFamily::Free { omega, .. } => omega,
            BaseFamily::ConstShift { omega, .. } => omega,
            BaseFamily::Mathieu { .. } => PI,
            BaseFamily::Layered { omega, .. } => omega,
        }
    }

    fn eval(&self, x: f64) -> Triple {
        match *self {
            BaseFamily::Free { weight, .. } => Triple::new(1.0, 0.0, weight),
            BaseFamily::ConstShift { q0, weight, .. } => Triple::new(1.0, q0, weight),
            BaseFamily::Mathieu { gamma } => Triple::new(1.0, 2.0 * gamma * cos(2.0 * x), 1.0),
            BaseFamily::Layered { omega, split, inv_p, q, r } => {
                let cell = libm::floor(x / omega);
                let s = x - cell * omega;
                let i = if s < split * omega { 0 } else { 1 };
                Triple::new(inv_p[i], q[i], r[i])
            }
        }
    }

    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        if let BaseFamily::Layered { omega, split, .. } = *self {
            let first = libm::floor(lo / omega) as i64;
            let last = libm::ceil(hi / omega) as i64;
            for n in first..=last {
                let base = n as f64 * omega;
                for x in [base, base + split * omega] {
                    if x > lo && x < hi {
                        out.push(x);
                    }
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            BaseFamily::Free { omega, weight } => {
                positive("omega", omega)?;
                positive("weight", weight)
            }
            BaseFamily::ConstShift { q0, omega, weight } => {
                if !q0.is_finite() {
                    return Err(Error::InvalidParameter("q0 must be finite".to_string()));
                }
                positive("omega", omega)?;
                positive("weight", weight)
            }
            BaseFamily::Mathieu { gamma } => {
                if gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("gamma must be finite".to_string()))
                }
            }
            BaseFamily::Layered { omega, split, inv_p, q, r } => {
                positive("omega", omega)?;
                if !(split > 0.0 && split < 1.0) {
                    return Err(Error::InvalidParameter(format!("split must lie in (0, 1), got {split}")));
                }
                for v in inv_p {
                    positive("inv_p", v)?;
                }
                for v in r {
                    positive("weight", v)?;
                }
                if q.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("q must be finite".to_string()));
                }
                Ok(())
            }
        }
    }
}

/// Decaying profile added to one coefficient.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    /// `depth` on `[start, start + width)`, zero elsewhere.
    SquareWell { depth: f64, start: f64, width: f64 },
    /// `amplitude · exp(-rate·|x|)`.
    ExpDecay { amplitude: f64, rate: f64 },
    /// `amplitude · (1 + |x|)^(-exponent)`.
    PowerDecay { amplitude: f64, exponent: f64 },
    /// `amplitude · exp(-(x/width)²)`.
    Gaussian { amplitude: f64, width: f64 },
}

/// Upper bound on `∫_X^∞ |f(t)| |t|^k dt` for a profile or a sum of them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tail {
    Bound(f64),
    Divergent,
    Unknown,
}

impl Tail {
    fn add(self, other: Tail) -> Tail {
        match (self, other) {
            (Tail::Divergent, _) | (_, Tail::Divergent) => Tail::Divergent,
            (Tail::Unknown, _) | (_, Tail::Unknown) => Tail::Unknown,
            (Tail::Bound(a), Tail::Bound(b)) => Tail::Bound(a + b),
        }
    }

    pub fn bound(self) -> Option<f64> {
        match self {
            Tail::Bound(b) => Some(b),
            _ => None,
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Profile::SquareWell { depth, start, width } => {
                if x >= start && x < start + width {
                    depth
                } else {
                    0.0
                }
            }
            Profile::ExpDecay { amplitude, rate } => amplitude * exp(-rate * abs(x)),
            Profile::PowerDecay { amplitude, exponent } => amplitude * pow(1.0 + abs(x), -exponent),
            Profile::Gaussian { amplitude, width } => {
                let s = x / width;
                amplitude * exp(-s * s)
            }
        }
    }

    /// Points where the profile jumps or has a kink.
    fn breakpoints(&self) -> [Option<f64>; 2] {
        match *self {
            Profile::SquareWell { start, width, .. } => [Some(start), Some(start + width)],
            Profile::ExpDecay { .. } | Profile::PowerDecay { .. } => [Some(0.0), None],
            Profile::Gaussian { .. } => [None, None],
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match *self {
            Profile::SquareWell { depth, start, width } => {
                if !(width > 0.0) || !depth.is_finite() || !start.is_finite() {
                    return bad(format!("square well needs finite depth/start and width > 0, got width {width}"));
                }
            }
            Profile::ExpDecay { amplitude, rate } => {
                if !(rate > 0.0) || !amplitude.is_finite() {
                    return bad(format!("exponential decay needs rate > 0, got {rate}"));
                }
            }
            Profile::PowerDecay { amplitude, exponent } => {
                if !(exponent > 0.0) || !amplitude.is_finite() {
                    return bad(format!("power decay needs exponent > 0, got {exponent}"));
                }
            }
            Profile::Gaussian { amplitude, width } => {
                if !(width > 0.0) || !amplitude.is_finite() {
                    return bad(format!("gaussian needs width > 0, got {width}"));
                }
            }
        }
        Ok(())
    }

    /// `G_k(T) = ∫_T^∞ |g(s)| s^k ds` for the symmetric profiles, `T ≥ 0`.
    fn symmetric_tail(&self, k: u32, t: f64) -> Tail {
        debug_assert!(t >= 0.0);
        match *self {
            Profile::ExpDecay { amplitude, rate } => {
                // ∫_T^∞ s^k e^{-βs} ds = e^{-βT} Σ_j k!/j! T^j / β^{k-j+1}
                let mut sum = 0.0;
                let mut fact_ratio = 1.0; // k!/j! for j = k downwards
                for j in (0..=k).rev() {
                    sum += fact_ratio * crate::math::powi(t, j as i32) / crate::math::powi(rate, (k - j + 1) as i32);
                    fact_ratio *= j as f64;
                }
                Tail::Bound(abs(amplitude) * exp(-rate * t) * sum)
            }
            Profile::PowerDecay { amplitude, exponent } => {
                // s^k ≤ (1+s)^k
                let e = exponent - k as f64 - 1.0;
                if e <= 0.0 {
                    Tail::Divergent
                } else {
                    Tail::Bound(abs(amplitude) * pow(1.0 + t, -e) / e)
                }
            }
            Profile::Gaussian { amplitude, width } => {
                let z = t / width;
                let g = exp(-z * z);
                let ec = erfc(z);
                let sp = sqrt(PI);
                let v = match k {
                    0 => width * sp / 2.0 * ec,
                    1 => width * width / 2.0 * g,
                    2 => width * width / 2.0 * t * g + width * width * width * sp / 4.0 * ec,
                    _ => return Tail::Unknown,
                };
                Tail::Bound(abs(amplitude) * v)
            }
            Profile::SquareWell { .. } => Tail::Unknown,
        }
    }

    /// Bound on `∫_X^∞ |f(σ(y))| |y|^k dy` where `σ(y) = y` or, when
    /// mirrored about `m`, `σ(y) = 2m - y`.
    fn tail(&self, k: u32, x: f64, mirror: Option<f64>) -> Tail {
        if let Profile::SquareWell { depth, start, width } = *self {
            let (lo, hi) = match mirror {
                None => (start, start + width),
                Some(m) => (2.0 * m - start - width, 2.0 * m - start),
            };
            let lo = lo.max(x);
            if hi <= lo {
                return Tail::Bound(0.0);
            }
            let moment = |a: f64, b: f64| {
                // ∫_a^b |y|^k dy
                let prim = |y: f64| {
                    let v = crate::math::powi(abs(y), k as i32 + 1) / (k as f64 + 1.0);
                    if y < 0.0 { -v } else { v }
                };
                prim(b) - prim(a)
            };
            return Tail::Bound(abs(depth) * moment(lo, hi));
        }
        let shift = match mirror {
            None => 0.0,
            Some(m) => 2.0 * m,
        };
        // With s = y - shift: |y|^k ≤ (|s| + |shift|)^k, expanded binomially.
        let t = x - shift;
        if t < 0.0 {
            return Tail::Unknown;
        }
        if shift == 0.0 {
            return self.symmetric_tail(k, t);
        }
        let mut acc = Tail::Bound(0.0);
        for j in 0..=k {
            let c = binomial(k, j) * crate::math::powi(abs(shift), (k - j) as i32);
            acc = acc.add(match self.symmetric_tail(j, t) {
                Tail::Bound(b) => Tail::Bound(c * b),
                other => other,
            });
        }
        acc
    }
}

/// A profile attached to one coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationTerm {
    pub component: Component,
    pub profile: Profile,
}

impl PerturbationTerm {
    pub fn new(component: Component, profile: Profile) -> Self {
        PerturbationTerm { component, profile }
    }

    pub fn q(profile: Profile) -> Self {
        Self::new(Component::Q, profile)
    }
}

/// Evaluable coefficient triple on `[a, ∞)` (or the full line).
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientModel {
    base: BaseFamily,
    terms: Vec<PerturbationTerm>,
    domain_start: f64,
    mirror: Option<f64>,
}

/// Interface the propagator needs from a coefficient model.
pub trait Coefficients {
    fn eval(&self, x: f64) -> Triple;
    /// Sorted breakpoints strictly inside `(lo, hi)`.
    fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64>;
}

// Positivity is checked on this window past `a` for perturbed models.
const VALIDATION_SPAN: f64 = 200.0;
const VALIDATION_STEP: f64 = 0.05;

impl CoefficientModel {
    /// Periodic model from a base family, starting at `a`.
    pub fn periodic(base: BaseFamily, domain_start: f64) -> Result<Self> {
        base.validate()?;
        if !domain_start.is_finite() {
            return Err(Error::InvalidParameter("domain start must be finite".to_string()));
        }
        Ok(CoefficientModel { base, terms: Vec::new(), domain_start, mirror: None })
    }

    /// Same base with additional perturbation terms.
    pub fn with_terms(&self, terms: Vec<PerturbationTerm>) -> Result<Self> {
        for t in &terms {
            t.profile.validate()?;
        }
        let mut all = self.terms.clone();
        all.extend(terms);
        let model = CoefficientModel { terms: all, ..self.clone() };
        model.check_positive()?;
        Ok(model)
    }

    fn check_positive(&self) -> Result<()> {
        if self.terms.iter().all(|t| t.component == Component::Q) {
            return Ok(());
        }
        let a = self.domain_start;
        let mut xs: Vec<f64> = Vec::new();
        let n = (VALIDATION_SPAN / VALIDATION_STEP) as usize;
        for i in 0..=n {
            let s = i as f64 * VALIDATION_STEP;
            xs.push(a + s);
            xs.push(a - s);
        }
        xs.extend(self.breakpoints(a - VALIDATION_SPAN, a + VALIDATION_SPAN));
        for x in xs {
            let t = self.eval(x);
            if !(t.r > 0.0) {
                return Err(Error::NonPositiveCoefficient { name: "r", x, value: t.r });
            }
            if !(t.inv_p > 0.0) {
                return Err(Error::NonPositiveCoefficient { name: "inv_p", x, value: t.inv_p });
            }
        }
        Ok(())
    }

    pub fn base_family(&self) -> &BaseFamily {
        &self.base
    }

    pub fn terms(&self) -> &[PerturbationTerm] {
        &self.terms
    }

    pub fn domain_start(&self) -> f64 {
        self.domain_start
    }

    pub fn mirror(&self) -> Option<f64> {
        self.mirror
    }

    /// Period `ω` if the model is periodic.
    pub fn period(&self) -> Option<f64> {
        if self.terms.is_empty() {
            Some(self.base.period())
        } else {
            None
        }
    }

    /// Period of the underlying base family, perturbed or not.
    pub fn base_period(&self) -> f64 {
        self.base.period()
    }

    /// The unperturbed model.
    pub fn base_model(&self) -> CoefficientModel {
        CoefficientModel { terms: Vec::new(), ..self.clone() }
    }

    /// The model seen through `x ↦ 2a - x`, so that the half-line
    /// `(-∞, a]` becomes `[a, ∞)`. Right-continuity becomes left-continuity
    /// in the reflected coordinate.
    pub fn reflected(&self) -> CoefficientModel {
        let mirror = match self.mirror {
            Some(_) => None,
            None => Some(self.domain_start),
        };
        CoefficientModel { mirror, ..self.clone() }
    }

    fn source_point(&self, x: f64) -> f64 {
        match self.mirror {
            Some(m) => 2.0 * m - x,
            None => x,
        }
    }

    pub fn smoothness(&self, lo: f64, hi: f64) -> Smoothness {
        let bps = self.breakpoints(lo, hi);
        if bps.is_empty() {
            Smoothness::Smooth
        } else {
            Smoothness::PiecewiseWithBreakpoints(bps)
        }
    }

    /// Upper bound on `∫_X^∞ |f_1 - f_0| |y|^k dy` summed over components,
    /// from the analytic tails of the perturbation profiles.
    pub fn perturbation_tail(&self, k: u32, x: f64) -> Tail {
        self.terms
            .iter()
            .fold(Tail::Bound(0.0), |acc, t| acc.add(t.profile.tail(k, x, self.mirror)))
    }

    /// Largest breakpoint of the perturbation in the evaluation coordinate.
    pub fn perturbation_support_end(&self) -> Option<f64> {
        let mut end: Option<f64> = None;
        for t in &self.terms {
            if let Profile::SquareWell { start, width, .. } = t.profile {
                let hi = match self.mirror {
                    None => start + width,
                    Some(m) => 2.0 * m - start,
                };
                end = Some(end.map_or(hi, |e: f64| e.max(hi)));
            }
        }
        end
    }

    fn all_compact(&self) -> bool {
        self.terms.iter().all(|t| matches!(t.profile, Profile::SquareWell { .. }))
    }
}

impl CoefficientModel {
    /// Sum of the perturbation terms alone at `x`.
    fn term_sum(&self, x: f64) -> Triple {
        self.add_terms(self.source_point(x), Triple::new(0.0, 0.0, 0.0))
    }

    fn add_terms(&self, y: f64, mut t: Triple) -> Triple {
        for term in &self.terms {
            let v = term.profile.eval(y);
            match term.component {
                Component::InvP => t.inv_p += v,
                Component::Q => t.q += v,
                Component::R => t.r += v,
            }
        }
        t
    }
}

impl Coefficients for CoefficientModel {
    fn eval(&self, x: f64) -> Triple {
        let y = self.source_point(x);
        self.add_terms(y, self.base.eval(y))
    }

    fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        let (slo, shi) = match self.mirror {
            Some(m) => (2.0 * m - hi, 2.0 * m - lo),
            None => (lo, hi),
        };
        let mut raw = Vec::new();
        self.base.breakpoints(slo, shi, &mut raw);
        for t in &self.terms {
            for b in t.profile.breakpoints().into_iter().flatten() {
                if b > slo && b < shi {
                    raw.push(b);
                }
            }
        }
        let mut out: Vec<f64> = raw.into_iter().map(|b| self.source_point(b)).collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| abs(*a - *b) <= 1e-14 * (1.0 + abs(*b)));
        out
    }
}

/// Names accepted by [`make_builtin`].
pub const BUILTIN_NAMES: [&str; 8] = [
    "free",
    "const_shift",
    "mathieu",
    "layered",
    "square_well_pert",
    "exp_decay_pert",
    "power_decay_pert",
    "gaussian_pert",
];

fn param(params: &[f64], i: usize, default: Option<f64>, name: &str, family: &str) -> Result<f64> {
    match params.get(i) {
        Some(v) => Ok(*v),
        None => default.ok_or_else(|| Error::InvalidParameter(format!("{family}: missing parameter `{name}`"))),
    }
}

/// Build a base family from its name and positional parameters.
///
/// | name          | parameters                                        |
/// |---------------|---------------------------------------------------|
/// | `free`        | `omega = π`, `weight = 1`                          |
/// | `const_shift` | `q0`, `omega = π`, `weight = 1`                    |
/// | `mathieu`     | `gamma`                                           |
/// | `layered`     | `omega, split, inv_p1, inv_p2, q1, q2, r1, r2`    |
pub fn base_family(name: &str, params: &[f64]) -> Result<BaseFamily> {
    let base = match name {
        "free" => BaseFamily::Free {
            omega: param(params, 0, Some(PI), "omega", name)?,
            weight: param(params, 1, Some(1.0), "weight", name)?,
        },
        "const_shift" => BaseFamily::ConstShift {
            q0: param(params, 0, None, "q0", name)?,
            omega: param(params, 1, Some(PI), "omega", name)?,
            weight: param(params, 2, Some(1.0), "weight", name)?,
        },
        "mathieu" => BaseFamily::Mathieu { gamma: param(params, 0, None, "gamma", name)? },
        "layered" => {
            let p = |i, n| param(params, i, None, n, name);
            BaseFamily::Layered {
                omega: p(0, "omega")?,
                split: p(1, "split")?,
                inv_p: [p(2, "inv_p1")?, p(3, "inv_p2")?],
                q: [p(4, "q1")?, p(5, "q2")?],
                r: [p(6, "r1")?, p(7, "r2")?],
            }
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    base.validate()?;
    Ok(base)
}

/// Build a perturbation profile (acting on `q`) from its name.
///
/// | name               | parameters                      |
/// |--------------------|---------------------------------|
/// | `square_well_pert` | `depth, width, start = 0`       |
/// | `exp_decay_pert`   | `amplitude, rate`               |
/// | `power_decay_pert` | `amplitude, exponent`           |
/// | `gaussian_pert`    | `amplitude, width = 1`          |
pub fn perturbation_profile(name: &str, params: &[f64]) -> Result<Profile> {
    let profile = match name {
        "square_well_pert" | "square_well" | "well" => Profile::SquareWell {
            depth: param(params, 0, None, "depth", name)?,
            width: param(params, 1, None, "width", name)?,
            start: param(params, 2, Some(0.0), "start", name)?,
        },
        "exp_decay_pert" | "exp_decay" => Profile::ExpDecay {
            amplitude: param(params, 0, None, "amplitude", name)?,
            rate: param(params, 1, None, "rate", name)?,
        },
        "power_decay_pert" | "power_decay" => Profile::PowerDecay {
            amplitude: param(params, 0, None, "amplitude", name)?,
            exponent: param(params, 1, None, "exponent", name)?,
        },
        "gaussian_pert" | "gaussian" => Profile::Gaussian {
            amplitude: param(params, 0, None, "amplitude", name)?,
            width: param(params, 1, Some(1.0), "width", name)?,
        },
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    profile.validate()?;
    Ok(profile)
}

/// Built-in model by name with `a = 0`. Perturbation families are applied to
/// `q` on top of the free base with period π.
pub fn make_builtin(name: &str, params: &[f64]) -> Result<CoefficientModel> {
    if name.ends_with("_pert") {
        let profile = perturbation_profile(name, params)?;
        let base = CoefficientModel::periodic(BaseFamily::Free { omega: PI, weight: 1.0 }, 0.0)?;
        return base.with_terms(alloc::vec![PerturbationTerm::q(profile)]);
    }
    CoefficientModel::periodic(base_family(name, params)?, 0.0)
}

/// Periodic base problem together with its perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedPair {
    base: CoefficientModel,
    pert: CoefficientModel,
    moment_class: u8,
}

/// Result of [`moment_norm`].
#[derive(Clone, Debug, PartialEq)]
pub struct MomentNorm {
    pub order: u8,
    pub truncation: f64,
    /// `∫_a^X (|Δr| + |Δ(1/p)| + |Δq|) |t|^k dt`.
    pub value: f64,
    /// Analytic bound on the remainder beyond `X`.
    pub tail: Tail,
    /// Window integrals over `[2^j X₀, 2^{j+1} X₀]` used by the Cauchy test.
    pub windows: Vec<f64>,
    /// Cauchy test over doubling windows failed.
    pub cauchy_failed: bool,
    pub divergent: bool,
}

impl MomentNorm {
    /// `value + tail` when the tail is known.
    pub fn total(&self) -> Option<f64> {
        self.tail.bound().map(|t| self.value + t)
    }
}

impl PerturbedPair {
    /// Pair from a periodic base and perturbation terms added to it.
    pub fn new(base: CoefficientModel, terms: Vec<PerturbationTerm>, moment_class: u8) -> Result<Self> {
        let pert = base.with_terms(terms)?;
        Self::from_models(base, pert, moment_class)
    }

    /// Pair from two models sharing the domain start.
    pub fn from_models(base: CoefficientModel, pert: CoefficientModel, moment_class: u8) -> Result<Self> {
        if base.period().is_none() {
            return Err(Error::NotPeriodic);
        }
        if moment_class > 2 {
            return Err(Error::InvalidParameter(format!("moment class must be 0, 1 or 2, got {moment_class}")));
        }
        if base.domain_start() != pert.domain_start() || base.mirror() != pert.mirror() {
            return Err(Error::InvalidParameter("base and perturbation must share the domain start".to_string()));
        }
        let pair = PerturbedPair { base, pert, moment_class };
        for k in 0..=moment_class {
            let x = pair.a() + 10.0 * pair.period();
            let m = moment_norm(&pair, k, x)?;
            if m.divergent {
                return Err(Error::MomentDivergent { order: k });
            }
        }
        Ok(pair)
    }

    pub fn unperturbed(base: CoefficientModel) -> Result<Self> {
        let pert = base.clone();
        Self::from_models(base, pert, 2)
    }

    pub fn base(&self) -> &CoefficientModel {
        &self.base
    }

    pub fn pert(&self) -> &CoefficientModel {
        &self.pert
    }

    pub fn moment_class(&self) -> u8 {
        self.moment_class
    }

    pub fn a(&self) -> f64 {
        self.base.domain_start()
    }

    pub fn period(&self) -> f64 {
        self.base.base_period()
    }

    pub fn is_unperturbed(&self) -> bool {
        self.pert.terms().len() == self.base.terms().len() && self.pert == self.base
    }

    /// `(1/p₁ - 1/p₀, q₁ - q₀, r₁ - r₀)` at `x`.
    pub fn difference(&self, x: f64) -> Triple {
        // Same base family: only the terms differ, no cancellation.
        if self.base.base == self.pert.base {
            let b = self.base.term_sum(x);
            let p = self.pert.term_sum(x);
            return Triple::new(p.inv_p - b.inv_p, p.q - b.q, p.r - b.r);
        }
        let b = self.base.eval(x);
        let p = self.pert.eval(x);
        Triple::new(p.inv_p - b.inv_p, p.q - b.q, p.r - b.r)
    }

    /// Spectral norm of the coupling matrix
    /// `[[0, Δ(1/p)], [Δq - λ Δr, 0]]`.
    pub fn coupling_norm(&self, x: f64, lambda: f64) -> f64 {
        let d = self.difference(x);
        abs(d.inv_p).max(abs(d.q - lambda * d.r))
    }

    /// The pair on `(-∞, a]` seen through `x ↦ 2a - x`.
    pub fn reflected(&self) -> PerturbedPair {
        PerturbedPair {
            base: self.base.reflected(),
            pert: self.pert.reflected(),
            moment_class: self.moment_class,
        }
    }

    /// Analytic bound on `∫_X^∞ |Δ| |t|^k dt`.
    pub fn tail(&self, k: u32, x: f64) -> Tail {
        if self.pert.base_family() != self.base.base_family() {
            return Tail::Unknown;
        }
        let own = self.pert.perturbation_tail(k, x);
        if self.base.terms().is_empty() { own } else { Tail::Unknown }
    }

    /// All breakpoints of either model inside `(lo, hi)`.
    pub fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut v = self.base.breakpoints(lo, hi);
        v.extend(self.pert.breakpoints(lo, hi));
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| abs(*a - *b) <= 1e-14 * (1.0 + abs(*b)));
        v
    }

    /// End of the support for compactly supported perturbations.
    pub fn compact_support_end(&self) -> Option<f64> {
        if self.is_unperturbed() {
            return Some(self.a());
        }
        if self.pert.all_compact() {
            self.pert.perturbation_support_end().map(|e| e.max(self.a()))
        } else {
            None
        }
    }
}

fn integrate_difference(pair: &PerturbedPair, k: u8, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mut cuts = alloc::vec![lo];
    cuts.extend(pair.breakpoints(lo, hi));
    if lo < 0.0 && hi > 0.0 {
        cuts.push(0.0);
    }
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let f = |t: f64| pair.difference(t).l1() * crate::math::powi(abs(t), k as i32);
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        if s1 <= s0 {
            continue;
        }
        // Split long stretches so the adaptive rule sees the decay scale.
        let pieces = libm::ceil((s1 - s0) / 4.0).clamp(1.0, 64.0) as usize;
        let h = (s1 - s0) / pieces as f64;
        for i in 0..pieces {
            let a = s0 + i as f64 * h;
            let b = if i + 1 == pieces { s1 } else { a + h };
            // Sample strictly inside to respect one-sided limits.
            acc += quadrature::adaptive(|t| f(t.clamp(a, crate::math::next_below(b))), a, b, 1e-14);
        }
    }
    acc
}

const CAUCHY_WINDOWS: usize = 24;

/// Moment norm `∫_a^X (|r₁-r₀| + |1/p₁-1/p₀| + |q₁-q₀|) |t|^k dt` with an
/// analytic tail bound and a Cauchy test over doubling windows past `X`.
pub fn moment_norm(pair: &PerturbedPair, k: u8, truncation: f64) -> Result<MomentNorm> {
    if k > 2 {
        return Err(Error::InvalidParameter(format!("moment order must be 0, 1 or 2, got {k}")));
    }
    let a = pair.a();
    if !(truncation > a) {
        return Err(Error::InvalidParameter(format!("truncation {truncation} must exceed a = {a}")));
    }
    let value = integrate_difference(pair, k, a, truncation);
    let tail = pair.tail(k as u32, truncation);

    let mut windows = Vec::with_capacity(CAUCHY_WINDOWS);
    let mut lo = truncation.max(a + 1.0).max(1.0);
    for _ in 0..CAUCHY_WINDOWS {
        let w = integrate_difference(pair, k, lo, 2.0 * lo);
        windows.push(w);
        lo *= 2.0;
    }
    // Converging tails shrink geometrically from window to window; a
    // divergent integrand keeps contributing comparable amounts.
    let scale = value + windows.iter().sum::<f64>();
    let tail_windows = &windows[CAUCHY_WINDOWS - 4..];
    let cauchy_failed = tail_windows.iter().any(|w| *w > 1e-10 * scale.max(1e-300))
        && tail_windows.windows(2).all(|p| p[1] >= 0.7 * p[0]);
    let divergent = match tail {
        Tail::Divergent => true,
        Tail::Bound(_) => false,
        Tail::Unknown => cauchy_failed,
    };
    Ok(MomentNorm { order: k, truncation, value, tail, windows, cauchy_failed, divergent })
}

/// Perturbation on the whole line, split at `a` into two half-line pairs.
/// The left pair is stored through `x ↦ 2a - x`.
#[derive(Clone, Debug, PartialEq)]
pub struct FullLine {
    left: PerturbedPair,
    right: PerturbedPair,
}

impl FullLine {
    pub fn new(left: PerturbedPair, right: PerturbedPair) -> Result<Self> {
        if left.base.base_family() != right.base.base_family() || left.a() != right.a() {
            return Err(Error::InvalidParameter("both sides must share the base problem and a".to_string()));
        }
        if left.pert.mirror().is_none() || right.pert.mirror().is_some() {
            return Err(Error::InvalidParameter("left side must be reflected, right side must not".to_string()));
        }
        Ok(FullLine { left, right })
    }

    /// Split a model defined on the whole line at its domain start.
    pub fn from_pair(pair: &PerturbedPair) -> Result<Self> {
        if pair.pert.mirror().is_some() {
            return Err(Error::InvalidParameter("expected an unreflected pair".to_string()));
        }
        Ok(FullLine { left: pair.reflected(), right: pair.clone() })
    }

    pub fn left(&self) -> &PerturbedPair {
        &self.left
    }

    pub fn right(&self) -> &PerturbedPair {
        &self.right
    }

    pub fn a(&self) -> f64 {
        self.right.a()
    }

    pub fn period(&self) -> f64 {
        self.right.period()
    }
}

impl Coefficients for FullLine {
    fn eval(&self, x: f64) -> Triple {
        let a = self.a();
        if x >= a {
            self.right.pert.eval(x)
        } else {
            self.left.pert.eval(2.0 * a - x)
        }
    }

    fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        let a = self.a();
        let mut out = Vec::new();
        if lo < a {
            let left = self.left.pert.breakpoints(2.0 * a - hi.min(a), 2.0 * a - lo);
            out.extend(left.into_iter().map(|b| 2.0 * a - b));
        }
        if lo < a && hi > a {
            out.push(a);
        }
        if hi > a {
            out.extend(self.right.pert.breakpoints(lo.max(a), hi));
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| abs(*a - *b) <= 1e-14 * (1.0 + abs(*b)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn free() -> CoefficientModel {
        make_builtin("free", &[PI]).unwrap()
    }

    #[test]
    fn free_model_is_identity() {
        let m = free();
        assert_eq!(m.eval(17.3), Triple::new(1.0, 0.0, 1.0));
        assert_eq!(m.period(), Some(PI));
    }

    #[test]
    fn mathieu_values() {
        let m = make_builtin("mathieu", &[1.0]).unwrap();
        assert!((m.eval(0.0).q - 2.0).abs() < 1e-15);
        assert!((m.eval(PI / 2.0).q + 2.0).abs() < 1e-15);
        let t = m.eval(PI);
        assert!((t.q - 2.0).abs() < 1e-14 && t.inv_p == 1.0 && t.r == 1.0);
    }

    #[test]
    fn exp_decay_difference() {
        let m = make_builtin("exp_decay_pert", &[-3.0, 1.0]).unwrap();
        for x in [0.0, 0.5, 2.0, 7.0] {
            assert!((m.eval(x).q - (-3.0 * (-x as f64).exp())).abs() < 1e-14);
        }
        assert_eq!(m.period(), None);
    }

    #[test]
    fn builtin_errors() {
        assert!(matches!(make_builtin("nope", &[]), Err(Error::UnknownFamily(_))));
        assert!(matches!(make_builtin("free", &[PI, 0.0]), Err(Error::InvalidParameter(_))));
        assert!(matches!(make_builtin("free", &[PI, -2.0]), Err(Error::InvalidParameter(_))));
        assert!(matches!(make_builtin("mathieu", &[]), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn negative_weight_perturbation_rejected() {
        let base = free();
        let t = PerturbationTerm::new(Component::R, Profile::Gaussian { amplitude: -2.0, width: 1.0 });
        assert!(matches!(base.with_terms(vec![t]), Err(Error::NonPositiveCoefficient { name: "r", .. })));
    }

    #[test]
    fn square_well_is_right_continuous() {
        let m = make_builtin("square_well_pert", &[-2.0, 2.0, 0.0]).unwrap();
        assert_eq!(m.eval(0.0).q, -2.0);
        assert_eq!(m.eval(2.0).q, 0.0);
        assert_eq!(m.breakpoints(-1.0, 3.0), vec![0.0, 2.0]);
    }

    #[test]
    fn reflection_maps_left_half_line() {
        let m = make_builtin("square_well_pert", &[-2.0, 1.0, -3.0]).unwrap();
        let r = m.reflected();
        // the well on [-3, -2) appears on (2, 3] after reflection about 0
        assert_eq!(r.eval(2.5).q, -2.0);
        assert_eq!(r.breakpoints(0.0, 5.0), vec![2.0, 3.0]);
        assert_eq!(r.reflected(), m);
    }

    #[test]
    fn layered_breakpoints_and_values() {
        let m = make_builtin("layered", &[2.0, 0.25, 1.0, 2.0, 0.0, 1.0, 1.0, 3.0]).unwrap();
        assert_eq!(m.eval(0.0), Triple::new(1.0, 0.0, 1.0));
        assert_eq!(m.eval(0.5), Triple::new(2.0, 1.0, 3.0));
        assert_eq!(m.eval(2.1), Triple::new(1.0, 0.0, 1.0));
        assert_eq!(m.breakpoints(0.0, 4.0), vec![0.5, 2.0, 2.5]);
    }

    fn pair_with(profile: Profile, k: u8) -> Result<PerturbedPair> {
        PerturbedPair::new(free(), vec![PerturbationTerm::q(profile)], k)
    }

    #[test]
    fn moment_of_exponential() {
        let pair = pair_with(Profile::ExpDecay { amplitude: 1.0, rate: 1.0 }, 2).unwrap();
        let m0 = moment_norm(&pair, 0, 40.0).unwrap();
        assert!((m0.total().unwrap() - 1.0).abs() < 1e-12);
        let m2 = moment_norm(&pair, 2, 40.0).unwrap();
        assert!((m2.total().unwrap() - 2.0).abs() < 1e-11);
        assert!(!m2.divergent);
        // tail bound is exact for this family
        let short = moment_norm(&pair, 2, 3.0).unwrap();
        assert!((short.total().unwrap() - 2.0).abs() < 1e-11);
    }

    #[test]
    fn moment_of_power_decay_diverges() {
        let pair = pair_with(Profile::PowerDecay { amplitude: 1.0, exponent: 3.0 }, 1).unwrap();
        let m = moment_norm(&pair, 2, 10.0).unwrap();
        assert!(m.divergent);
        assert!(m.cauchy_failed);
        assert!(matches!(pair_with(Profile::PowerDecay { amplitude: 1.0, exponent: 3.0 }, 2),
            Err(Error::MomentDivergent { order: 2 })));
        let m1 = moment_norm(&pair, 1, 10.0).unwrap();
        assert!(!m1.divergent && !m1.cauchy_failed);
    }

    #[test]
    fn gaussian_tails_match_quadrature() {
        let pair = pair_with(Profile::Gaussian { amplitude: -0.7, width: 1.3 }, 2).unwrap();
        for k in 0..=2u8 {
            let short = moment_norm(&pair, k, 0.8).unwrap();
            let long = moment_norm(&pair, k, 30.0).unwrap();
            assert!((short.total().unwrap() - long.value).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn unperturbed_moment_is_zero() {
        let pair = PerturbedPair::unperturbed(make_builtin("mathieu", &[1.0]).unwrap()).unwrap();
        for k in 0..=2 {
            let m = moment_norm(&pair, k, 25.0).unwrap();
            assert_eq!(m.value, 0.0);
            assert_eq!(m.total(), Some(0.0));
        }
    }

    #[test]
    fn mirrored_tail_bounds_hold() {
        let base = CoefficientModel::periodic(BaseFamily::Free { omega: 1.0, weight: 1.0 }, 1.5).unwrap();
        let pair = PerturbedPair::new(base, vec![PerturbationTerm::q(Profile::ExpDecay { amplitude: 2.0, rate: 0.8 })], 2)
            .unwrap()
            .reflected();
        for k in 0..=2u8 {
            let x = 6.0;
            let bound = pair.tail(k as u32, x).bound().unwrap();
            let exact = moment_norm(&pair, k, 80.0).unwrap().value - moment_norm(&pair, k, x).unwrap().value;
            assert!(bound >= exact - 1e-12, "k = {k}: bound {bound} < {exact}");
        }
    }
}
