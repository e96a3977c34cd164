//! Closed-form adaptation laws.
//!
//! Every form shares the core
//!
//! ```text
//! L = E + A / N^alpha + B * r^nu / D^beta_eff + C / (r + eps)^gamma  [+ F / ptpp^eta]
//! ```
//!
//! and differs in whether the pre-training budget enters through an additive
//! floor term, through a bounded gate on the data exponent, through both, or
//! not at all (the transfer baseline).

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::dataset::{R_MAX, R_MIN};
use crate::error::{Error, Result};

/// Offset inside the replay barrier `C / (r + eps)^gamma`.
pub const BARRIER_EPS: f64 = 1e-5;
/// Lower clamp on the gated data exponent.
pub const BETA_EFF_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    E,
    A,
    Alpha,
    B,
    Beta,
    Nu,
    C,
    Gamma,
    F,
    Eta,
    Lambda,
    Zeta,
}

impl Param {
    pub const ALL: [Param; 12] = [
        Param::E,
        Param::A,
        Param::Alpha,
        Param::B,
        Param::Beta,
        Param::Nu,
        Param::C,
        Param::Gamma,
        Param::F,
        Param::Eta,
        Param::Lambda,
        Param::Zeta,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Param::E => "E",
            Param::A => "A",
            Param::Alpha => "alpha",
            Param::B => "B",
            Param::Beta => "beta",
            Param::Nu => "nu",
            Param::C => "C",
            Param::Gamma => "gamma",
            Param::F => "F",
            Param::Eta => "eta",
            Param::Lambda => "lambda",
            Param::Zeta => "zeta",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.symbol() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Multiplicative coefficients (as opposed to exponents and gate parameters).
    pub fn is_coefficient(self) -> bool {
        matches!(self, Param::A | Param::B | Param::C | Param::F)
    }

    pub fn is_exponent(self) -> bool {
        matches!(
            self,
            Param::Alpha | Param::Beta | Param::Nu | Param::Gamma | Param::Eta
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LawForm {
    /// Form 1: additive pre-training floor `F / ptpp^eta`.
    AdditiveFloor,
    /// Form 2: gated data exponent, no floor.
    GatedExponent,
    /// Form 3: gated data exponent plus floor.
    GatedPlusFloor,
    /// Transfer baseline without any pre-training dependence.
    DcptBaseline,
}

const FORM1: &[Param] = &[
    Param::E,
    Param::A,
    Param::Alpha,
    Param::B,
    Param::Beta,
    Param::Nu,
    Param::C,
    Param::Gamma,
    Param::F,
    Param::Eta,
];
const FORM2: &[Param] = &[
    Param::E,
    Param::A,
    Param::Alpha,
    Param::B,
    Param::Beta,
    Param::Nu,
    Param::C,
    Param::Gamma,
    Param::Lambda,
    Param::Zeta,
];
const DCPT: &[Param] = &[
    Param::E,
    Param::A,
    Param::Alpha,
    Param::B,
    Param::Beta,
    Param::Nu,
    Param::C,
    Param::Gamma,
];

impl LawForm {
    pub const ALL: [LawForm; 4] = [
        LawForm::AdditiveFloor,
        LawForm::GatedExponent,
        LawForm::GatedPlusFloor,
        LawForm::DcptBaseline,
    ];

    pub fn active(self) -> &'static [Param] {
        match self {
            LawForm::AdditiveFloor => FORM1,
            LawForm::GatedExponent => FORM2,
            LawForm::GatedPlusFloor => &Param::ALL,
            LawForm::DcptBaseline => DCPT,
        }
    }

    pub fn is_active(self, p: Param) -> bool {
        self.active().contains(&p)
    }

    pub fn has_floor(self) -> bool {
        matches!(self, LawForm::AdditiveFloor | LawForm::GatedPlusFloor)
    }

    pub fn has_gate(self) -> bool {
        matches!(self, LawForm::GatedExponent | LawForm::GatedPlusFloor)
    }

    pub fn name(self) -> &'static str {
        match self {
            LawForm::AdditiveFloor => "additive-floor",
            LawForm::GatedExponent => "gated",
            LawForm::GatedPlusFloor => "gated-floor",
            LawForm::DcptBaseline => "dcpt",
        }
    }

    pub fn valid_names() -> String {
        LawForm::ALL
            .iter()
            .map(|f| f.name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for LawForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LawForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "additive-floor" | "additive" | "floor" | "form1" => Ok(LawForm::AdditiveFloor),
            "gated" | "gated-exponent" | "form2" => Ok(LawForm::GatedExponent),
            "gated-floor" | "gated-plus-floor" | "form3" => Ok(LawForm::GatedPlusFloor),
            "dcpt" | "dcpt-baseline" | "baseline" => Ok(LawForm::DcptBaseline),
            other => Err(Error::Config(format!(
                "unknown law form `{other}`; valid forms: {}",
                LawForm::valid_names()
            ))),
        }
    }
}

impl Serialize for LawForm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for LawForm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Full parameter vector. Parameters a form does not use must be zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LawParams {
    pub e: f64,
    pub a: f64,
    pub alpha: f64,
    pub b: f64,
    pub beta: f64,
    pub nu: f64,
    pub c: f64,
    pub gamma: f64,
    pub f: f64,
    pub eta: f64,
    pub lambda: f64,
    pub zeta: f64,
}

impl LawParams {
    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::E => self.e,
            Param::A => self.a,
            Param::Alpha => self.alpha,
            Param::B => self.b,
            Param::Beta => self.beta,
            Param::Nu => self.nu,
            Param::C => self.c,
            Param::Gamma => self.gamma,
            Param::F => self.f,
            Param::Eta => self.eta,
            Param::Lambda => self.lambda,
            Param::Zeta => self.zeta,
        }
    }

    pub fn set(&mut self, p: Param, v: f64) {
        let slot = match p {
            Param::E => &mut self.e,
            Param::A => &mut self.a,
            Param::Alpha => &mut self.alpha,
            Param::B => &mut self.b,
            Param::Beta => &mut self.beta,
            Param::Nu => &mut self.nu,
            Param::C => &mut self.c,
            Param::Gamma => &mut self.gamma,
            Param::F => &mut self.f,
            Param::Eta => &mut self.eta,
            Param::Lambda => &mut self.lambda,
            Param::Zeta => &mut self.zeta,
        };
        *slot = v;
    }

    /// Copy with every parameter the form does not use set to zero.
    pub fn restricted_to(&self, form: LawForm) -> LawParams {
        let mut out = LawParams::default();
        for &p in form.active() {
            out.set(p, self.get(p));
        }
        out
    }

    pub fn validate_for(&self, form: LawForm) -> Result<()> {
        for p in Param::ALL {
            let v = self.get(p);
            if !v.is_finite() {
                return Err(Error::Law(format!("parameter {} is not finite", p.symbol())));
            }
            if !form.is_active(p) {
                if v != 0.0 {
                    return Err(Error::Law(format!(
                        "parameter {} = {v} is not used by form {form} and must be zero",
                        p.symbol()
                    )));
                }
                continue;
            }
            if p != Param::Zeta && v < 0.0 {
                return Err(Error::Law(format!("parameter {} must be >= 0", p.symbol())));
            }
        }
        if self.lambda >= 1.0 {
            return Err(Error::Law("gate amplitude lambda must be < 1".into()));
        }
        Ok(())
    }
}

/// A point at which a law is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub n: f64,
    pub d: f64,
    pub r: f64,
    pub ptpp: f64,
}

impl EvalPoint {
    /// Validates `N, D, ptpp > 0` and clips `r`.
    pub fn new(n: f64, d: f64, r: f64, ptpp: f64) -> Result<Self> {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Law("model size N must be > 0".into()));
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::Law(
                "adaptation tokens D must be > 0 (the data term is singular at D = 0)".into(),
            ));
        }
        if !(ptpp.is_finite() && ptpp > 0.0) {
            return Err(Error::Law("ptpp must be > 0".into()));
        }
        if !r.is_finite() {
            return Err(Error::Law("replay ratio must be finite".into()));
        }
        Ok(Self {
            n,
            d,
            r: r.clamp(R_MIN, R_MAX),
            ptpp,
        })
    }
}

/// Logistic function, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

/// Gate value `ptpp^zeta / (1 + ptpp^zeta)`, computed as `sigmoid(zeta * ln ptpp)`.
pub fn gate(zeta: f64, ptpp: f64) -> f64 {
    sigmoid(zeta * ptpp.ln())
}

/// Effective data exponent `max(beta * (1 - lambda * gate), 1e-6)`.
pub fn beta_eff(beta: f64, lambda: f64, zeta: f64, ptpp: f64) -> f64 {
    (beta * (1.0 - lambda * gate(zeta, ptpp))).max(BETA_EFF_MIN)
}

/// Logarithms of one evaluation point, precomputed for repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PointLogs {
    pub ln_n: f64,
    pub ln_d: f64,
    pub ln_r: f64,
    pub ln_r_eps: f64,
    pub ln_p: f64,
}

impl PointLogs {
    pub fn of(x: &EvalPoint) -> Self {
        Self {
            ln_n: x.n.ln(),
            ln_d: x.d.ln(),
            ln_r: x.r.ln(),
            ln_r_eps: (x.r + BARRIER_EPS).ln(),
            ln_p: x.ptpp.ln(),
        }
    }
}

/// Value and parameter gradient of a law at one point. Inactive entries of
/// `grad` are left at zero.
pub(crate) fn value_and_grad(
    form: LawForm,
    p: &LawParams,
    x: &PointLogs,
    grad: Option<&mut [f64; 12]>,
) -> f64 {
    let size = p.a * (-p.alpha * x.ln_n).exp();
    let barrier = p.c * (-p.gamma * x.ln_r_eps).exp();

    let (g, raw_beta) = if form.has_gate() {
        let g = sigmoid(p.zeta * x.ln_p);
        (g, p.beta * (1.0 - p.lambda * g))
    } else {
        (0.0, p.beta)
    };
    let clamped = form.has_gate() && raw_beta < BETA_EFF_MIN;
    let beff = if clamped { BETA_EFF_MIN } else { raw_beta };
    let data_unit = (p.nu * x.ln_r - beff * x.ln_d).exp();
    let data = p.b * data_unit;

    let (floor_unit, floor) = if form.has_floor() {
        let u = (-p.eta * x.ln_p).exp();
        (u, p.f * u)
    } else {
        (0.0, 0.0)
    };

    if let Some(gr) = grad {
        gr[Param::E.index()] = 1.0;
        gr[Param::A.index()] = (-p.alpha * x.ln_n).exp();
        gr[Param::Alpha.index()] = -size * x.ln_n;
        gr[Param::B.index()] = data_unit;
        gr[Param::Nu.index()] = data * x.ln_r;
        gr[Param::C.index()] = (-p.gamma * x.ln_r_eps).exp();
        gr[Param::Gamma.index()] = -barrier * x.ln_r_eps;
        // d(data)/d(beta_eff)
        let d_beff = -data * x.ln_d;
        if form.has_gate() {
            if clamped {
                gr[Param::Beta.index()] = 0.0;
                gr[Param::Lambda.index()] = 0.0;
                gr[Param::Zeta.index()] = 0.0;
            } else {
                gr[Param::Beta.index()] = d_beff * (1.0 - p.lambda * g);
                gr[Param::Lambda.index()] = d_beff * (-p.beta * g);
                gr[Param::Zeta.index()] = d_beff * (-p.beta * p.lambda * g * (1.0 - g) * x.ln_p);
            }
        } else {
            gr[Param::Beta.index()] = d_beff;
        }
        if form.has_floor() {
            gr[Param::F.index()] = floor_unit;
            gr[Param::Eta.index()] = -floor * x.ln_p;
        }
    }

    p.e + size + data + barrier + floor
}

/// Predicted loss of `form` with parameters `p` at `x`.
pub fn eval_law(form: LawForm, p: &LawParams, x: &EvalPoint) -> Result<f64> {
    p.validate_for(form)?;
    Ok(value_and_grad(form, p, &PointLogs::of(x), None))
}

/// Partial derivatives of the predicted loss with respect to each active
/// parameter, in the order of [`LawForm::active`].
pub fn grad_law(form: LawForm, p: &LawParams, x: &EvalPoint) -> Result<Vec<(Param, f64)>> {
    p.validate_for(form)?;
    let mut g = [0.0; 12];
    value_and_grad(form, p, &PointLogs::of(x), Some(&mut g));
    Ok(form.active().iter().map(|&q| (q, g[q.index()])).collect())
}

/// Reference source loss before adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Law evaluated at `r = 1` with the data term dropped (the `D -> 0` limit
    /// is singular in the fitted family).
    LawLimit,
    /// A measured pre-adaptation source loss.
    Measured(f64),
}

pub fn baseline_source_loss(
    form: LawForm,
    p: &LawParams,
    n: f64,
    ptpp: f64,
    mode: BaselineMode,
) -> Result<f64> {
    match mode {
        BaselineMode::Measured(v) => {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::Law(format!("measured baseline loss must be > 0, got {v}")))
            }
        }
        BaselineMode::LawLimit => {
            p.validate_for(form)?;
            if !(n > 0.0 && ptpp > 0.0) {
                return Err(Error::Law("N and ptpp must be > 0".into()));
            }
            let mut loss = p.e + p.a * n.powf(-p.alpha) + p.c * (1.0 + BARRIER_EPS).powf(-p.gamma);
            if form.has_floor() {
                loss += p.f * ptpp.powf(-p.eta);
            }
            Ok(loss)
        }
    }
}

/// A form together with its parameters; serializes to the flat JSON object
/// `{"form": ..., "E": ..., ...}` with inactive keys absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Law {
    pub form: LawForm,
    pub params: LawParams,
}

impl Law {
    pub fn new(form: LawForm, params: LawParams) -> Result<Self> {
        params.validate_for(form)?;
        Ok(Self { form, params })
    }

    pub fn eval(&self, x: &EvalPoint) -> f64 {
        value_and_grad(self.form, &self.params, &PointLogs::of(x), None)
    }

    /// True when the law is strictly decreasing in `D` everywhere
    /// (positive data coefficient and positive effective exponent).
    pub fn strictly_decreasing_in_d(&self) -> bool {
        self.params.b > 0.0 && self.params.beta > 0.0
    }
}

/// Active parameters of one form, serialized as a flat map keyed by symbol in
/// canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveParams {
    pub form: LawForm,
    pub params: LawParams,
}

impl Serialize for ActiveParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let active = self.form.active();
        let mut map = s.serialize_map(Some(active.len()))?;
        for &p in active {
            map.serialize_entry(p.symbol(), &self.params.get(p))?;
        }
        map.end()
    }
}

fn params_from_entries(
    form: LawForm,
    entries: Vec<(String, f64)>,
) -> std::result::Result<LawParams, String> {
    let mut params = LawParams::default();
    let mut seen = Vec::new();
    for (key, value) in entries {
        let p = Param::from_symbol(&key).ok_or_else(|| format!("unknown parameter `{key}`"))?;
        if !form.is_active(p) {
            return Err(format!("parameter `{key}` is not used by form {form} and must be absent"));
        }
        if seen.contains(&p) {
            return Err(format!("duplicate parameter `{key}`"));
        }
        seen.push(p);
        params.set(p, value);
    }
    if let Some(missing) = form.active().iter().find(|p| !seen.contains(p)) {
        return Err(format!("missing parameter `{}` for form {form}", missing.symbol()));
    }
    params.validate_for(form).map_err(|e| e.to_string())?;
    Ok(params)
}

impl Serialize for Law {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let active = self.form.active();
        let mut map = s.serialize_map(Some(active.len() + 1))?;
        map.serialize_entry("form", &self.form)?;
        for &p in active {
            map.serialize_entry(p.symbol(), &self.params.get(p))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Law {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct LawVisitor;
        impl<'de> Visitor<'de> for LawVisitor {
            type Value = Law;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a flat law object with a `form` key")
            }
            fn visit_map<M: MapAccess<'de>>(self, mut map: M) -> std::result::Result<Law, M::Error> {
                let mut form = None;
                let mut entries = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    if key == "form" {
                        form = Some(map.next_value::<LawForm>()?);
                    } else {
                        entries.push((key, map.next_value::<f64>()?));
                    }
                }
                let form = form.ok_or_else(|| de::Error::missing_field("form"))?;
                let params = params_from_entries(form, entries).map_err(de::Error::custom)?;
                Ok(Law { form, params })
            }
        }
        d.deserialize_map(LawVisitor)
    }
}

/// Deserializes an [`ActiveParams`] map once the form is known.
pub(crate) fn active_params_from_map(
    form: LawForm,
    map: std::collections::BTreeMap<String, f64>,
) -> std::result::Result<LawParams, String> {
    params_from_entries(form, map.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn form3_fixture() -> LawParams {
        LawParams {
            e: 1.0,
            a: 80.0,
            alpha: 0.3,
            b: 40.0,
            beta: 0.25,
            nu: 0.2,
            c: 0.05,
            gamma: 0.5,
            f: 2.0,
            eta: 0.4,
            lambda: 0.5,
            zeta: 2.0,
        }
    }

    #[test]
    fn beta_eff_examples() {
        assert_eq!(beta_eff(0.5, 0.0, 2.0, 31.0), 0.5);
        assert_relative_eq!(beta_eff(0.5, 0.4, 3.0, 1.0), 0.4, max_relative = 1e-15);
        assert_eq!(beta_eff(1e-7, 0.9, 1.0, 279.0), 1e-6);
    }

    #[test]
    fn gate_is_overflow_free() {
        assert_eq!(gate(1e4, 279.0), 1.0);
        assert_eq!(gate(-1e4, 279.0), 0.0);
        let g = gate(20.0, 1000.0);
        assert!(g > 0.0 && g <= 1.0);
    }

    #[test]
    fn offset_only_law() {
        let p = LawParams {
            e: 1.8,
            alpha: 0.3,
            beta: 0.2,
            ..LawParams::default()
        };
        let x = EvalPoint::new(1e9, 1e10, 0.3, 31.0).unwrap();
        assert_eq!(eval_law(LawForm::AdditiveFloor, &p, &x).unwrap(), 1.8);
    }

    #[test]
    fn golden_form3_value() {
        // independently evaluated at 40 digits: 4.118145360203513757...
        let x = EvalPoint::new(2.41e8, 1e9, 0.25, 31.0).unwrap();
        let v = eval_law(LawForm::GatedPlusFloor, &form3_fixture(), &x).unwrap();
        assert_relative_eq!(v, 4.118145360203514, max_relative = 1e-14);
    }

    #[test]
    fn inactive_param_rejected() {
        let p = form3_fixture();
        let x = EvalPoint::new(2.41e8, 1e9, 0.25, 31.0).unwrap();
        let err = eval_law(LawForm::DcptBaseline, &p, &x).unwrap_err();
        assert!(err.to_string().contains("not used"));
        assert!(EvalPoint::new(2.41e8, 0.0, 0.25, 31.0).is_err());
    }

    #[test]
    fn simple_partials() {
        let p = form3_fixture();
        let x = EvalPoint::new(2.41e8, 1e9, 0.25, 31.0).unwrap();
        let g = grad_law(LawForm::GatedPlusFloor, &p, &x).unwrap();
        let get = |q: Param| g.iter().find(|(k, _)| *k == q).unwrap().1;
        assert_eq!(get(Param::E), 1.0);
        assert_relative_eq!(get(Param::A), (2.41e8f64).powf(-0.3), max_relative = 1e-13);
        assert_eq!(g.len(), 12);
        let g1 = grad_law(LawForm::DcptBaseline, &p.restricted_to(LawForm::DcptBaseline), &x).unwrap();
        assert_eq!(g1.len(), 8);
    }

    #[test]
    fn baseline_examples() {
        let p = LawParams {
            e: 2.0,
            f: 1.0,
            eta: 1.0,
            ..LawParams::default()
        };
        let form = LawForm::AdditiveFloor;
        assert_eq!(baseline_source_loss(form, &p, 1e9, 4.0, BaselineMode::Measured(3.1)).unwrap(), 3.1);
        assert_relative_eq!(
            baseline_source_loss(form, &p, 1e9, 4.0, BaselineMode::LawLimit).unwrap(),
            2.25,
            max_relative = 1e-15
        );
        let p = LawParams {
            e: 2.0,
            c: 0.05,
            gamma: 0.5,
            ..LawParams::default()
        };
        let v = baseline_source_loss(LawForm::DcptBaseline, &p, 1e9, 4.0, BaselineMode::LawLimit).unwrap();
        // 0.05 / (1 + 1e-5)^0.5 = 0.04999975000187498...
        assert_relative_eq!(v, 2.0 + 0.04999975000187498, max_relative = 1e-15);
        assert!(baseline_source_loss(form, &p, 1e9, 4.0, BaselineMode::Measured(0.0)).is_err());
    }

    #[test]
    fn law_json_flat_and_strict() {
        let law = Law::new(LawForm::AdditiveFloor, form3_fixture().restricted_to(LawForm::AdditiveFloor))
            .unwrap();
        let json = serde_json::to_value(law).unwrap();
        let obj = json.as_object().unwrap();
        assert_eq!(obj["form"], "additive-floor");
        assert!(obj.contains_key("eta") && !obj.contains_key("lambda") && !obj.contains_key("zeta"));
        let back: Law = serde_json::from_value(json.clone()).unwrap();
        assert_eq!(back, law);

        let mut with_inactive = json;
        with_inactive["lambda"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<Law>(with_inactive).is_err());
    }

    #[test]
    fn form_names() {
        for f in LawForm::ALL {
            assert_eq!(f.name().parse::<LawForm>().unwrap(), f);
        }
        let err = "quadratic".parse::<LawForm>().unwrap_err().to_string();
        assert!(err.contains("gated-floor") && err.contains("dcpt"));
    }
}
