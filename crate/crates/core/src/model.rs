//! Coefficients, problem descriptions, time grids and validation.
//!
//! The equation being modelled is
//!
//! ```text
//! X_t = x0 + ∫ b(X_s) ds + ∫ σ(X_s) dB_s + α · sup_{s ≤ t} X_s,   α < 1
//! ```
//!
//! Coefficients are catalog presets with parameters so that run configurations stay
//! serializable. Library users can also plug in a closure with [`Coefficient::custom`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::hermite::CubicHermite;

/// Step used by the central-difference consistency check.
pub const FD_STEP: f64 = 1e-4;
/// Tolerance of the central-difference check for unit-scale coefficients.
pub const FD_TOLERANCE: f64 = 1e-6;
/// Number of points of the default validation grid.
pub const VALIDATION_POINTS: usize = 4096;

type CustomEval = dyn Fn(f64, u8) -> f64 + Send + Sync;

/// In-process escape hatch: a closure `(x, order) -> f^(order)(x)`.
#[derive(Clone)]
pub struct CustomFn {
    name: String,
    eval: Arc<CustomEval>,
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFn").field("name", &self.name).finish()
    }
}

impl PartialEq for CustomFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.eval, &other.eval)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    /// `value`
    Const { value: f64 },
    /// `slope·x + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `offset + amplitude·sin(frequency·x + phase)`
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        offset: f64,
    },
    /// `offset + amplitude·tanh(scale·x)`
    Tanh {
        amplitude: f64,
        scale: f64,
        offset: f64,
    },
    /// `rate·(mean − x)`
    OrnsteinUhlenbeck { rate: f64, mean: f64 },
    /// Cubic Hermite table; serialized as `custom-tabulated`.
    Tabulated(Arc<CubicHermite>),
    Custom(CustomFn),
}

impl Preset {
    pub fn id(&self) -> &str {
        match self {
            Preset::Const { .. } => "const",
            Preset::Linear { .. } => "linear",
            Preset::Sine { .. } => "sine",
            Preset::Tanh { .. } => "tanh",
            Preset::OrnsteinUhlenbeck { .. } => "ornstein_uhlenbeck",
            Preset::Tabulated(_) => "custom-tabulated",
            Preset::Custom(c) => &c.name,
        }
    }
}

/// User-declared sup-norms of `f`, `f′` and `f″`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupBounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2: Option<f64>,
}

impl SupBounds {
    pub fn get(&self, order: u8) -> Option<f64> {
        match order {
            0 => self.value,
            1 => self.d1,
            2 => self.d2,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    pub preset: Preset,
    pub declared_bounds: Option<SupBounds>,
}

impl Coefficient {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            declared_bounds: None,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Preset::Const { value })
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        Self::new(Preset::Linear { slope, intercept })
    }

    /// `offset + amplitude·sin(x)`
    pub fn sine(amplitude: f64, offset: f64) -> Self {
        Self::new(Preset::Sine {
            amplitude,
            frequency: 1.0,
            phase: 0.0,
            offset,
        })
    }

    /// `amplitude·tanh(x)`
    pub fn tanh(amplitude: f64) -> Self {
        Self::new(Preset::Tanh {
            amplitude,
            scale: 1.0,
            offset: 0.0,
        })
    }

    pub fn ornstein_uhlenbeck(rate: f64, mean: f64) -> Self {
        Self::new(Preset::OrnsteinUhlenbeck { rate, mean })
    }

    pub fn tabulated(table: CubicHermite) -> Self {
        Self::new(Preset::Tabulated(Arc::new(table)))
    }

    pub fn custom<F>(name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(f64, u8) -> f64 + Send + Sync + 'static,
    {
        Self::new(Preset::Custom(CustomFn {
            name: name.into(),
            eval: Arc::new(eval),
        }))
    }

    pub fn with_declared_bounds(mut self, bounds: SupBounds) -> Self {
        self.declared_bounds = Some(bounds);
        self
    }

    pub fn name(&self) -> &str {
        self.preset.id()
    }

    /// `f(x)` for `order = 0`, `f′(x)` for 1, `f″(x)` for 2. Higher orders are the
    /// caller's bug; use [`eval_coefficient`] for checked access.
    #[inline]
    pub fn eval(&self, x: f64, order: u8) -> f64 {
        debug_assert!(order <= 2);
        match &self.preset {
            Preset::Const { value } => {
                if order == 0 {
                    *value
                } else {
                    0.0
                }
            }
            Preset::Linear { slope, intercept } => match order {
                0 => slope * x + intercept,
                1 => *slope,
                _ => 0.0,
            },
            Preset::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                let arg = frequency * x + phase;
                match order {
                    0 => offset + amplitude * arg.sin(),
                    1 => amplitude * frequency * arg.cos(),
                    _ => -amplitude * frequency * frequency * arg.sin(),
                }
            }
            Preset::Tanh {
                amplitude,
                scale,
                offset,
            } => {
                let t = (scale * x).tanh();
                match order {
                    0 => offset + amplitude * t,
                    1 => amplitude * scale * (1.0 - t * t),
                    _ => -2.0 * amplitude * scale * scale * t * (1.0 - t * t),
                }
            }
            Preset::OrnsteinUhlenbeck { rate, mean } => match order {
                0 => rate * (mean - x),
                1 => -rate,
                _ => 0.0,
            },
            Preset::Tabulated(table) => table.eval(x, order),
            Preset::Custom(c) => (c.eval)(x, order),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.eval(x, 0)
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        self.eval(x, 1)
    }

    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        self.eval(x, 2)
    }

    /// Constant coefficient value, if the preset is constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.preset {
            Preset::Const { value } => Some(value),
            _ => None,
        }
    }

    /// Whether the second derivative is a genuine derivative of the first (tables are only C¹).
    fn has_consistent_d2(&self) -> bool {
        !matches!(self.preset, Preset::Tabulated(_))
    }
}

/// Checked evaluation of `f`, `f′` or `f″`.
pub fn eval_coefficient(c: &Coefficient, x: f64, order: u8) -> Result<f64> {
    if order > 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    Ok(c.eval(x, order))
}

/// Uniform grid of `n_grid` points on `[lo, hi]`.
pub fn uniform_points(lo: f64, hi: f64, n_grid: usize) -> impl Iterator<Item = f64> {
    let n = n_grid.max(2);
    let m = (n - 1) as f64;
    // i/m keeps the nodes of nested refinements bitwise identical
    (0..n).map(move |i| if i == n - 1 { hi } else { lo + (hi - lo) * (i as f64 / m) })
}

/// Max of `|f^(order)|` over a uniform grid: a lower bound on the true sup-norm.
pub fn sup_norm_estimate(c: &Coefficient, order: u8, lo: f64, hi: f64, n_grid: usize) -> f64 {
    uniform_points(lo, hi, n_grid)
        .map(|x| c.eval(x, order).abs())
        .fold(0.0, f64::max)
}

fn inf_abs_estimate(c: &Coefficient, lo: f64, hi: f64, n_grid: usize) -> (f64, bool) {
    let mut inf = f64::INFINITY;
    let (mut pos, mut neg) = (false, false);
    for x in uniform_points(lo, hi, n_grid) {
        let v = c.value(x);
        inf = inf.min(v.abs());
        pos |= v > 0.0;
        neg |= v < 0.0;
    }
    (inf, !(pos && neg))
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientRepr {
    preset_id: String,
    #[serde(default)]
    params: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    declared_bounds: Option<SupBounds>,
}

struct Params {
    preset: String,
    map: Map<String, Value>,
}

impl Params {
    fn num(&mut self, key: &str, default: Option<f64>) -> std::result::Result<f64, String> {
        match self.map.remove(key) {
            Some(v) => v
                .as_f64()
                .ok_or_else(|| format!("{}.params.{key} must be a number", self.preset)),
            None => default.ok_or_else(|| format!("{}.params.{key} is required", self.preset)),
        }
    }

    fn array(&mut self, key: &str) -> std::result::Result<Vec<f64>, String> {
        let v = self
            .map
            .remove(key)
            .ok_or_else(|| format!("{}.params.{key} is required", self.preset))?;
        serde_json::from_value(v)
            .map_err(|_| format!("{}.params.{key} must be an array of numbers", self.preset))
    }

    fn finish(self) -> std::result::Result<(), String> {
        match self.map.keys().next() {
            Some(k) => Err(format!("unknown parameter `{k}` for preset `{}`", self.preset)),
            None => Ok(()),
        }
    }
}

impl TryFrom<CoefficientRepr> for Coefficient {
    type Error = String;

    fn try_from(repr: CoefficientRepr) -> std::result::Result<Self, String> {
        let mut p = Params {
            preset: repr.preset_id.clone(),
            map: repr.params,
        };
        let preset = match repr.preset_id.as_str() {
            "const" => Preset::Const {
                value: p.num("value", None)?,
            },
            "linear" => Preset::Linear {
                slope: p.num("slope", None)?,
                intercept: p.num("intercept", Some(0.0))?,
            },
            "sine" => Preset::Sine {
                amplitude: p.num("amplitude", Some(1.0))?,
                frequency: p.num("frequency", Some(1.0))?,
                phase: p.num("phase", Some(0.0))?,
                offset: p.num("offset", Some(0.0))?,
            },
            "tanh" => Preset::Tanh {
                amplitude: p.num("amplitude", Some(1.0))?,
                scale: p.num("scale", Some(1.0))?,
                offset: p.num("offset", Some(0.0))?,
            },
            "ornstein_uhlenbeck" => Preset::OrnsteinUhlenbeck {
                rate: p.num("rate", None)?,
                mean: p.num("mean", Some(0.0))?,
            },
            "custom-tabulated" => {
                let table = CubicHermite::new(p.array("nodes")?, p.array("values")?, p.array("slopes")?)
                    .map_err(|e| e.to_string())?;
                Preset::Tabulated(Arc::new(table))
            }
            other => {
                return Err(format!(
                    "unknown preset_id `{other}` (expected const, linear, sine, tanh, ornstein_uhlenbeck or custom-tabulated)"
                ))
            }
        };
        p.finish()?;
        Ok(Coefficient {
            preset,
            declared_bounds: repr.declared_bounds,
        })
    }
}

impl TryFrom<&Coefficient> for CoefficientRepr {
    type Error = Error;

    fn try_from(c: &Coefficient) -> Result<Self> {
        let mut params = Map::new();
        let mut put = |k: &str, v: f64| {
            params.insert(k.to_string(), Value::from(v));
        };
        match &c.preset {
            Preset::Const { value } => put("value", *value),
            Preset::Linear { slope, intercept } => {
                put("slope", *slope);
                put("intercept", *intercept);
            }
            Preset::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                put("amplitude", *amplitude);
                put("frequency", *frequency);
                put("phase", *phase);
                put("offset", *offset);
            }
            Preset::Tanh {
                amplitude,
                scale,
                offset,
            } => {
                put("amplitude", *amplitude);
                put("scale", *scale);
                put("offset", *offset);
            }
            Preset::OrnsteinUhlenbeck { rate, mean } => {
                put("rate", *rate);
                put("mean", *mean);
            }
            Preset::Tabulated(table) => {
                params.insert("nodes".into(), Value::from(table.nodes().to_vec()));
                params.insert("values".into(), Value::from(table.values().to_vec()));
                params.insert("slopes".into(), Value::from(table.slopes().to_vec()));
            }
            Preset::Custom(f) => return Err(Error::NotSerializable(f.name.clone())),
        }
        Ok(CoefficientRepr {
            preset_id: c.preset.id().to_string(),
            params,
            declared_bounds: c.declared_bounds,
        })
    }
}

impl Serialize for Coefficient {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CoefficientRepr::try_from(self)
            .map_err(serde::ser::Error::custom)?
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Coefficient {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CoefficientRepr::deserialize(d)?;
        Coefficient::try_from(repr).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Problem and grid

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub x0: f64,
    pub alpha: f64,
    pub drift: Coefficient,
    pub diffusion: Coefficient,
    pub horizon: f64,
}

impl ProblemSpec {
    /// Starting value `X_0 = x0/(1−α)`, the fixed point of `X = x0 + α·X`.
    pub fn initial_state(&self) -> f64 {
        self.x0 / (1.0 - self.alpha)
    }
}

/// Uniform grid `t_k = k·dt`, `k = 0..=n_steps`, on `[0, horizon]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_steps: usize,
    pub horizon: f64,
}

impl GridSpec {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be positive".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite (got {horizon})"
            )));
        }
        Ok(Self { n_steps, horizon })
    }

    pub fn for_spec(spec: &ProblemSpec, n_steps: usize) -> Result<Self> {
        Self::new(spec.horizon, n_steps)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    Declared,
    /// Grid estimate: a lower bound on the true sup-norm, not a certificate.
    GridEstimated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveBound {
    pub value: f64,
    pub source: BoundSource,
}

/// Effective sup-norms of `f`, `f′`, `f″`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub value: EffectiveBound,
    pub d1: EffectiveBound,
    pub d2: EffectiveBound,
}

impl CoefficientBounds {
    pub fn get(&self, order: u8) -> EffectiveBound {
        match order {
            0 => self.value,
            1 => self.d1,
            _ => self.d2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidateOptions {
    /// Reject specs whose diffusion vanishes or changes sign on the validation grid.
    pub require_transform: bool,
    pub grid_points: usize,
    /// Run the central-difference consistency check on the coefficients.
    pub check_derivatives: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            require_transform: false,
            grid_points: VALIDATION_POINTS,
            check_derivatives: true,
        }
    }
}

/// A [`ProblemSpec`] that passed validation, annotated with effective sup-norms.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedSpec {
    pub spec: ProblemSpec,
    pub drift_bounds: CoefficientBounds,
    pub diffusion_bounds: CoefficientBounds,
    /// Grid infimum of `|σ|`.
    pub sigma_inf: f64,
    /// σ does not change sign on the validation grid.
    pub sigma_constant_sign: bool,
    /// Validation interval `[x0 − 10σ̄√T, x0 + 10σ̄√T]`.
    pub interval: (f64, f64),
}

impl std::ops::Deref for ValidatedSpec {
    type Target = ProblemSpec;

    fn deref(&self) -> &ProblemSpec {
        &self.spec
    }
}

impl ValidatedSpec {
    /// `σ̄`: effective sup-norm of the diffusion.
    pub fn sigma_bar(&self) -> f64 {
        self.diffusion_bounds.value.value
    }

    /// Effective `‖b′‖_∞`.
    pub fn drift_lipschitz(&self) -> EffectiveBound {
        self.drift_bounds.d1
    }
}

pub fn validate(spec: &ProblemSpec) -> Result<ValidatedSpec> {
    validate_with(spec, &ValidateOptions::default())
}

pub fn validate_with(spec: &ProblemSpec, opts: &ValidateOptions) -> Result<ValidatedSpec> {
    if !(spec.alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(spec.alpha));
    }
    for (name, v) in [("x0", spec.x0), ("alpha", spec.alpha), ("horizon", spec.horizon)] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be finite (got {v})")));
        }
    }
    if !(spec.horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive (got {})",
            spec.horizon
        )));
    }
    let n = opts.grid_points.max(2);
    let root_t = spec.horizon.sqrt();

    // σ̄ is measured on a unit-scale window first, then the window is resized by it.
    let pilot = sup_norm_estimate(
        &spec.diffusion,
        0,
        spec.x0 - 10.0 * root_t,
        spec.x0 + 10.0 * root_t,
        n,
    );
    let scale = if pilot > 0.0 { pilot } else { 1.0 };
    let (lo, hi) = (spec.x0 - 10.0 * scale * root_t, spec.x0 + 10.0 * scale * root_t);

    if opts.check_derivatives {
        check_derivatives("drift", &spec.drift, lo, hi, n)?;
        check_derivatives("diffusion", &spec.diffusion, lo, hi, n)?;
    }
    let drift_bounds = effective_bounds("drift", &spec.drift, lo, hi, n)?;
    let diffusion_bounds = effective_bounds("diffusion", &spec.diffusion, lo, hi, n)?;
    let (sigma_inf, sigma_constant_sign) = inf_abs_estimate(&spec.diffusion, lo, hi, n);
    if opts.require_transform && (!(sigma_inf > 0.0) || !sigma_constant_sign) {
        return Err(Error::DegenerateDiffusion {
            inf_abs: sigma_inf,
            lo,
            hi,
        });
    }
    Ok(ValidatedSpec {
        spec: spec.clone(),
        drift_bounds,
        diffusion_bounds,
        sigma_inf,
        sigma_constant_sign,
        interval: (lo, hi),
    })
}

fn effective_bounds(
    name: &str,
    c: &Coefficient,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<CoefficientBounds> {
    let bound = |order: u8| -> Result<EffectiveBound> {
        let observed = sup_norm_estimate(c, order, lo, hi, n);
        if !observed.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name}: order-{order} values are not finite on the validation grid"
            )));
        }
        match c.declared_bounds.and_then(|b| b.get(order)) {
            Some(declared) if observed > declared * (1.0 + 1e-12) => Err(Error::DeclaredBoundExceeded {
                coefficient: name.to_string(),
                order,
                declared,
                observed,
            }),
            Some(declared) => Ok(EffectiveBound {
                value: declared,
                source: BoundSource::Declared,
            }),
            None => Ok(EffectiveBound {
                value: observed,
                source: BoundSource::GridEstimated,
            }),
        }
    };
    Ok(CoefficientBounds {
        value: bound(0)?,
        d1: bound(1)?,
        d2: bound(2)?,
    })
}

fn check_derivatives(name: &str, c: &Coefficient, lo: f64, hi: f64, n: usize) -> Result<()> {
    let h = FD_STEP;
    let orders: &[u8] = if c.has_consistent_d2() { &[1, 2] } else { &[1] };
    for x in uniform_points(lo, hi, n) {
        for &order in orders {
            let fd = (c.eval(x + h, order - 1) - c.eval(x - h, order - 1)) / (2.0 * h);
            let exact = c.eval(x, order);
            let scale = 1.0f64.max(c.eval(x, order - 1).abs()).max(exact.abs());
            let error = (fd - exact).abs();
            if !(error <= FD_TOLERANCE * scale) {
                return Err(Error::InconsistentDerivatives {
                    coefficient: format!("{name} ({})", c.name()),
                    order,
                    x,
                    error,
                });
            }
        }
    }
    Ok(())
}
