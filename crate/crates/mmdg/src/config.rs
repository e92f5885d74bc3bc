//! `key=value` run configuration with the boundary-layer experiment as default.

use std::fmt;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::forms::FormParams;
use crate::mesh::Diagonal;
use crate::scenarios::{LayerVariant, Scenario, SmoothMeshVelocity};
use crate::time::TimeLoopConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    BoundaryLayer,
    Smooth,
    Zero,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::BoundaryLayer => "boundary-layer",
            ScenarioKind::Smooth => "smooth",
            ScenarioKind::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    /// max(10, 2·C_T) with the measured trace constant.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialValue {
    /// J(0)-weighted L² projection.
    Projection,
    /// Lagrange interpolant.
    Interpolant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Coercivity,
    Inconsistency,
    Appendix,
    Apriori,
}

impl ProbeKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "coercivity" => ProbeKind::Coercivity,
            "inconsistency" => ProbeKind::Inconsistency,
            "appendix" => ProbeKind::Appendix,
            "apriori" => ProbeKind::Apriori,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Coercivity => "coercivity",
            ProbeKind::Inconsistency => "inconsistency",
            ProbeKind::Appendix => "appendix",
            ProbeKind::Apriori => "apriori",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    /// `literal`/`stream` for the layer, `still`/`full`/`layer` for the smooth case.
    pub variant: Option<String>,
    pub n: usize,
    pub p: usize,
    pub eps: f64,
    pub dt: f64,
    pub steps: usize,
    pub substeps: usize,
    pub theta: f64,
    pub alpha: Alpha,
    pub gamma0: f64,
    pub cadence: usize,
    pub diagonal: Diagonal,
    pub initial: InitialValue,
    /// Mesh sizes for `converge`.
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub output: PathBuf,
    pub probe: Option<ProbeKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::BoundaryLayer,
            variant: None,
            n: 9,
            p: 2,
            eps: 0.01,
            dt: 2f64.powi(-16),
            steps: 12,
            substeps: 2,
            theta: 1.0,
            alpha: Alpha::Auto,
            gamma0: 0.0,
            cadence: 12,
            diagonal: Diagonal::Uniform,
            initial: InitialValue::Projection,
            sizes: vec![4, 8, 16],
            seed: 1,
            output: PathBuf::from("mmdg-out"),
            probe: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "scenario", "variant", "n", "p", "eps", "dt", "steps", "substeps", "theta", "alpha", "gamma0", "cadence",
    "diagonal", "initial", "sizes", "seed", "output", "probe",
];

/// Reals accept decimal literals and exact powers `b^e` with integer b and e.
pub fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((b, e)) = s.split_once('^') {
        let b: i64 = b.trim().parse().ok()?;
        let e: i32 = e.trim().parse().ok()?;
        let v = (b as f64).powi(e);
        return v.is_finite().then_some(v);
    }
    let v: f64 = s.parse().ok()?;
    v.is_finite().then_some(v)
}

impl RunConfig {
    /// Parses a config file; `line` numbers in errors are 1-based.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { line: i + 1, msg: format!("expected key=value, got '{line}'") })?;
            cfg.set(k.trim(), v.trim()).map_err(|msg| Error::Config { line: i + 1, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides (command line); errors report line 0.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config { line: 0, msg: format!("expected key=value, got '{pair}'") })?;
            self.set(k.trim(), v.trim()).map_err(|msg| Error::Config { line: 0, msg })?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let real = || parse_real(value).ok_or_else(|| format!("{key}: '{value}' is not a number"));
        let int = || value.parse::<usize>().map_err(|_| format!("{key}: '{value}' is not a non-negative integer"));
        match key {
            "scenario" => {
                self.scenario = match value {
                    "boundary-layer" => ScenarioKind::BoundaryLayer,
                    "smooth" => ScenarioKind::Smooth,
                    "zero" => ScenarioKind::Zero,
                    _ => return Err(format!("unknown scenario '{value}'")),
                }
            }
            "variant" => self.variant = Some(value.to_string()),
            "n" => self.n = int()?,
            "p" => self.p = int()?,
            "eps" => self.eps = real()?,
            "dt" => self.dt = real()?,
            "steps" => self.steps = int()?,
            "substeps" => self.substeps = int()?,
            "theta" => self.theta = real()?,
            "alpha" => self.alpha = if value == "auto" { Alpha::Auto } else { Alpha::Value(real()?) },
            "gamma0" => self.gamma0 = real()?,
            "cadence" => self.cadence = int()?,
            "diagonal" => {
                self.diagonal = match value {
                    "uniform" => Diagonal::Uniform,
                    "alternating" => Diagonal::Alternating,
                    _ => return Err(format!("unknown diagonal '{value}'")),
                }
            }
            "initial" => {
                self.initial = match value {
                    "projection" => InitialValue::Projection,
                    "interpolant" => InitialValue::Interpolant,
                    _ => return Err(format!("unknown initial value '{value}'")),
                }
            }
            "sizes" => {
                self.sizes = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| format!("sizes: '{s}' is not an integer")))
                    .collect::<std::result::Result<_, _>>()?
            }
            "seed" => self.seed = value.parse().map_err(|_| format!("seed: '{value}' is not an integer"))?,
            "output" => self.output = PathBuf::from(value),
            "probe" => self.probe = Some(ProbeKind::parse(value).ok_or_else(|| format!("unknown probe '{value}'"))?),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if !(1..=4).contains(&self.p) {
            return Err(Error::UnsupportedDegree(self.p));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if self.steps == 0 || self.substeps == 0 || self.cadence == 0 {
            return bad("steps, substeps and cadence must be at least 1".into());
        }
        if self.theta != 1.0 && self.theta != -1.0 {
            return bad(format!("theta = {} must be 1 or -1", self.theta));
        }
        if let Alpha::Value(a) = self.alpha {
            if !(a > 0.0) {
                return bad(format!("alpha = {a} must be positive"));
            }
        }
        if !(self.gamma0 >= 0.0) {
            return bad(format!("gamma0 = {} must be non-negative", self.gamma0));
        }
        if self.sizes.iter().any(|&s| s < 2) || self.sizes.is_empty() {
            return bad("sizes must be a non-empty list of integers ≥ 2".into());
        }
        self.build_scenario().map(|_| ())
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        let v = self.variant.as_deref();
        let sc = match self.scenario {
            ScenarioKind::BoundaryLayer => match v.unwrap_or("literal") {
                "literal" => Scenario::boundary_layer(LayerVariant::Literal, self.eps),
                "stream" => Scenario::boundary_layer(LayerVariant::Stream, self.eps),
                o => return Err(Error::InvalidParameter(format!("boundary-layer variant '{o}' (literal|stream)"))),
            },
            ScenarioKind::Smooth => match v.unwrap_or("full") {
                "still" => Scenario::smooth(SmoothMeshVelocity::Zero, self.eps),
                "full" => Scenario::smooth(SmoothMeshVelocity::Full, self.eps),
                "layer" => Scenario::smooth(SmoothMeshVelocity::Layer, self.eps),
                o => return Err(Error::InvalidParameter(format!("smooth variant '{o}' (still|full|layer)"))),
            },
            ScenarioKind::Zero => Scenario::zero(self.eps),
        };
        Ok(sc.with_gamma0(self.gamma0))
    }

    pub fn alpha_value(&self, trace_constant: f64) -> f64 {
        match self.alpha {
            Alpha::Auto => (2.0 * trace_constant).max(10.0),
            Alpha::Value(a) => a,
        }
    }

    pub fn time_loop(&self, trace_constant: f64) -> TimeLoopConfig {
        TimeLoopConfig {
            dt: self.dt,
            steps: self.steps,
            substeps: self.substeps,
            form: FormParams {
                eps: self.eps,
                theta: self.theta,
                alpha: self.alpha_value(trace_constant),
                gamma0: self.gamma0,
            },
            cadence: self.cadence,
        }
    }
}

impl fmt::Display for RunConfig {
    /// Canonical `key=value` form; parsing it back gives the same config.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario={}", self.scenario.name())?;
        if let Some(v) = &self.variant {
            writeln!(f, "variant={v}")?;
        }
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "p={}", self.p)?;
        writeln!(f, "eps={:e}", self.eps)?;
        writeln!(f, "dt={:e}", self.dt)?;
        writeln!(f, "steps={}", self.steps)?;
        writeln!(f, "substeps={}", self.substeps)?;
        writeln!(f, "theta={}", self.theta)?;
        match self.alpha {
            Alpha::Auto => writeln!(f, "alpha=auto")?,
            Alpha::Value(a) => writeln!(f, "alpha={a:e}")?,
        }
        writeln!(f, "gamma0={:e}", self.gamma0)?;
        writeln!(f, "cadence={}", self.cadence)?;
        let diag = match self.diagonal {
            Diagonal::Uniform => "uniform",
            Diagonal::Alternating => "alternating",
        };
        writeln!(f, "diagonal={diag}")?;
        let init = match self.initial {
            InitialValue::Projection => "projection",
            InitialValue::Interpolant => "interpolant",
        };
        writeln!(f, "initial={init}")?;
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(f, "sizes={}", sizes.join(","))?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "output={}", self.output.display())?;
        if let Some(p) = self.probe {
            writeln!(f, "probe={}", p.name())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_experiment_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.n, c.eps, c.steps, c.substeps, c.theta, c.gamma0), (9, 0.01, 12, 2, 1.0, 0.0));
        assert_eq!(c.dt, 1.0 / 65536.0);
        assert_eq!(c.alpha, Alpha::Auto);
    }

    #[test]
    fn power_literal_is_exact() {
        let c = RunConfig::parse("dt=2^-16\n").unwrap();
        assert_eq!(c.dt.to_bits(), (1.0f64 / 65536.0).to_bits());
        assert_eq!(parse_real("10^-3"), Some(10f64.powi(-3)));
        assert_eq!(parse_real("2^x"), None);
    }

    #[test]
    fn theta_zero_is_rejected() {
        assert!(matches!(RunConfig::parse("theta=0"), Err(Error::InvalidParameter(_))));
        assert!(RunConfig::parse("theta=-1").is_ok());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::parse("# comment\nn=4\nbogus=1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = RunConfig::parse("n 4").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        let e = RunConfig::parse("n=-4").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let c = RunConfig::parse("\n  # header\nn = 6   # mesh\n\nalpha=25\nvariant=stream\n").unwrap();
        assert_eq!(c.n, 6);
        assert_eq!(c.alpha, Alpha::Value(25.0));
        assert_eq!(c.build_scenario().unwrap().name, "boundary-layer-stream");
    }

    #[test]
    fn unknown_variant_is_a_validation_error() {
        assert!(matches!(RunConfig::parse("variant=spiral"), Err(Error::InvalidParameter(_))));
        assert!(RunConfig::parse("scenario=smooth\nvariant=layer").is_ok());
    }

    #[test]
    fn overrides_apply_after_file() {
        let mut c = RunConfig::parse("n=4").unwrap();
        c.apply_overrides(["n=6", "probe=appendix"]).unwrap();
        assert_eq!((c.n, c.probe), (6, Some(ProbeKind::Appendix)));
        assert!(c.apply_overrides(["nope=1"]).is_err());
    }

    #[test]
    fn auto_alpha_uses_trace_constant() {
        let c = RunConfig::default();
        assert_eq!(c.alpha_value(3.0), 10.0);
        assert_eq!(c.alpha_value(19.5), 39.0);
    }

    proptest! {
        #[test]
        fn display_round_trips(n in 2usize..40, p in 1usize..=4, steps in 1usize..100, e in -20i32..0, theta in prop::bool::ANY,
                               eps in 1e-6f64..1.0, alt in prop::bool::ANY) {
            let c = RunConfig {
                n, p, steps, eps,
                dt: 2f64.powi(e),
                theta: if theta { 1.0 } else { -1.0 },
                diagonal: if alt { Diagonal::Alternating } else { Diagonal::Uniform },
                ..RunConfig::default()
            };
            prop_assert_eq!(RunConfig::parse(&c.to_string()).unwrap(), c);
        }
    }
}
