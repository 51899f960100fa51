//! Model files, CSV tables and atomic artifact writing.
//!
//! Model files are JSON documents tagged by `kind`:
//! `semi_markov`, `markov`, `discrete` or `synthesis`. Matrices are row-major
//! nested arrays and modes are numbered from 1. Any scalar may be a number,
//! a parameter name (`"a"`) or a scaled parameter (`"3*a"`, `"a*3"`), where
//! parameters are declared in the top-level `parameters` map and can be
//! overridden from the command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::analyzer::SweepTable;
use crate::error::{Error, Result};
use crate::model::{DiscreteModel, DwellLaw, JumpMixture, MarkovModel, SemiMarkovModel};
use crate::simulator::{EnsembleStats, SamplePath};
use crate::stabilizer::{GradientSamplingConfig, Plant, SynthesisProblem};

/// A number or a reference to a named parameter, optionally scaled.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Expr(String),
}

impl Scalar {
    fn eval(&self, params: &BTreeMap<String, f64>, field: &str) -> Result<f64> {
        let expr = match self {
            Scalar::Number(v) => return Ok(*v),
            Scalar::Expr(s) => s.trim(),
        };
        let lookup = |name: &str| {
            params
                .get(name)
                .copied()
                .ok_or_else(|| Error::Parse(format!("{field}: unknown parameter `{name}`")))
        };
        let factor = |s: &str| -> Result<f64> {
            let s = s.trim();
            match s.parse::<f64>() {
                Ok(v) => Ok(v),
                Err(_) if is_identifier(s) => lookup(s),
                Err(_) => Err(Error::Parse(format!("{field}: cannot read `{s}`"))),
            }
        };
        match expr.split_once('*') {
            Some((l, r)) => Ok(factor(l)? * factor(r)?),
            None => factor(expr),
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

type MatrixSpec = Vec<Vec<Scalar>>;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DwellSpec {
    Uniform {
        lo: Scalar,
        hi: Scalar,
    },
    TruncatedWeibull {
        shape: Scalar,
        scale: Scalar,
        tail_mass: Scalar,
    },
    Deterministic {
        value: Scalar,
    },
    TruncatedExponential {
        rate: Scalar,
        cap: Scalar,
    },
    Empirical {
        samples: Vec<Scalar>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDwell {
    pub from: usize,
    pub to: usize,
    pub law: DwellSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpComponent {
    #[serde(default = "one")]
    pub weight: Scalar,
    pub matrix: MatrixSpec,
}

fn one() -> Scalar {
    Scalar::Number(1.0)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeJump {
    pub from: usize,
    pub to: usize,
    pub components: Vec<JumpComponent>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiMarkovSpec {
    pub modes: Vec<MatrixSpec>,
    pub transition: MatrixSpec,
    pub dwell: Vec<EdgeDwell>,
    #[serde(default)]
    pub jumps: Vec<EdgeJump>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovSpec {
    pub modes: Vec<MatrixSpec>,
    pub generator: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSpec {
    pub dim: usize,
    pub transition: MatrixSpec,
    /// Edges without a map are unreachable (zero probability).
    pub maps: Vec<EdgeJump>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub c: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub gains: Vec<MatrixSpec>,
    pub generator: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub plants: Vec<PlantSpec>,
    pub gamma: Option<Scalar>,
    pub qbar: Option<Scalar>,
    /// Starting design; also the closed loop analyzed and simulated when the
    /// file is given to `analyze-markov` or `simulate`.
    pub initial: Option<DesignSpec>,
    pub optimizer: Option<GradientSamplingConfig>,
    pub gain_scale: Option<f64>,
    pub rate_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    SemiMarkov(SemiMarkovSpec),
    Markov(MarkovSpec),
    Discrete(DiscreteSpec),
    Synthesis(SynthesisSpec),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::SemiMarkov(_) => "semi_markov",
            ModelKind::Markov(_) => "markov",
            ModelKind::Discrete(_) => "discrete",
            ModelKind::Synthesis(_) => "synthesis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct Header {
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    initial_state: Option<Vec<f64>>,
    initial_mode: Option<usize>,
    #[serde(default)]
    description: Option<String>,
}

/// A parsed model file with its parameter bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub parameters: BTreeMap<String, f64>,
    pub initial_state: Option<Vec<f64>>,
    /// 1-based.
    pub initial_mode: Option<usize>,
    pub description: Option<String>,
}

const HEADER_KEYS: [&str; 4] = ["parameters", "initial_state", "initial_mode", "description"];

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Parse("model file must be a JSON object".into()))?;
        let mut header = serde_json::Map::new();
        for key in HEADER_KEYS {
            if let Some(v) = obj.remove(key) {
                header.insert(key.to_string(), v);
            }
        }
        let header: Header = serde_json::from_value(header.into())
            .map_err(|e| Error::Parse(format!("header: {e}")))?;
        let kind: ModelKind =
            serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        if header.initial_mode == Some(0) {
            return Err(Error::Parse(
                "initial_mode: modes are numbered from 1".into(),
            ));
        }
        Ok(Self {
            kind,
            parameters: header.parameters,
            initial_state: header.initial_state,
            initial_mode: header.initial_mode,
            description: header.description,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Rebinds a declared parameter.
    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<()> {
        match self.parameters.get_mut(name) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!(
                "model declares no parameter `{name}`"
            ))),
        }
    }

    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = self.clone();
        out.set_parameter(name, value)?;
        Ok(out)
    }

    /// Initial state (default all ones) and 0-based initial mode.
    pub fn initial_condition(&self, dim: usize) -> Result<(Vec<f64>, usize)> {
        let x0 = self.initial_state.clone().unwrap_or_else(|| vec![1.0; dim]);
        if x0.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x0.len(),
            });
        }
        Ok((x0, self.initial_mode.unwrap_or(1) - 1))
    }

    pub fn semi_markov(&self) -> Result<SemiMarkovModel> {
        let ModelKind::SemiMarkov(spec) = &self.kind else {
            return Err(self.wrong_kind("semi_markov"));
        };
        let p = &self.parameters;
        let modes = matrices(&spec.modes, p, "modes")?;
        let count = modes.len();
        let transition = matrix(&spec.transition, p, "transition")?;
        let mut model = SemiMarkovModel::new(modes, transition);
        for (k, e) in spec.dwell.iter().enumerate() {
            let (from, to) = edge(e.from, e.to, count, &format!("dwell[{k}]"))?;
            model = model.with_dwell(from, to, dwell_law(&e.law, p, &format!("dwell[{k}]"))?);
        }
        for (k, e) in spec.jumps.iter().enumerate() {
            let what = format!("jumps[{k}]");
            let (from, to) = edge(e.from, e.to, count, &what)?;
            model = model.with_jump(from, to, mixture(&e.components, p, &what)?);
        }
        Ok(model)
    }

    /// A Markov model, or the closed loop of a synthesis file's design.
    pub fn markov(&self) -> Result<MarkovModel> {
        let p = &self.parameters;
        match &self.kind {
            ModelKind::Markov(spec) => Ok(MarkovModel::new(
                matrices(&spec.modes, p, "modes")?,
                matrix(&spec.generator, p, "generator")?,
            )),
            ModelKind::Synthesis(spec) => {
                let problem = self.synthesis()?;
                let design = spec.initial.as_ref().ok_or_else(|| {
                    Error::Parse("synthesis file has no `initial` design to close the loop".into())
                })?;
                let gains = matrices(&design.gains, p, "initial.gains")?;
                problem.validate()?;
                Ok(MarkovModel::new(
                    problem.closed_loop_modes(&gains),
                    matrix(&design.generator, p, "initial.generator")?,
                ))
            }
            _ => Err(self.wrong_kind("markov")),
        }
    }

    pub fn discrete(&self) -> Result<DiscreteModel> {
        let ModelKind::Discrete(spec) = &self.kind else {
            return Err(self.wrong_kind("discrete"));
        };
        let p = &self.parameters;
        let transition = matrix(&spec.transition, p, "transition")?;
        let count = transition.nrows();
        let mut model = DiscreteModel::new(spec.dim, transition);
        for (k, e) in spec.maps.iter().enumerate() {
            let what = format!("maps[{k}]");
            let (from, to) = edge(e.from, e.to, count, &what)?;
            model = model.with_map(from, to, mixture(&e.components, p, &what)?);
        }
        Ok(model)
    }

    pub fn synthesis(&self) -> Result<SynthesisProblem> {
        let ModelKind::Synthesis(spec) = &self.kind else {
            return Err(self.wrong_kind("synthesis"));
        };
        let p = &self.parameters;
        let plants = spec
            .plants
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(Plant {
                    a: matrix(&s.a, p, &format!("plants[{i}].a"))?,
                    b: matrix(&s.b, p, &format!("plants[{i}].b"))?,
                    c: matrix(&s.c, p, &format!("plants[{i}].c"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut problem = SynthesisProblem::new(plants);
        if let Some(g) = &spec.gamma {
            problem.gamma = g.eval(p, "gamma")?;
        }
        if let Some(q) = &spec.qbar {
            problem.rate_cap = Some(q.eval(p, "qbar")?);
        }
        if let Some(cfg) = spec.optimizer {
            let samples = problem.optimizer.samples;
            problem.optimizer = cfg;
            problem.optimizer.samples = cfg.samples.or(samples);
        }
        if let Some(s) = spec.gain_scale {
            problem.gain_scale = s;
        }
        if let Some(s) = spec.rate_scale {
            problem.rate_scale = s;
        }
        if let Some(d) = &spec.initial {
            problem.initial = Some((
                matrices(&d.gains, p, "initial.gains")?,
                matrix(&d.generator, p, "initial.generator")?,
            ));
        }
        Ok(problem)
    }

    fn wrong_kind(&self, wanted: &str) -> Error {
        Error::InvalidArgument(format!(
            "expected a `{wanted}` model file, got `{}`",
            self.kind.name()
        ))
    }
}

fn edge(from: usize, to: usize, count: usize, what: &str) -> Result<(usize, usize)> {
    if from == 0 || to == 0 || from > count || to > count {
        return Err(Error::Parse(format!(
            "{what}: edge {from} -> {to} outside modes 1..={count}"
        )));
    }
    Ok((from - 1, to - 1))
}

fn matrix(spec: &MatrixSpec, p: &BTreeMap<String, f64>, what: &str) -> Result<DMatrix<f64>> {
    let rows = spec.len();
    let cols = spec.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::Parse(format!("{what}: empty matrix")));
    }
    if let Some(r) = spec.iter().position(|r| r.len() != cols) {
        return Err(Error::Parse(format!(
            "{what}: row {} has {} entries, expected {cols}",
            r + 1,
            spec[r].len()
        )));
    }
    let mut out = DMatrix::zeros(rows, cols);
    for (i, row) in spec.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = v.eval(p, &format!("{what}[{}][{}]", i + 1, j + 1))?;
        }
    }
    Ok(out)
}

fn matrices(
    specs: &[MatrixSpec],
    p: &BTreeMap<String, f64>,
    what: &str,
) -> Result<Vec<DMatrix<f64>>> {
    if specs.is_empty() {
        return Err(Error::Parse(format!(
            "{what}: at least one matrix required"
        )));
    }
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| matrix(s, p, &format!("{what}[{}]", i + 1)))
        .collect()
}

fn mixture(parts: &[JumpComponent], p: &BTreeMap<String, f64>, what: &str) -> Result<JumpMixture> {
    parts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let w = c
                .weight
                .eval(p, &format!("{what}.components[{k}].weight"))?;
            Ok((
                w,
                matrix(&c.matrix, p, &format!("{what}.components[{k}].matrix"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map(JumpMixture::new)
}

fn dwell_law(spec: &DwellSpec, p: &BTreeMap<String, f64>, what: &str) -> Result<DwellLaw> {
    let ev = |s: &Scalar, f: &str| s.eval(p, &format!("{what}.{f}"));
    Ok(match spec {
        DwellSpec::Uniform { lo, hi } => DwellLaw::Uniform {
            lo: ev(lo, "lo")?,
            hi: ev(hi, "hi")?,
        },
        DwellSpec::TruncatedWeibull {
            shape,
            scale,
            tail_mass,
        } => DwellLaw::TruncatedWeibull {
            shape: ev(shape, "shape")?,
            scale: ev(scale, "scale")?,
            tail_mass: ev(tail_mass, "tail_mass")?,
        },
        DwellSpec::Deterministic { value } => DwellLaw::Deterministic {
            value: ev(value, "value")?,
        },
        DwellSpec::TruncatedExponential { rate, cap } => DwellLaw::TruncatedExponential {
            rate: ev(rate, "rate")?,
            cap: ev(cap, "cap")?,
        },
        DwellSpec::Empirical { samples } => DwellLaw::empirical(
            samples
                .iter()
                .map(|s| ev(s, "samples"))
                .collect::<Result<Vec<_>>>()?,
        ),
    })
}

/// `name=grid(lo,hi,step)` as given on the command line.
pub fn parse_grid_spec(spec: &str) -> Result<(String, f64, f64, f64)> {
    let bad = || Error::InvalidArgument(format!("expected name=grid(lo,hi,step), got `{spec}`"));
    let (name, rest) = spec.split_once('=').ok_or_else(bad)?;
    let inner = rest
        .trim()
        .strip_prefix("grid(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(bad)?;
    let nums = inner
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let [lo, hi, step] = nums[..] else {
        return Err(bad());
    };
    let name = name.trim();
    if !is_identifier(name) {
        return Err(bad());
    }
    Ok((name.to_string(), lo, hi, step))
}

/// Float with 17 significant digits (exact round trip).
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory and
/// a rename, so readers never observe a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut builder = tempfile::Builder::new();
    // Temp files default to owner-only; artifacts should get ordinary permissions.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// `t,x1..xn,mode` on the dense grid (mode 1-based).
pub fn path_csv(path: &SamplePath) -> String {
    let n = path.states.first().map_or(0, |x| x.len());
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push_str(",mode\n");
    for ((t, x), mode) in path.times.iter().zip(&path.states).zip(&path.grid_modes) {
        out.push_str(&fmt_f64(*t));
        for v in x.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        let _ = writeln!(out, ",{}", mode + 1);
    }
    out
}

/// `t,mean,stderr[,exact]`; `exact` is the propagated moment when given.
pub fn ensemble_csv(stats: &EnsembleStats, exact: Option<&[f64]>) -> String {
    let mut out = String::from("t,mean,stderr");
    if exact.is_some() {
        out.push_str(",exact");
    }
    out.push('\n');
    for (k, t) in stats.times.iter().enumerate() {
        let _ = write!(
            out,
            "{},{},{}",
            fmt_f64(*t),
            fmt_f64(stats.mean[k]),
            fmt_f64(stats.stderr[k])
        );
        if let Some(e) = exact {
            let _ = write!(out, ",{}", fmt_f64(e[k]));
        }
        out.push('\n');
    }
    out
}

/// `<parameter>,indicator,normalized_indicator,margin,verdict`; failed
/// points carry empty numeric fields and the error text as verdict.
pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = format!(
        "{},indicator,normalized_indicator,margin,verdict\n",
        table.parameter
    );
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for p in &table.points {
        let verdict = match (&p.verdict, &p.error) {
            (Some(v), _) => v.as_str().to_string(),
            (None, Some(e)) => format!("\"error: {}\"", e.replace('"', "'")),
            (None, None) => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(p.value),
            opt(p.indicator),
            opt(p.normalized_indicator),
            opt(p.margin),
            verdict
        );
    }
    out
}

/// `step,norm1,v1..vd` for a sequence of moment vectors; `step` is the
/// switch index or the time.
pub fn moments_csv(index_name: &str, index: &[f64], moments: &[DVector<f64>]) -> String {
    let d = moments.first().map_or(0, |v| v.len());
    let mut out = format!("{index_name},norm1");
    for i in 1..=d {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for (s, v) in index.iter().zip(moments) {
        out.push_str(&fmt_f64(*s));
        out.push(',');
        out.push_str(&fmt_f64(v.iter().map(|x| x.abs()).sum()));
        for x in v.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        out.push('\n');
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("cannot serialize result: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    const FAILURE: &str = r#"{
        "kind": "semi_markov",
        "parameters": {"a": 0.9},
        "modes": [[[-2, 0.2], [0.1, -2.3]], [[2.1, 0.9], [0.2, 0.3]]],
        "transition": [[0, 1], [1, 0]],
        "dwell": [
            {"from": 1, "to": 2, "law": {"type": "truncated_weibull", "shape": 10, "scale": 3, "tail_mass": 0.1}},
            {"from": 2, "to": 1, "law": {"type": "uniform", "lo": "a", "hi": "3*a"}}
        ],
        "initial_state": [1, 1]
    }"#;

    #[test]
    fn failure_model_round_trip() {
        let f = ModelFile::parse(FAILURE).unwrap();
        assert_eq!(f.semi_markov().unwrap(), catalog::controller_failure(0.9));
        let g = f.with_parameter("a", 1.1).unwrap();
        assert_eq!(g.semi_markov().unwrap(), catalog::controller_failure(1.1));
        assert!(f.with_parameter("b", 1.0).is_err());
        assert_eq!(f.initial_condition(2).unwrap(), (vec![1.0, 1.0], 0));
    }

    #[test]
    fn scalar_expressions() {
        let mut p = BTreeMap::new();
        p.insert("a".to_string(), 2.0);
        let ev = |s: &str| Scalar::Expr(s.into()).eval(&p, "x");
        assert_eq!(ev("a").unwrap(), 2.0);
        assert_eq!(ev("3*a").unwrap(), 6.0);
        assert_eq!(ev("a * 0.5").unwrap(), 1.0);
        assert_eq!(ev("1.5").unwrap(), 1.5);
        assert!(ev("b").is_err());
        assert!(ev("a+1").is_err());
    }

    #[test]
    fn malformed_files_report_location() {
        let e = ModelFile::parse("{\n \"kind\": \"markov\",\n \"modes\": [[[1]]],\n").unwrap_err();
        assert!(matches!(&e, Error::Parse(m) if m.contains("line")), "{e}");
        let e = ModelFile::parse(
            r#"{"kind": "markov", "modes": [[[1]]], "generator": [[0]], "typo": 1}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("typo"), "{e}");
        let e =
            ModelFile::parse(r#"{"kind": "markov", "modes": [[[1, 2], [3]]], "generator": [[0]]}"#)
                .unwrap()
                .markov()
                .unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
        let e = ModelFile::parse(r#"{"kind": "wormhole"}"#).unwrap_err();
        assert!(matches!(e, Error::Parse(_)));
    }

    #[test]
    fn synthesis_file_closes_the_loop() {
        let text = r#"{
            "kind": "synthesis",
            "plants": [
                {"a": [[0, 0.2], [0.9, 0.9]], "b": [[0.6], [0.3]], "c": [[0.3, 0.1]]},
                {"a": [[0.1, 0.4], [0.6, -0.3]], "b": [[0.2], [0.8]], "c": [[-0.8, 1]]}
            ],
            "qbar": 2,
            "initial": {"gains": [[[-3.3308]], [[-1.9998]]], "generator": [[-1.9997, 1.9997], [1.9817, -1.9817]]}
        }"#;
        let f = ModelFile::parse(text).unwrap();
        let problem = f.synthesis().unwrap();
        assert_eq!(problem.rate_cap, Some(2.0));
        let expected = catalog::closed_loop(
            &catalog::two_mode_feedback_problem(),
            &catalog::slow_switching_design(),
        );
        assert_eq!(f.markov().unwrap(), expected);
        assert!(f.semi_markov().is_err());
    }

    #[test]
    fn grid_specs() {
        assert_eq!(
            parse_grid_spec("a=grid(0.8, 1.2, 0.01)").unwrap(),
            ("a".to_string(), 0.8, 1.2, 0.01)
        );
        assert!(parse_grid_spec("a=0.8").is_err());
        assert!(parse_grid_spec("a=grid(1,2)").is_err());
    }

    #[test]
    fn floats_round_trip_with_17_digits() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e308, 0.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
        }
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
