//! Declarative run configuration: a sectioned key=value (TOML) file plus
//! flag overrides, with flags winning. The resolved configuration is
//! echoed verbatim into every meta sidecar, so a run is reproducible from
//! its sidecar alone (`--config run.meta.json` is accepted as well).

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dips_core::stats::{Normalization, StatKind, StatisticSpec};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub statistic: StatisticSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub envelope: EnvelopeSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticSection {
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub normalization: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub num_samples: Option<u64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// Explicit grid; wins over `z_max`/`z_points`.
    pub z_grid: Option<Vec<f64>>,
    /// Upper end of the automatic grid; `None` means the range cap
    /// `n^{1/6}`.
    pub z_max: Option<f64>,
    pub z_points: Option<usize>,
    /// Allow grid points beyond the moderate-deviation range cap.
    pub allow_beyond_range: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSection {
    pub theta: Option<f64>,
    pub delta: Option<f64>,
    pub c1: Option<f64>,
    pub delta1_c: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub out: Option<String>,
}

impl RunConfig {
    pub fn load(path: &str) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path))?;
        let trimmed = text.trim_start();
        let cfg: RunConfig = if trimmed.starts_with('{') {
            // accept both a bare RunConfig and a simulate meta sidecar
            // (whose resolved config sits under the "config" key)
            let value: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing JSON config {}", path))?;
            let body = match value.get("config") {
                Some(inner) => inner.clone(),
                None => value,
            };
            serde_json::from_value(body)
                .with_context(|| format!("interpreting JSON config {}", path))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing TOML config {}", path))?
        };
        Ok(cfg)
    }

    /// Later (flag-level) values override the file values.
    pub fn merge_over(mut self, over: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($sect:ident . $field:ident),* $(,)?) => {
                $(if over.$sect.$field.is_some() { self.$sect.$field = over.$sect.$field; })*
            };
        }
        take!(
            statistic.kind, statistic.n, statistic.n1, statistic.n2, statistic.normalization,
            simulation.num_samples, simulation.seed, simulation.workers,
            simulation.z_grid, simulation.z_max, simulation.z_points,
            simulation.allow_beyond_range,
            envelope.theta, envelope.delta, envelope.c1, envelope.delta1_c,
            output.out,
        );
        self
    }

    /// Validate and resolve the statistic spec, reporting every problem.
    pub fn statistic_spec(&self) -> anyhow::Result<StatisticSpec> {
        let mut problems = Vec::new();
        let kind = match self.statistic.kind.as_deref() {
            Some(k) => match parse_kind(k) {
                Ok(k) => Some(k),
                Err(e) => {
                    problems.push(e);
                    None
                }
            },
            None => {
                problems.push("statistic.kind is required".to_string());
                None
            }
        };
        let normalization = match self.statistic.normalization.as_deref() {
            None => Normalization::VarianceExact,
            Some(s) => match parse_normalization(s) {
                Ok(v) => v,
                Err(e) => {
                    problems.push(e);
                    Normalization::VarianceExact
                }
            },
        };
        let spec = match kind {
            Some(StatKind::Mww) => {
                let n1 = self.statistic.n1;
                let n2 = self.statistic.n2;
                match (n1, n2, self.statistic.n) {
                    (Some(a), Some(b), _) => StatisticSpec::mww(a, b, normalization),
                    (None, None, Some(n)) => StatisticSpec::new(StatKind::Mww, n, normalization),
                    _ => {
                        problems.push("mww needs n1 and n2 (or n alone for an even split)".into());
                        StatisticSpec::mww(1, 1, normalization)
                    }
                }
            }
            Some(k) => match self.statistic.n {
                Some(n) => StatisticSpec::new(k, n, normalization),
                None => {
                    problems.push("statistic.n is required".into());
                    StatisticSpec::new(k, 2, normalization)
                }
            },
            None => StatisticSpec::new(StatKind::Descents, 2, normalization),
        };
        let spec = match spec {
            Ok(s) => s,
            Err(e) => {
                problems.push(e.to_string());
                StatisticSpec::new(StatKind::Descents, 2, normalization).unwrap()
            }
        };
        if !problems.is_empty() {
            bail!("invalid configuration:\n  - {}", problems.join("\n  - "));
        }
        Ok(spec)
    }
}

pub fn parse_kind(s: &str) -> Result<StatKind, String> {
    match s {
        "descents" => Ok(StatKind::Descents),
        "inversions" => Ok(StatKind::Inversions),
        "mww" => Ok(StatKind::Mww),
        "chatterjee" | "chatterjee_oscillation" => Ok(StatKind::ChatterjeeOscillation),
        other => Err(format!(
            "unknown statistic '{}' (expected descents|inversions|mww|chatterjee)",
            other
        )),
    }
}

pub fn parse_normalization(s: &str) -> Result<Normalization, String> {
    match s {
        "paper_literal" | "paper-literal" => Ok(Normalization::PaperLiteral),
        "variance_exact" | "variance-exact" => Ok(Normalization::VarianceExact),
        other => Err(format!(
            "unknown normalization '{}' (expected paper_literal|variance_exact)",
            other
        )),
    }
}
