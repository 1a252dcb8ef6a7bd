//! Seeded sampling of multiplicative load factors.
//!
//! A sampling spec is a CSV table with the header `bus,quantity,dist,a,b`:
//!
//! ```text
//! bus,quantity,dist,a,b
//! *,p,normal,1.0,0.1
//! 7,q,uniform,0.8,1.2
//! 9,p,fixed,1.5,
//! ```
//!
//! `bus` is a bus id or `*` for every bus with a nonzero load of that
//! quantity; `quantity` is `p` or `q`. Every (bus, quantity) pair draws its
//! own factor per task, which multiplies the case load. A later row for the
//! same pair replaces an earlier one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Uniform};
use thiserror::Error;

use crate::grid::{GridCase, Quantity, ScenarioColumn, ScenarioTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("sampling spec line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid distribution parameters: {0}")]
    Parameters(String),
    #[error("sampling spec is not valid CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Fixed(f64),
}

impl Distribution {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let ok = match *self {
            Distribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            Distribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Distribution::Fixed(v) => v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SamplingError::Parameters(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusSelector {
    All,
    Bus(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEntry {
    pub bus: BusSelector,
    pub quantity: Quantity,
    pub dist: Distribution,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplingSpec {
    pub entries: Vec<SampleEntry>,
}

impl SamplingSpec {
    pub fn from_csv(text: &str) -> Result<Self, SamplingError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| SamplingError::Csv(e.to_string()))?;
            let line = i + 2;
            let err = |message: String| SamplingError::Line { line, message };
            let field = |k: usize| record.get(k).unwrap_or("");
            let bus = match field(0) {
                "*" => BusSelector::All,
                s => BusSelector::Bus(s.parse().map_err(|_| err(format!("bad bus '{s}'")))?),
            };
            let quantity = match field(1).to_ascii_lowercase().as_str() {
                "p" => Quantity::P,
                "q" => Quantity::Q,
                other => return Err(err(format!("quantity must be p or q, got '{other}'"))),
            };
            let num = |k: usize| -> Result<f64, SamplingError> {
                field(k)
                    .parse::<f64>()
                    .map_err(|_| err(format!("bad number '{}'", field(k))))
            };
            let dist = match field(2).to_ascii_lowercase().as_str() {
                "normal" => Distribution::Normal {
                    mean: num(3)?,
                    sd: num(4)?,
                },
                "uniform" => Distribution::Uniform {
                    lo: num(3)?,
                    hi: num(4)?,
                },
                "fixed" => Distribution::Fixed(num(3)?),
                other => return Err(err(format!("unknown distribution '{other}'"))),
            };
            dist.validate().map_err(|e| err(e.to_string()))?;
            entries.push(SampleEntry {
                bus,
                quantity,
                dist,
            });
        }
        Ok(Self { entries })
    }

    /// (column, distribution) pairs after expanding `*` against the case.
    fn columns(
        &self,
        case: &GridCase,
    ) -> Result<Vec<(ScenarioColumn, Distribution)>, SamplingError> {
        let mut out: Vec<(ScenarioColumn, Distribution)> = Vec::new();
        for e in &self.entries {
            e.dist.validate()?;
            let buses: Vec<u32> = match e.bus {
                BusSelector::Bus(id) => {
                    if case.bus_index(id).is_none() {
                        return Err(SamplingError::Parameters(format!("unknown bus {id}")));
                    }
                    vec![id]
                }
                BusSelector::All => case
                    .buses()
                    .iter()
                    .filter(|b| match e.quantity {
                        Quantity::P => b.p_load != 0.0,
                        _ => b.q_load != 0.0,
                    })
                    .map(|b| b.id)
                    .collect(),
            };
            for bus in buses {
                let col = ScenarioColumn {
                    bus,
                    quantity: e.quantity,
                };
                match out.iter_mut().find(|(c, _)| *c == col) {
                    Some(slot) => slot.1 = e.dist,
                    None => out.push((col, e.dist)),
                }
            }
        }
        Ok(out)
    }
}

/// Draws `n_tasks` rows of factors, one per column, task by task.
pub fn sample_factors(
    dists: &[Distribution],
    n_tasks: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SamplingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    enum Sampler {
        Normal(Normal<f64>),
        Uniform(Uniform<f64>),
        Fixed(f64),
    }
    let samplers: Vec<Sampler> = dists
        .iter()
        .map(|d| {
            d.validate()?;
            Ok(match *d {
                Distribution::Normal { mean, sd } => Sampler::Normal(
                    Normal::new(mean, sd).map_err(|e| SamplingError::Parameters(e.to_string()))?,
                ),
                Distribution::Uniform { lo, hi } if lo < hi => Sampler::Uniform(
                    Uniform::new_inclusive(lo, hi)
                        .map_err(|e| SamplingError::Parameters(e.to_string()))?,
                ),
                Distribution::Uniform { lo, .. } => Sampler::Fixed(lo),
                Distribution::Fixed(v) => Sampler::Fixed(v),
            })
        })
        .collect::<Result<_, SamplingError>>()?;
    Ok((0..n_tasks)
        .map(|_| {
            samplers
                .iter()
                .map(|s| match s {
                    Sampler::Normal(d) => d.sample(&mut rng),
                    Sampler::Uniform(d) => d.sample(&mut rng),
                    Sampler::Fixed(v) => *v,
                })
                .collect()
        })
        .collect())
}

/// Scenario table of sampled loads: each column holds factor times the
/// case load of its bus.
pub fn sample_montecarlo(
    spec: &SamplingSpec,
    case: &GridCase,
    n_tasks: usize,
    seed: u64,
) -> Result<ScenarioTable, SamplingError> {
    let columns = spec.columns(case)?;
    let dists: Vec<Distribution> = columns.iter().map(|(_, d)| *d).collect();
    let base: Vec<f64> = columns
        .iter()
        .map(|(c, _)| {
            let bus = &case.buses()[case.bus_index(c.bus).expect("checked in columns")];
            match c.quantity {
                Quantity::P => bus.p_load,
                _ => bus.q_load,
            }
        })
        .collect();
    let factors = sample_factors(&dists, n_tasks, seed)?;
    let rows = factors
        .into_iter()
        .map(|f| f.iter().zip(&base).map(|(a, b)| a * b).collect())
        .collect();
    ScenarioTable::new(columns.into_iter().map(|(c, _)| c).collect(), rows)
        .map_err(|e| SamplingError::Parameters(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_gives_identical_tasks() {
        let f =
            sample_factors(&[Distribution::Fixed(1.1), Distribution::Fixed(0.9)], 5, 1).unwrap();
        assert!(f.iter().all(|row| row == &vec![1.1, 0.9]));
    }

    #[test]
    fn same_seed_same_draws() {
        let d = [
            Distribution::Normal { mean: 1.0, sd: 0.1 },
            Distribution::Uniform { lo: 0.5, hi: 1.5 },
        ];
        assert_eq!(
            sample_factors(&d, 50, 42).unwrap(),
            sample_factors(&d, 50, 42).unwrap()
        );
        assert_ne!(
            sample_factors(&d, 50, 42).unwrap(),
            sample_factors(&d, 50, 43).unwrap()
        );
    }

    #[test]
    fn normal_sample_mean() {
        // 3 sigma / sqrt(n) = 0.003 for sd 0.1 and n = 10_000
        let f = sample_factors(&[Distribution::Normal { mean: 1.0, sd: 0.1 }], 10_000, 7).unwrap();
        let mean = f.iter().map(|r| r[0]).sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Distribution::Normal {
            mean: 1.0,
            sd: -0.1
        }
        .validate()
        .is_err());
        assert!(Distribution::Uniform { lo: 2.0, hi: 1.0 }
            .validate()
            .is_err());
        assert!(SamplingSpec::from_csv("bus,quantity,dist,a,b\n1,p,normal,1,-1\n").is_err());
        assert!(SamplingSpec::from_csv("bus,quantity,dist,a,b\n1,x,fixed,1,\n").is_err());
    }

    #[test]
    fn parses_spec() {
        let s = SamplingSpec::from_csv(
            "bus,quantity,dist,a,b\n*,p,normal,1.0,0.1\n7,q,uniform,0.8,1.2\n9,p,fixed,1.5,\n",
        )
        .unwrap();
        assert_eq!(s.entries.len(), 3);
        assert_eq!(s.entries[2].dist, Distribution::Fixed(1.5));
        assert_eq!(s.entries[0].bus, BusSelector::All);
    }
}
