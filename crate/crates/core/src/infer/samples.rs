use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerMeta {
    pub model: String,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Post-burn-in acceptance rate per Metropolis block.
    pub acceptance: BTreeMap<String, f64>,
    /// Final proposal scale per Metropolis block.
    pub proposal_scale: BTreeMap<String, f64>,
}

/// Retained MCMC draws, one row per kept iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub log_lik: Vec<f64>,
    pub meta: SamplerMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

/// Linear-interpolated quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn summarize(name: &str, xs: &[f64]) -> ParamSummary {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    ParamSummary {
        name: name.to_string(),
        mean: mean(xs),
        sd: if xs.len() > 1 { variance(xs).sqrt() } else { 0.0 },
        q025: quantile_sorted(&sorted, 0.025),
        q500: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.index_of(name)?;
        Some(self.draws.iter().map(|row| row[k]).collect())
    }

    pub fn column_at(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|row| row[k]).collect()
    }

    /// Component-wise posterior means.
    pub fn means(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        let mut acc = vec![0.0; self.names.len()];
        for row in &self.draws {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / n).collect()
    }

    pub fn summary(&self, name: &str) -> Option<ParamSummary> {
        self.column(name).map(|c| summarize(name, &c))
    }

    pub fn summaries(&self) -> Vec<ParamSummary> {
        (0..self.names.len())
            .map(|k| summarize(&self.names[k], &self.column_at(k)))
            .collect()
    }

    /// Concatenate chains of the same model (metadata from the first).
    pub fn concat(chains: Vec<PosteriorSamples>) -> Result<PosteriorSamples> {
        let mut it = chains.into_iter();
        let mut out = it
            .next()
            .ok_or_else(|| Error::InvalidData("no chains to concatenate".into()))?;
        for c in it {
            if c.names != out.names {
                return Err(Error::InvalidData("chains have different parameters".into()));
            }
            out.draws.extend(c.draws);
            out.log_lik.extend(c.log_lik);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_lik.len() != self.draws.len() {
            return Err(Error::InvalidData("log-likelihood length differs from draw count".into()));
        }
        for row in &self.draws {
            if row.len() != self.names.len() {
                return Err(Error::InvalidData("ragged draw matrix".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("posterior draw".into()));
            }
        }
        Ok(())
    }

    /// One column per parameter plus a trailing `log_lik` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.names.clone();
        header.push("log_lik".into());
        w.write_record(&header)?;
        for (row, ll) in self.draws.iter().zip(&self.log_lik) {
            let rec: Vec<String> = row.iter().chain(std::iter::once(ll)).map(|v| format!("{v}")).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); metadata is supplied by the caller.
    pub fn read_csv<R: Read>(input: R, meta: SamplerMeta) -> Result<PosteriorSamples> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.last().map(String::as_str) != Some("log_lik") {
            return Err(Error::InvalidData("samples CSV must end with a log_lik column".into()));
        }
        let names = header[..header.len() - 1].to_vec();
        let mut draws = Vec::new();
        let mut log_lik = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    file: "samples".into(),
                    line: line + 2,
                    message: e.to_string(),
                })?;
            log_lik.push(*vals.last().unwrap());
            draws.push(vals[..vals.len() - 1].to_vec());
        }
        let s = PosteriorSamples {
            names,
            draws,
            log_lik,
            meta,
        };
        s.validate()?;
        Ok(s)
    }
}

/// Keeps the sampler loops free of retention bookkeeping.
pub(crate) struct Recorder {
    burn_in: usize,
    thin: usize,
    pub draws: Vec<Vec<f64>>,
    pub log_lik: Vec<f64>,
}

impl Recorder {
    pub fn new(iterations: usize, burn_in: usize, thin: usize) -> Self {
        let cap = iterations.saturating_sub(burn_in) / thin.max(1) + 1;
        Recorder {
            burn_in,
            thin: thin.max(1),
            draws: Vec::with_capacity(cap),
            log_lik: Vec::with_capacity(cap),
        }
    }

    pub fn keeps(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in) % self.thin == 0
    }

    pub fn push(&mut self, row: Vec<f64>, ll: f64) {
        self.draws.push(row);
        self.log_lik.push(ll);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> SamplerMeta {
        SamplerMeta {
            model: "test".into(),
            seed: 0,
            iterations: 3,
            burn_in: 0,
            thin: 1,
            acceptance: BTreeMap::new(),
            proposal_scale: BTreeMap::new(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = PosteriorSamples {
            names: vec!["a".into(), "b".into()],
            draws: vec![vec![0.1, -2.0], vec![1e-300, 3.5]],
            log_lik: vec![-1.0, -2.25],
            meta: meta(),
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = PosteriorSamples::read_csv(&buf[..], meta()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn quantiles() {
        let xs: Vec<f64> = (0..=100).map(f64::from).collect();
        let s = summarize("x", &xs);
        assert_eq!(s.q025, 2.5);
        assert_eq!(s.q500, 50.0);
        assert_eq!(s.q975, 97.5);
        assert_eq!(s.mean, 50.0);
    }
}
