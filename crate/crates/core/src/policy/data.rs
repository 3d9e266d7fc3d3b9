//! Labelled samples and the aggregated training set.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::TrackId;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::simulator::EgoState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Source {
    Original,
    PseudoExpert { iteration: usize },
}

/// Enough of the scene to rebuild the sample's observation grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleContext {
    pub ego_track: TrackId,
    pub ego: EgoState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub targets: Vec<Point2>,
    pub source: Source,
    /// How many copies of this sample the training set holds.
    #[serde(default = "one")]
    pub multiplicity: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<SampleContext>,
}

fn one() -> u32 {
    1
}

/// Samples sharing one prediction shape (`n` waypoints every `period` s).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub period: f64,
    samples: Vec<LabeledSample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    period: f64,
}

impl Dataset {
    pub fn new(n: usize, period: f64) -> Result<Self> {
        if n == 0 || !(period > 0.0) {
            return Err(Error::Validation(format!(
                "dataset needs n >= 1 and a positive period, got n = {n}, period = {period}"
            )));
        }
        Ok(Self {
            n,
            period,
            samples: Vec::new(),
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total copies counting multiplicities.
    pub fn weighted_len(&self) -> u64 {
        self.samples.iter().map(|s| s.multiplicity as u64).sum()
    }

    pub fn push(&mut self, sample: LabeledSample) -> Result<()> {
        if sample.targets.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} targets, dataset expects {}",
                sample.targets.len(),
                self.n
            )));
        }
        if sample.features.iter().any(|f| !f.is_finite()) || sample.targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("sample contains non-finite values".into()));
        }
        if let Some(first) = self.samples.first() {
            if first.features.len() != sample.features.len() {
                return Err(Error::ShapeMismatch(format!(
                    "sample has {} features, dataset has {}",
                    sample.features.len(),
                    first.features.len()
                )));
            }
        }
        if sample.multiplicity == 0 {
            return Err(Error::Validation("sample multiplicity must be at least 1".into()));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn extend(&mut self, samples: impl IntoIterator<Item = LabeledSample>) -> Result<()> {
        for s in samples {
            self.push(s)?;
        }
        Ok(())
    }

    /// First line holds the shape; each further line is one sample.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &Header { n: self.n, period: self.period })?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            file: "dataset".into(),
            line,
            message: e.to_string(),
        };
        let header = loop {
            match lines.next() {
                None => return Err(Error::Validation("dataset file is empty".into())),
                Some((i, l)) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        break serde_json::from_str::<Header>(&l).map_err(|e| parse_err(i + 1, e))?;
                    }
                }
            }
        };
        let mut ds = Dataset::new(header.n, header.period)?;
        for (i, l) in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            let s: LabeledSample = serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e))?;
            ds.push(s).map_err(|e| Error::Parse {
                file: "dataset".into(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(v: f64, source: Source) -> LabeledSample {
        LabeledSample {
            features: vec![v, 2.0 * v],
            targets: vec![Point2::new(v, 1.0), Point2::new(0.1 + 0.2, 2.0)],
            source,
            multiplicity: 3,
            context: Some(SampleContext {
                ego_track: 4,
                ego: EgoState { pos: Point2::new(1.0, -2.0), heading: 0.3, speed: 4.0, t: 1.5 },
            }),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let mut ds = Dataset::new(2, 0.3).unwrap();
        ds.push(sample(1.0 / 3.0, Source::Original)).unwrap();
        ds.push(sample(-7.25, Source::PseudoExpert { iteration: 2 })).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.weighted_len(), 6);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let mut ds = Dataset::new(3, 0.3).unwrap();
        assert!(ds.push(sample(1.0, Source::Original)).is_err());
        let mut ds = Dataset::new(2, 0.3).unwrap();
        ds.push(sample(1.0, Source::Original)).unwrap();
        let mut bad = sample(1.0, Source::Original);
        bad.features.push(0.0);
        assert!(ds.push(bad).is_err());
        let text = "{\"n\":2,\"period\":0.3}\n{\"features\":[1.0],\"targets\":[[0,0]],\"source\":{\"kind\":\"original\"}}\n";
        assert!(matches!(Dataset::read_jsonl(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
