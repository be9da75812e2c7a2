use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Labelled classification data stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    features: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, features: usize, classes: usize) -> Result<Self> {
        if features == 0 || classes == 0 {
            return Err(Error::contract("dataset needs at least one feature and one class"));
        }
        if inputs.len() != labels.len() * features {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * features,
                got: inputs.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::contract(format!("label {bad} is not below class count {classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            features,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.features..(i + 1) * self.features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Copies the given rows into a new dataset with the same feature and class counts.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            inputs,
            labels,
            features: self.features,
            classes: self.classes,
        }
    }

    /// Splits off the last `n_tail` rows.
    pub fn split_tail(&self, n_tail: usize) -> Result<(Dataset, Dataset)> {
        if n_tail >= self.len() {
            return Err(Error::contract(format!(
                "cannot hold out {n_tail} of {} samples",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..self.len() - n_tail).collect();
        let tail: Vec<usize> = (self.len() - n_tail..self.len()).collect();
        Ok((self.subset(&head), self.subset(&tail)))
    }

    /// Isotropic Gaussian clusters: class centres are drawn from N(0, separation²·I)
    /// and samples add unit-variance noise around their centre. Labels are balanced
    /// and interleaved so any contiguous tail is a representative hold-out set.
    pub fn gaussian_blobs<R: Rng + ?Sized>(
        n: usize,
        features: usize,
        classes: usize,
        separation: f64,
        rng: &mut R,
    ) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::contract("blob dataset needs n >= 1"));
        }
        let centres: Vec<f64> = (0..classes * features)
            .map(|_| separation * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>();
        let mut inputs = Vec::with_capacity(n * features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % classes;
            for j in 0..features {
                let noise: f64 = StandardNormal.sample(rng);
                inputs.push(centres[y * features + j] + noise);
            }
            labels.push(y);
        }
        Dataset::new(inputs, labels, features, classes)
    }

    /// Parses header-free `label,x1,...,xp` rows. The class count is the given
    /// value, or one more than the largest label when `None`.
    pub fn from_csv_reader<R: BufRead>(reader: R, classes: Option<usize>) -> Result<Dataset> {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut features = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                line: lineno + 1,
                reason,
            };
            let mut fields = line.split(',');
            let label_field = fields.next().unwrap_or_default().trim();
            let label: usize = label_field
                .parse()
                .map_err(|_| parse_err(format!("label `{label_field}` is not a nonnegative integer")))?;
            let before = inputs.len();
            for f in fields {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("`{}` is not a number", f.trim())))?;
                if !v.is_finite() {
                    return Err(parse_err("non-finite feature value".into()));
                }
                inputs.push(v);
            }
            let p = inputs.len() - before;
            match features {
                None if p == 0 => return Err(parse_err("row has no features".into())),
                None => features = Some(p),
                Some(expected) if expected != p => {
                    return Err(parse_err(format!("expected {expected} features, found {p}")))
                }
                _ => {}
            }
            labels.push(label);
        }
        let features = features.ok_or(Error::Parse {
            line: 0,
            reason: "no data rows".into(),
        })?;
        let classes = match classes {
            Some(c) => c,
            None => labels.iter().max().map_or(1, |m| m + 1),
        };
        Dataset::new(inputs, labels, features, classes)
    }

    pub fn load_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), classes)
    }
}
