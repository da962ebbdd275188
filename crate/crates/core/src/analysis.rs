//! Descriptive statistics of learned subword-dependent scales.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ScaleMode, ScaleSet, TokenId, Vocabulary};

pub const DEFAULT_BINS: usize = 50;

/// Sample Pearson correlation of `x` and `y`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::usage(format!(
            "pearson needs two vectors of equal length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput(
            "correlation is undefined for a constant vector".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[min, max]`; every bin is half-open except the last,
/// which also takes `max`. A constant vector lands entirely in the first bin.
pub fn scale_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::usage("histogram needs at least one bin"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage("histogram values must be finite"));
    }
    let mut counts = vec![0; bins];
    if values.is_empty() {
        return Ok(Histogram {
            edges: vec![0.0; bins + 1],
            counts,
        });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * width })
        .collect();
    for &v in values {
        let i = if width == 0.0 {
            0
        } else {
            // the computed index can be off by one at an edge; settle it
            // against the stored edges
            let mut i = (((v - lo) / width) as usize).min(bins - 1);
            while i > 0 && v < edges[i] {
                i -= 1;
            }
            while i + 1 < bins && v >= edges[i + 1] {
                i += 1;
            }
            i
        };
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthGroup {
    pub length: usize,
    pub size: usize,
    pub mean_alpha: f64,
    pub mean_beta: f64,
}

/// Mean scales per character length of the unit string (continuation marker
/// excluded). Lengths with no unit are absent.
pub fn length_profile(scales: &ScaleSet, vocab: &Vocabulary) -> Result<Vec<LengthGroup>> {
    if scales.mode() != ScaleMode::Subword {
        return Err(Error::usage(
            "length profile needs subword-dependent scales",
        ));
    }
    scales.ensure_vocab(vocab.size())?;
    let mut groups: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for id in 0..vocab.size() as TokenId {
        let len = vocab.char_len(id).expect("id is in range");
        let g = groups.entry(len).or_insert((0, 0.0, 0.0));
        g.0 += 1;
        g.1 += scales.alpha_for(id);
        g.2 += scales.beta_for(id);
    }
    Ok(groups
        .into_iter()
        .map(|(length, (size, a, b))| LengthGroup {
            length,
            size,
            mean_alpha: a / size as f64,
            mean_beta: b / size as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single value.
    pub stddev: f64,
}

pub fn moments(values: &[f64]) -> Moments {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Moments {
        mean,
        stddev: var.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleAnalysisReport {
    pub alpha_histogram: Histogram,
    pub beta_histogram: Histogram,
    /// `None` when either vector is constant.
    pub pearson: Option<f64>,
    pub alpha: Moments,
    pub beta: Moments,
    pub length_profile: Vec<LengthGroup>,
}

pub fn analyze_scales(
    scales: &ScaleSet,
    vocab: &Vocabulary,
    bins: usize,
) -> Result<ScaleAnalysisReport> {
    let length_profile = length_profile(scales, vocab)?;
    let (a, b) = (scales.alpha().as_slice(), scales.beta().as_slice());
    let pearson = match pearson(a, b) {
        Ok(r) => Some(r),
        Err(Error::DegenerateInput(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ScaleAnalysisReport {
        alpha_histogram: scale_histogram(a, bins)?,
        beta_histogram: scale_histogram(b, bins)?,
        pearson,
        alpha: moments(a),
        beta: moments(b),
        length_profile,
    })
}

impl ScaleAnalysisReport {
    /// Histogram rows `scale,bin,lower,upper,count`.
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scale", "bin", "lower", "upper", "count"])?;
        for (name, h) in [
            ("alpha", &self.alpha_histogram),
            ("beta", &self.beta_histogram),
        ] {
            for (i, c) in h.counts.iter().enumerate() {
                w.write_record([
                    name.to_string(),
                    i.to_string(),
                    h.edges[i].to_string(),
                    h.edges[i + 1].to_string(),
                    c.to_string(),
                ])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Length rows `length,size,mean_alpha,mean_beta`.
    pub fn write_length_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for g in &self.length_profile {
            w.serialize(g)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Per-unit rows `id,unit,alpha,beta` for scatter plots.
pub fn write_scales_csv<W: Write>(scales: &ScaleSet, vocab: &Vocabulary, out: W) -> Result<()> {
    scales.ensure_vocab(vocab.size())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "unit", "alpha", "beta"])?;
    for (id, unit) in vocab.units().iter().enumerate() {
        let t = id as TokenId;
        w.write_record([
            id.to_string(),
            unit.clone(),
            scales.alpha_for(t).to_string(),
            scales.beta_for(t).to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
