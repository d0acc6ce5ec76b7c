use super::stats::median;
use crate::attacks::losses_and_hits;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{per_sample_grad_norms, Mlp};
use crate::textfmt::fmt_f64;

pub const HIST_BINS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub member_frac: f64,
    pub nonmember_frac: f64,
}

/// Member and non-member value distributions on shared bins spanning the
/// pooled range.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn build(members: &[f64], nonmembers: &[f64], n_bins: usize) -> Result<Self> {
        if members.is_empty() || nonmembers.is_empty() || n_bins == 0 {
            return Err(Error::invalid("histogram needs values on both sides and at least one bin"));
        }
        if members.iter().chain(nonmembers).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite histogram value"));
        }
        let lo = members.iter().chain(nonmembers).copied().fold(f64::INFINITY, f64::min);
        let hi = members.iter().chain(nonmembers).copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / n_bins as f64;
        let bin_of = |v: f64| (((v - lo) / width) as usize).min(n_bins - 1);
        let fractions = |vals: &[f64]| {
            let mut counts = vec![0usize; n_bins];
            for &v in vals {
                counts[bin_of(v)] += 1;
            }
            counts.into_iter().map(|c| c as f64 / vals.len() as f64).collect::<Vec<_>>()
        };
        let (fm, fnm) = (fractions(members), fractions(nonmembers));
        let bins = (0..n_bins)
            .map(|b| HistogramBin {
                left: lo + b as f64 * width,
                right: if b + 1 == n_bins { hi } else { lo + (b + 1) as f64 * width },
                member_frac: fm[b],
                nonmember_frac: fnm[b],
            })
            .collect();
        Ok(Self { bins })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,member_frac,nonmember_frac\n");
        for b in &self.bins {
            s.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(b.left),
                fmt_f64(b.right),
                fmt_f64(b.member_frac),
                fmt_f64(b.nonmember_frac)
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    pub grad_norms: Histogram,
    pub losses: Histogram,
    pub member_median_norm: f64,
    pub nonmember_median_norm: f64,
    /// Member accuracy minus non-member accuracy of each class; `None` for
    /// classes missing from either set.
    pub per_class_egen: Vec<Option<f64>>,
    pub e_gen: f64,
}

impl DistributionReport {
    /// Empirical CDF of the defined per-class values as `(e_gen, fraction)`
    /// steps in ascending order.
    pub fn egen_cdf(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<f64> = self.per_class_egen.iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.into_iter().enumerate().map(|(i, e)| (e, (i + 1) as f64 / n)).collect()
    }

    pub fn egen_cdf_csv(&self) -> String {
        let mut s = String::from("e_gen,cdf\n");
        for (e, f) in self.egen_cdf() {
            s.push_str(&format!("{},{}\n", fmt_f64(e), fmt_f64(f)));
        }
        s
    }

    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,e_gen\n");
        for (k, e) in self.per_class_egen.iter().enumerate() {
            if let Some(e) = e {
                s.push_str(&format!("{k},{}\n", fmt_f64(*e)));
            }
        }
        s
    }
}

fn per_class_accuracy(labels: &[usize], hits: &[bool], c: usize) -> Vec<Option<f64>> {
    let mut total = vec![0usize; c];
    let mut right = vec![0usize; c];
    for (&y, &h) in labels.iter().zip(hits) {
        total[y] += 1;
        right[y] += usize::from(h);
    }
    total
        .iter()
        .zip(&right)
        .map(|(&t, &r)| (t > 0).then(|| r as f64 / t as f64))
        .collect()
}

/// Gradient-norm and loss histograms of members against non-members, plus
/// per-class generalization error.
pub fn distribution_report(model: &Mlp, members: &Dataset, nonmembers: &Dataset) -> Result<DistributionReport> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::invalid("distribution report needs members and non-members"));
    }
    let norms = |d: &Dataset| -> Result<Vec<f64>> {
        Ok(per_sample_grad_norms(model, d.features().view(), d.labels())?
            .into_iter()
            .map(|g| g.total)
            .collect())
    };
    let (nm, nn) = (norms(members)?, norms(nonmembers)?);
    let (lm, hm) = losses_and_hits(model, members)?;
    let (ln, hn) = losses_and_hits(model, nonmembers)?;
    let c = model.n_classes();
    let am = per_class_accuracy(members.labels(), &hm, c);
    let an = per_class_accuracy(nonmembers.labels(), &hn, c);
    let per_class_egen = am.iter().zip(&an).map(|(a, b)| Some((*a)? - (*b)?)).collect();
    let acc = |h: &[bool]| h.iter().filter(|&&b| b).count() as f64 / h.len() as f64;
    Ok(DistributionReport {
        grad_norms: Histogram::build(&nm, &nn, HIST_BINS)?,
        losses: Histogram::build(&lm, &ln, HIST_BINS)?,
        member_median_norm: median(&nm).expect("nonempty"),
        nonmember_median_norm: median(&nn).expect("nonempty"),
        per_class_egen,
        e_gen: acc(&hm) - acc(&hn),
    })
}
