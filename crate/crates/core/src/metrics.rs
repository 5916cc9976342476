//! Evaluation metrics: gene-wise and spot-wise PCC, gene-wise mutual
//! information on quantile bins, and Mann–Whitney AUCs with midrank ties.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{HexstError, Result};
use crate::numerics::{pcc, Tensor};

pub const DEFAULT_MI_BINS: usize = 16;

fn check_pair(y_hat: &Tensor, y: &Tensor) -> Result<()> {
    if y_hat.shape() != y.shape() || y.shape().len() != 2 {
        return Err(HexstError::Structural(format!(
            "prediction {:?} vs ground truth {:?}",
            y_hat.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// Mean over genes of the PCC across spots.
pub fn pcc_genewise(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(per_gene_pcc(y_hat, y)?.iter().sum::<f64>() / y.cols().max(1) as f64)
}

pub fn per_gene_pcc(y_hat: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
    check_pair(y_hat, y)?;
    if y.rows() < 2 {
        return Err(HexstError::Input(format!("gene-wise PCC needs N >= 2, got {}", y.rows())));
    }
    Ok((0..y.cols()).map(|j| pcc(&y_hat.column(j), &y.column(j))).collect())
}

/// Mean over spots of the PCC across genes.
pub fn pcc_spotwise(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    check_pair(y_hat, y)?;
    if y.cols() < 2 {
        return Err(HexstError::Input(format!("spot-wise PCC needs G >= 2, got {}", y.cols())));
    }
    let n = y.rows();
    Ok((0..n).map(|i| pcc(y_hat.row(i), y.row(i))).sum::<f64>() / n.max(1) as f64)
}

/// Equal-frequency bin index per value: the number of quantile edges `≤ v`.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|k| sorted[k * n / bins]).collect();
    values
        .iter()
        .map(|v| edges.partition_point(|e| e <= v))
        .collect()
}

/// Discrete mutual information (nats) of two label sequences.
pub fn mutual_information(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * bins + y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let mut mi = 0.0;
    for x in 0..bins {
        for y in 0..bins {
            let c = joint[x * bins + y];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            mi += pxy * (c as f64 * n / (pa[x] as f64 * pb[y] as f64)).ln();
        }
    }
    mi.max(0.0)
}

pub fn per_gene_mi(y_hat: &Tensor, y: &Tensor, bins: usize) -> Result<Vec<f64>> {
    check_pair(y_hat, y)?;
    if bins == 0 || y.rows() < bins {
        return Err(HexstError::Input(format!(
            "mutual information with {bins} bins needs at least that many spots, got {}",
            y.rows()
        )));
    }
    Ok((0..y.cols())
        .map(|j| {
            let a = quantile_bins(&y_hat.column(j), bins);
            let b = quantile_bins(&y.column(j), bins);
            mutual_information(&a, &b, bins)
        })
        .collect())
}

pub fn mi_genewise(y_hat: &Tensor, y: &Tensor, bins: usize) -> Result<f64> {
    Ok(per_gene_mi(y_hat, y, bins)?.iter().sum::<f64>() / y.cols().max(1) as f64)
}

/// AUC value plus whether both classes were present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Auc {
    pub value: f64,
    pub defined: bool,
}

impl Auc {
    const UNDEFINED: Auc = Auc {
        value: 0.5,
        defined: false,
    };
}

/// Midranks (1-based, ties averaged).
pub fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUC of `scores` for the positive class.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> Auc {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Auc::UNDEFINED;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Auc {
        value: u / (n_pos as f64 * n_neg as f64),
        defined: true,
    }
}

/// How AUCs are aggregated over genes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AucPooling {
    /// One AUC over all (spot, gene) cells.
    #[default]
    Pooled,
    /// AUC per gene, averaged over genes where both classes occur.
    PerGene,
}

fn auc_with_labels(y_hat: &Tensor, labels: &[bool], g: usize, pooling: AucPooling) -> Auc {
    match pooling {
        AucPooling::Pooled => mann_whitney_auc(y_hat.data(), labels),
        AucPooling::PerGene => {
            let n = y_hat.rows();
            let per: Vec<Auc> = (0..g)
                .map(|j| {
                    let s = y_hat.column(j);
                    let l: Vec<bool> = (0..n).map(|i| labels[i * g + j]).collect();
                    mann_whitney_auc(&s, &l)
                })
                .filter(|a| a.defined)
                .collect();
            if per.is_empty() {
                Auc::UNDEFINED
            } else {
                Auc {
                    value: per.iter().map(|a| a.value).sum::<f64>() / per.len() as f64,
                    defined: true,
                }
            }
        }
    }
}

/// Label `y > 0` scored by the prediction.
pub fn auc_0_vs_nonzero(y_hat: &Tensor, y: &Tensor, pooling: AucPooling) -> Result<Auc> {
    check_pair(y_hat, y)?;
    let labels: Vec<bool> = y.data().iter().map(|&v| v > 0.0).collect();
    Ok(auc_with_labels(y_hat, &labels, y.cols(), pooling))
}

/// Lower-middle element of all ground-truth entries.
pub fn global_median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

/// Label `y > median(Y)` scored by the prediction; ties at the median are negative.
pub fn auc_q50(y_hat: &Tensor, y: &Tensor, pooling: AucPooling) -> Result<Auc> {
    check_pair(y_hat, y)?;
    if y.is_empty() {
        return Ok(Auc::UNDEFINED);
    }
    let med = global_median(y.data());
    let labels: Vec<bool> = y.data().iter().map(|&v| v > med).collect();
    Ok(auc_with_labels(y_hat, &labels, y.cols(), pooling))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mi_bins: usize,
    pub auc_pooling: AucPooling,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mi_bins: DEFAULT_MI_BINS,
            auc_pooling: AucPooling::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneMetrics {
    pub gene: String,
    pub pcc: f64,
    pub mi: f64,
    pub auc_0vnz: Auc,
    pub auc_q50: Auc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pcc_f: f64,
    pub pcc_s: f64,
    pub mi_f: f64,
    pub auc_0vnz: Auc,
    pub auc_q50: Auc,
    pub genes: Vec<GeneMetrics>,
}

impl EvalReport {
    /// Summary block, blank line, then the per-gene table, comma-separated.
    pub fn to_text(&self) -> String {
        let mut s = String::from("metric,value,defined\n");
        let _ = writeln!(s, "pcc_f,{},true", self.pcc_f);
        let _ = writeln!(s, "pcc_s,{},true", self.pcc_s);
        let _ = writeln!(s, "mi_f,{},true", self.mi_f);
        let _ = writeln!(s, "auc_0vnz,{},{}", self.auc_0vnz.value, self.auc_0vnz.defined);
        let _ = writeln!(s, "auc_q50,{},{}", self.auc_q50.value, self.auc_q50.defined);
        s.push('\n');
        s.push_str("gene,pcc,mi,auc_0vnz,auc_q50\n");
        for g in &self.genes {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                g.gene, g.pcc, g.mi, g.auc_0vnz.value, g.auc_q50.value
            );
        }
        s
    }

    /// Reads back the `pcc_f`/`pcc_s`/... summary lines of [`EvalReport::to_text`].
    pub fn summary_value(text: &str, metric: &str) -> Option<f64> {
        text.lines()
            .take_while(|l| !l.is_empty())
            .find_map(|l| {
                let mut parts = l.split(',');
                (parts.next()? == metric).then(|| parts.next()?.parse().ok())?
            })
    }
}

/// Full metric report; spot-wise PCC and MI need `G >= 2` and `N >= bins`.
pub fn evaluate(y_hat: &Tensor, y: &Tensor, gene_names: &[String], cfg: &EvalConfig) -> Result<EvalReport> {
    check_pair(y_hat, y)?;
    if gene_names.len() != y.cols() {
        return Err(HexstError::Structural(format!(
            "{} gene names for {} columns",
            gene_names.len(),
            y.cols()
        )));
    }
    let pccs = per_gene_pcc(y_hat, y)?;
    let mis = per_gene_mi(y_hat, y, cfg.mi_bins)?;
    let n = y.rows();
    let med = global_median(y.data());
    let genes = (0..y.cols())
        .map(|j| {
            let s = y_hat.column(j);
            let col = y.column(j);
            let nz: Vec<bool> = col.iter().map(|&v| v > 0.0).collect();
            let hi: Vec<bool> = col.iter().map(|&v| v > med).collect();
            debug_assert_eq!(nz.len(), n);
            GeneMetrics {
                gene: gene_names[j].clone(),
                pcc: pccs[j],
                mi: mis[j],
                auc_0vnz: mann_whitney_auc(&s, &nz),
                auc_q50: mann_whitney_auc(&s, &hi),
            }
        })
        .collect();
    Ok(EvalReport {
        pcc_f: pccs.iter().sum::<f64>() / pccs.len().max(1) as f64,
        pcc_s: pcc_spotwise(y_hat, y)?,
        mi_f: mis.iter().sum::<f64>() / mis.len().max(1) as f64,
        auc_0vnz: auc_0_vs_nonzero(y_hat, y, cfg.auc_pooling)?,
        auc_q50: auc_q50(y_hat, y, cfg.auc_pooling)?,
        genes,
    })
}
