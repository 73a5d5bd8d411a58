//! Per-user CSI preprocessing: subband eigenvectors and eigenvalues of the
//! averaged channel Gram matrix, plus the RB-level downlink channel.
//!
//! Public index helpers use 1-based RB, subband, and subcarrier numbers.

use std::ops::RangeInclusive;

use crate::channel::ChannelSample;
use crate::linalg::{hermitian_eig, CMatrix};
use crate::{Error, Result, SystemConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CsiReport {
    /// Per subband, `N_t × N_s` with unit-norm columns.
    pub eigvecs: Vec<CMatrix>,
    /// Per subband, `N_s` eigenvalues in descending order.
    pub eigvals: Vec<Vec<f64>>,
    /// Per RB, `N_r × N_t` downlink channel at the representative subcarrier.
    pub h_dl: Vec<CMatrix>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubbandView {
    pub index: usize,
    pub rbs: RangeInclusive<usize>,
    pub subcarriers: RangeInclusive<usize>,
}

/// `γ(n_rb) = ⌊(n_rb − 1)/b⌋ + 1`
pub fn subband_of_rb(n_rb: usize, cfg: &SystemConfig) -> Result<usize> {
    check_rb(n_rb, cfg)?;
    Ok((n_rb - 1) / cfg.rbs_per_subband + 1)
}

/// Centre subcarrier `(n_rb − 1)·a + ⌈a/2⌉` of an RB.
pub fn representative_subcarrier(n_rb: usize, cfg: &SystemConfig) -> Result<usize> {
    check_rb(n_rb, cfg)?;
    let a = cfg.subcarriers_per_rb;
    Ok((n_rb - 1) * a + a.div_ceil(2))
}

pub fn subband_view(n_b: usize, cfg: &SystemConfig) -> Result<SubbandView> {
    if n_b == 0 || n_b > cfg.num_subbands() {
        return Err(Error::Dimension(format!(
            "subband {n_b} outside 1..={}",
            cfg.num_subbands()
        )));
    }
    let b = cfg.rbs_per_subband;
    let first_rb = (n_b - 1) * b + 1;
    let last_rb = n_b * b;
    let a = cfg.subcarriers_per_rb;
    Ok(SubbandView {
        index: n_b,
        rbs: first_rb..=last_rb,
        subcarriers: (first_rb - 1) * a + 1..=last_rb * a,
    })
}

fn check_rb(n_rb: usize, cfg: &SystemConfig) -> Result<()> {
    if n_rb == 0 || n_rb > cfg.num_rbs() {
        return Err(Error::Dimension(format!("RB {n_rb} outside 1..={}", cfg.num_rbs())));
    }
    Ok(())
}

/// `(1/|S|) Σ_{f∈S} H^{(f)ᴴ} H^{(f)}` over the subcarriers of a subband.
pub fn subband_gram(h: &[CMatrix], view: &SubbandView) -> Result<CMatrix> {
    let n_t = h[0].cols();
    let mut g = CMatrix::zeros(n_t, n_t);
    for f in view.subcarriers.clone() {
        g = g.add(&h[f - 1].adjoint().matmul(&h[f - 1])?)?;
    }
    let count = view.subcarriers.clone().count() as f64;
    Ok(g.scale((1.0 / count).into()))
}

/// Preprocesses one user's full downlink CSI, given as `N_d` matrices of
/// size `N_r × N_t`.
pub fn preprocess(h: &[CMatrix], cfg: &SystemConfig) -> Result<CsiReport> {
    if h.len() != cfg.subcarriers {
        return Err(Error::Dimension(format!(
            "{} subcarrier matrices for {} subcarriers",
            h.len(),
            cfg.subcarriers
        )));
    }
    if let Some(m) = h.iter().find(|m| m.shape() != (cfg.ue_antennas, cfg.bs_antennas)) {
        return Err(Error::Dimension(format!(
            "channel matrix {:?}, expected {:?}",
            m.shape(),
            (cfg.ue_antennas, cfg.bs_antennas)
        )));
    }
    let mut eigvecs = Vec::with_capacity(cfg.num_subbands());
    let mut eigvals = Vec::with_capacity(cfg.num_subbands());
    for n_b in 1..=cfg.num_subbands() {
        let g = subband_gram(h, &subband_view(n_b, cfg)?)?;
        let eig = hermitian_eig(&g)?;
        let cols: Vec<_> = (0..cfg.streams).map(|s| eig.vectors.column(s)).collect();
        eigvecs.push(CMatrix::from_columns(&cols)?);
        eigvals.push(eig.values[..cfg.streams].iter().map(|v| v.max(0.0)).collect());
    }
    let h_dl = (1..=cfg.num_rbs())
        .map(|rb| representative_subcarrier(rb, cfg).map(|f| h[f - 1].clone()))
        .collect::<Result<_>>()?;
    Ok(CsiReport { eigvecs, eigvals, h_dl })
}

/// Reports for every user of a channel sample.
pub fn preprocess_sample(sample: &ChannelSample, cfg: &SystemConfig) -> Result<Vec<CsiReport>> {
    (0..cfg.users)
        .map(|k| {
            let h: Vec<CMatrix> = (0..cfg.subcarriers).map(|f| sample.downlink(k, f)).collect();
            preprocess(&h, cfg)
        })
        .collect()
}
