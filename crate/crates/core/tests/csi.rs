mod common;

use jfp_core::channel::{generate, ChannelModel};
use jfp_core::csi::{preprocess, preprocess_sample, subband_gram, subband_view};
use jfp_core::linalg::{hermitian_eig, inner, norm, svd, CMatrix, C64};
use jfp_core::SystemConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_matrix, random_unit};

fn random_csi(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> Vec<CMatrix> {
    (0..cfg.subcarriers)
        .map(|_| random_matrix(cfg.ue_antennas, cfg.bs_antennas, rng))
        .collect()
}

#[test]
fn flat_rank_one_channel_reports_its_singular_pair() {
    let cfg = SystemConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = random_unit(cfg.ue_antennas, &mut rng);
    let mut v = random_unit(cfg.bs_antennas, &mut rng);
    let h = CMatrix::from_fn(cfg.ue_antennas, cfg.bs_antennas, |r, c| u[r] * v[c].conj() * 2.0);
    let report = preprocess(&vec![h.clone(); cfg.subcarriers], &cfg).unwrap();

    // expected vector: v with its first component rotated onto the positive real axis
    let phase = v[0].conj() / v[0].norm();
    v.iter_mut().for_each(|z| *z *= phase);
    for (m, e) in report.eigvecs.iter().zip(&report.eigvals) {
        assert_eq!(m.shape(), (cfg.bs_antennas, 1));
        let got = m.column(0);
        let err: f64 = got.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "eigenvector error {err}");
        assert!((e[0] - 4.0).abs() < 1e-10, "eigenvalue {}", e[0]);
    }
    assert_eq!(report.h_dl.len(), cfg.num_rbs());
    assert!(report.h_dl.iter().all(|m| *m == h));
}

#[test]
fn reports_have_unit_vectors_with_fixed_phase() {
    let cfg = SystemConfig::desk();
    for sample in generate(&cfg, &ChannelModel::default(), 3, 50).unwrap() {
        for report in preprocess_sample(&sample, &cfg).unwrap() {
            assert_eq!(report.eigvecs.len(), cfg.num_subbands());
            for (m, e) in report.eigvecs.iter().zip(&report.eigvals) {
                let v = m.column(0);
                assert!((norm(&v).powi(2) - 1.0).abs() < 1e-10);
                let lead = v.iter().find(|z| z.norm() > 1e-8).unwrap();
                assert!(lead.im.abs() < 1e-12 && lead.re > 0.0);
                assert!(e[0] >= 0.0);
            }
        }
    }
}

#[test]
fn eigenvalues_sum_to_mean_channel_energy() {
    let cfg = SystemConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let h = random_csi(&cfg, &mut rng);
        for n_b in 1..=cfg.num_subbands() {
            let view = subband_view(n_b, &cfg).unwrap();
            let eig = hermitian_eig(&subband_gram(&h, &view).unwrap()).unwrap();
            assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
            let energy: f64 = view
                .subcarriers
                .clone()
                .map(|f| h[f - 1].frobenius_norm().powi(2))
                .sum::<f64>()
                / view.subcarriers.clone().count() as f64;
            let total: f64 = eig.values.iter().sum();
            assert!((total - energy).abs() < 1e-8 * energy, "{total} vs {energy}");
        }
    }
}

#[test]
fn eigenvalue_matches_stacked_singular_value() {
    let cfg = SystemConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let h = random_csi(&cfg, &mut rng);
        let report = preprocess(&h, &cfg).unwrap();
        for n_b in 1..=cfg.num_subbands() {
            let view = subband_view(n_b, &cfg).unwrap();
            let count = view.subcarriers.clone().count();
            // A = [H_1; H_2; …]/√|S| has AᴴA equal to the subband Gram matrix
            let blocks: Vec<&CMatrix> = view.subcarriers.clone().map(|f| &h[f - 1]).collect();
            let a = CMatrix::from_fn(count * cfg.ue_antennas, cfg.bs_antennas, |r, c| {
                blocks[r / cfg.ue_antennas][(r % cfg.ue_antennas, c)] / (count as f64).sqrt()
            });
            let s = svd(&a).unwrap();
            let lambda = report.eigvals[n_b - 1][0];
            assert!((lambda - s.sigma[0].powi(2)).abs() < 1e-8 * lambda);
            let overlap = inner(&s.v.column(0), &report.eigvecs[n_b - 1].column(0)).norm();
            assert!((overlap - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn extracted_vector_beats_random_directions() {
    let cfg = SystemConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = random_csi(&cfg, &mut rng);
    let report = preprocess(&h, &cfg).unwrap();
    for n_b in 1..=cfg.num_subbands() {
        let g = subband_gram(&h, &subband_view(n_b, &cfg).unwrap()).unwrap();
        let quad = |v: &[C64]| inner(v, &g.matvec(v).unwrap()).re;
        let best = quad(&report.eigvecs[n_b - 1].column(0));
        assert!((best - report.eigvals[n_b - 1][0]).abs() < 1e-9 * best);
        for _ in 0..10_000 {
            let v = random_unit(cfg.bs_antennas, &mut rng);
            assert!(quad(&v) <= best * (1.0 + 1e-12));
        }
    }
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let cfg = SystemConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut h = random_csi(&cfg, &mut rng);
    h.pop();
    assert!(preprocess(&h, &cfg).is_err());
    let wrong: Vec<CMatrix> = (0..cfg.subcarriers).map(|_| random_matrix(3, 8, &mut rng)).collect();
    assert!(preprocess(&wrong, &cfg).is_err());
}
