use fqr_core::dataset::{Contrast, SamplingGrid};
use fqr_core::estimators::{CurveEstimate, CurveMethod};
use fqr_core::inference::BandResult;
use fqr_core::pipeline::PipelineConfig;
use fqr_core::qr::{McmcConfig, QuantileLevel};
use fqr_core::simlab::{
    binary_truth_oracle, gen_binary, gen_continuous, metrics, run_study, true_quantile_curve,
    SimScenario, StudyConfig, ORACLE_DRAWS, T3_COPULA_RHO,
};
use fqr_core::FqrError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[test]
fn continuous_truth_values() {
    let s = SimScenario::continuous();
    let b1 = true_quantile_curve(&s, 0.5, 1, &[1.0, 2.0]).unwrap();
    assert!((b1[0] - 1.4960).abs() < 1e-4);
    assert!((b1[1] - 5.5754e-6).abs() < 1e-9 && b1[1] < 1e-5);
    for tau in [0.1, 0.5, 0.9] {
        let b2 = true_quantile_curve(&s, tau, 2, &[3.0]).unwrap();
        assert!((b2[0] - 0.9974).abs() < 1e-4);
    }
    let b0 = true_quantile_curve(&s, 0.9, 0, &[0.0, 4.0]).unwrap();
    assert!((b0[0] - 1.6377).abs() < 1e-3 && b0[0] == b0[1]);
}

#[test]
fn continuous_dataset_shape() {
    let (ds, truth) = gen_continuous(3).unwrap();
    assert_eq!((ds.n(), ds.t_len(), ds.d()), (400, 128, 3));
    assert_eq!(ds.grid().first(), 0.0);
    assert!((ds.grid().last() - 5.10).abs() < 1e-12);
    assert!(ds.design().column(0).iter().all(|&v| v == 1.0));
    assert_eq!(truth.scenario.reported_coefficients(), vec![1, 2]);
    let again = gen_continuous(3).unwrap().0;
    assert_eq!(ds.responses(), again.responses());
}

fn long_path(s: &SimScenario, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = vec![0.0; len];
    s.noise.sample_path(&mut rng, &mut out);
    out
}

fn lag1(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    cov / var
}

#[test]
fn t3_noise_marginal_and_autocorrelation() {
    let s = SimScenario::continuous();
    assert_eq!(s.noise.latent_rho, T3_COPULA_RHO);
    let mut x = long_path(&s, 1_000_000);
    let r = lag1(&x);
    assert!((r - 0.5).abs() < 0.01, "lag-1 autocorrelation {r}");
    x.sort_by(f64::total_cmp);
    let t3 = StudentsT::new(0.0, 1.0, 3.0).unwrap();
    let n = x.len() as f64;
    let ks = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = t3.cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS distance {ks}");
}

#[test]
fn gaussian_noise_autocorrelation() {
    let x = long_path(&SimScenario::binary(), 1_000_000);
    assert!((lag1(&x) - 0.8).abs() < 0.01);
    let sd = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    assert!((sd - 4.0).abs() < 0.05);
}

#[test]
fn binary_dataset_shape() {
    let (ds, _) = gen_binary(5).unwrap();
    assert_eq!((ds.n(), ds.t_len(), ds.d()), (500, 256, 2));
    assert_eq!(ds.grid().last(), 8.0);
    let x = ds.design().column(1);
    assert!(x.iter().all(|&v| v == 1.0 || v == -1.0));
    let plus = x.iter().filter(|&&v| v == 1.0).count();
    assert!((200..300).contains(&plus));
    let s = SimScenario::binary();
    let centers: Vec<f64> = s.group_peaks.iter().map(|p| p.mu).collect();
    assert_eq!(centers, vec![1.0, 3.0, 5.0, 7.0]);
    assert!(s.group_peaks.iter().all(|p| p.sigma == 0.25));
}

#[test]
fn binary_truth_structure() {
    let s = SimScenario::binary();
    let grid = s.grid().unwrap();
    let t = grid.points();
    let find = |x: f64| t.iter().position(|&v| (v - x).abs() < 0.02).unwrap();
    let q: Vec<Vec<f64>> = [0.5, 0.8, 0.9]
        .iter()
        .map(|&tau| true_quantile_curve(&s, tau, 1, t).unwrap())
        .collect();
    let (p1, p2, p3, far) = (find(1.0), find(3.0), find(5.0), find(4.0));
    for row in &q {
        assert!((row[p1] - q[0][p1]).abs() < 1e-6);
        assert!(row[p3].abs() < 1e-9);
        assert!(row[far].abs() < 0.01);
    }
    // At the first peak the groups differ by a pure location shift.
    let phi = 1.0 / (0.25 * (2.0 * std::f64::consts::PI).sqrt());
    let z = (t[p1] - 1.0) / 0.25;
    assert!((q[0][p1] - 0.75 * phi * (-0.5 * z * z).exp()).abs() < 1e-6);
    assert!((q[2][p2] - q[0][p2]).abs() > 0.5);
}

#[test]
fn stored_truth_table_matches_fresh_oracle() {
    let s = SimScenario::binary();
    let grid = s.grid().unwrap();
    let taus = [0.5, 0.8, 0.9];
    let fresh = binary_truth_oracle(&s, &taus, grid.points(), ORACLE_DRAWS, 99).unwrap();
    for (qi, &tau) in taus.iter().enumerate() {
        let stored = true_quantile_curve(&s, tau, 1, grid.points()).unwrap();
        let [minus, plus] = &fresh[qi];
        for l in 0..grid.len() {
            let f = (plus[l] - minus[l]) / 2.0;
            assert!((f - stored[l]).abs() < 0.01, "tau {tau} t {}: {f} vs {}", grid.points()[l], stored[l]);
        }
    }
}

#[test]
fn scenario_lookup_and_overrides() {
    let err = SimScenario::by_name("nope").unwrap_err();
    match &err {
        FqrError::UnknownScenario { valid, .. } => {
            assert!(valid.contains("continuous") && valid.contains("binary"))
        }
        e => panic!("unexpected {e}"),
    }
    assert!(err.to_string().contains("continuous"));
    let s = SimScenario::by_name("binary-gaussian-peaks").unwrap();
    let centers: Vec<f64> = s.group_peaks.iter().map(|p| p.mu).collect();
    assert_eq!(centers, vec![1.0, 5.0]);
    let o = SimScenario::continuous().with_n(100).with_t_len(32);
    assert_eq!(o.generate(1).unwrap().responses().shape(), (100, 32));
    assert!(SimScenario::continuous().drop_peaks(&[1]).is_err());
}

fn toy_band(estimate: Vec<f64>, half: f64) -> BandResult {
    let t = estimate.len();
    BandResult {
        grid: (0..t).map(|l| l as f64).collect(),
        pointwise_lo: estimate.iter().map(|e| e - half).collect(),
        pointwise_hi: estimate.iter().map(|e| e + half).collect(),
        joint_lo: estimate.iter().map(|e| e - 2.0 * half).collect(),
        joint_hi: estimate.iter().map(|e| e + 2.0 * half).collect(),
        std_error: vec![1.0; t],
        estimate,
        z_alpha: 1.96,
        c_n_alpha: 3.0,
        alpha: 0.05,
        simbas: vec![1.0; t],
        excludes_zero: vec![false; t],
        flags: vec![false; t],
        mc_draws: 0,
        seed: 0,
    }
}

fn toy_estimate(values: Vec<f64>, hi: f64) -> CurveEstimate {
    let eval_grid = SamplingGrid::uniform(0.0, hi, values.len()).unwrap();
    CurveEstimate {
        method: CurveMethod::Li,
        eval_grid,
        values,
        tau: QuantileLevel::new(0.5).unwrap(),
        contrast: Contrast::unit(1, 0).unwrap(),
    }
}

#[test]
fn metric_examples() {
    let truth: Vec<f64> = (0..10).map(|l| (l as f64).sin()).collect();
    let m = metrics(&toy_estimate(truth.clone(), 5.10), &toy_band(truth.clone(), 0.1), &truth, &truth).unwrap();
    assert_eq!((m.imse, m.pointwise_coverage, m.joint_coverage), (0.0, 1.0, 1.0));
    assert!((m.pointwise_width - 0.2).abs() < 1e-12 && (m.joint_width - 0.4).abs() < 1e-12);

    let mut off = truth.clone();
    off[4] += 1.0;
    let m = metrics(&toy_estimate(truth.clone(), 5.10), &toy_band(off, 0.1), &truth, &truth).unwrap();
    assert_eq!(m.joint_coverage, 0.0);
    assert!((m.pointwise_coverage - 0.9).abs() < 1e-12);

    let shifted: Vec<f64> = truth.iter().map(|v| v + 1.0).collect();
    let m = metrics(&toy_estimate(shifted.clone(), 5.10), &toy_band(shifted, 0.1), &truth, &truth).unwrap();
    assert!((m.imse - 5.10).abs() < 1e-12);
    assert!((m.imse_grid_sum - 10.0).abs() < 1e-12);

    assert!(metrics(&toy_estimate(truth.clone(), 1.0), &toy_band(truth.clone(), 0.1), &truth[..5], &truth).is_err());
}

fn small_study(replicates: usize, parallelism: usize, identical: bool) -> StudyConfig {
    let mut pipeline = PipelineConfig {
        mc_draws: 2000,
        ..PipelineConfig::default()
    };
    pipeline.solver.mcmc = McmcConfig {
        chain_length: 3000,
        burn_in: 1000,
        ..McmcConfig::default()
    };
    StudyConfig {
        scenario: SimScenario::continuous().with_n(80).with_t_len(16),
        methods: vec![CurveMethod::Li, CurveMethod::BayesGp, CurveMethod::PresmoothLi],
        taus: vec![0.5, 0.8],
        replicates,
        seed: 17,
        parallelism,
        pipeline,
        identical_replicates: identical,
    }
}

#[test]
fn study_bookkeeping_and_identical_replicates() {
    let report = run_study(&small_study(2, 0, true)).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.rows.len(), 3 * 2 * 2);
    assert_eq!(report.records.len(), 2 * 3 * 2 * 2);
    for row in &report.rows {
        assert_eq!(row.replicates, 2);
        assert_eq!(row.imse_se, 0.0);
        assert_eq!(row.joint_coverage_se, 0.0);
        assert!((0.0..=1.0).contains(&row.pointwise_coverage));
        assert_eq!((row.n, row.t_len), (80, 16));
    }
    assert!(report.row(0.8, 2, CurveMethod::BayesGp).is_some());
    assert!(run_study(&small_study(1, 0, false)).is_err());
}

#[test]
fn study_is_independent_of_thread_count() {
    let a = run_study(&small_study(3, 1, false)).unwrap();
    let b = run_study(&small_study(3, 8, false)).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.metrics, y.metrics);
        assert_eq!(x.seed, y.seed);
    }
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.imse.to_bits(), y.imse.to_bits());
        assert_eq!(x.joint_width.to_bits(), y.joint_width.to_bits());
    }
}
