//! Acceptance criteria 1–8. Runs as a plain binary (`harness = false`) so that
//! every criterion prints exactly one PASS/FAIL line; exits non-zero if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rrg_core::baseline::{self, BaselineConfig};
use rrg_core::chi2;
use rrg_core::fixedpoint::{
    float_run_detector, fx_run_detector, op_count_report, propose_format, propose_formats,
    FormatMap, FxFormat, RangeRecord,
};
use rrg_core::numerics::{self, chol, kron, mat_mul, Matrix, RngStream};
use rrg_core::residual::{
    assemble_blocks, compute_residual, covariance_from_zol, residual_covariance, test_statistic,
    Detector, DetectorConfig, ResidualState,
};
use rrg_core::sysid::{self, FaultProfile, GramInverse, InnovationModel};
use rrg_core::Exec;

// Tolerances and sizes, pinned.
const C1_TARGET: f64 = 38.58;
const C1_TOL: f64 = 0.02;
const C3_BAND: (f64, f64) = (0.003, 0.007);
const C3_MIN_WINDOWS: u64 = 100_000;
const C4_TRIALS: usize = 2000;
const C4_SCALING_FACTOR: f64 = 2.0;
const C4_TABLE_FACTOR: f64 = 3.0;
const C5_TRIALS: usize = 500;
const C5_REL_FROBENIUS: f64 = 0.10;
const C6_DRAWS: usize = 20_000;
const C7_COVERAGE: f64 = 0.95;
const C7_FAR: f64 = 0.007;
const C7_NOFAULT_RUNS: u64 = 25;
const C8_QUAD_TOL: f64 = 1e-9;
const C8_PUSH_TOL: f64 = 1e-12;
const C8_WIDE_TOL: f64 = 1e-5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_threshold() -> Outcome {
    let g = chi2::chi2_inv(0.995, 19).expect("valid arguments");
    outcome(
        (g - C1_TARGET).abs() <= C1_TOL,
        format!("chi2_inv(0.995, 19) = {g:.4}"),
    )
}

fn c2_table_formats() -> Outcome {
    let mut mismatches = Vec::new();
    for (name, lo, hi, whole, (s, w, f)) in common::REFERENCE_FORMATS {
        let mut rec = RangeRecord::new(name).with(lo).with(hi);
        rec.whole = whole;
        let got = propose_format(&rec, 6).expect("non-empty record");
        let want = FxFormat::new(s, w, f).expect("table format is valid");
        if got != want {
            mismatches.push((name, got, want));
        }
    }
    let flagged_only = mismatches.len() == 1
        && mismatches[0].0 == "r_avg"
        && mismatches[0].1 == FxFormat::new(true, 11, 6).unwrap();
    let list: Vec<String> = mismatches
        .iter()
        .map(|(n, g, w)| format!("{n}: rule {g} vs table {w}"))
        .collect();
    outcome(
        flagged_only,
        format!(
            "{}/16 rows match; flagged: [{}]",
            16 - mismatches.len(),
            list.join("; ")
        ),
    )
}

fn c3_far() -> Outcome {
    let base = BaselineConfig {
        snr_db: 20.0,
        horizon: 20,
        alpha: 0.005,
        run_length: 2000,
        seed: 3,
        ..Default::default()
    };
    let res = baseline::far_sweep(&base, &[20], &[20.0], 60, Exec::Parallel).expect("sweep runs");
    let c = res.cells[0];
    outcome(
        c.windows >= C3_MIN_WINDOWS && c.far >= C3_BAND.0 && c.far <= C3_BAND.1,
        format!(
            "FAR = {:.4}% over {} windows ({} alarms), band [{:.1}%, {:.1}%]",
            100.0 * c.far,
            c.windows,
            c.alarms,
            100.0 * C3_BAND.0,
            100.0 * C3_BAND.1
        ),
    )
}

fn c4_snr_scaling() -> Outcome {
    let snrs = [-20.0, 0.0, 20.0, 40.0];
    let table = [0.65, 0.10, 0.01, 0.002];
    let base = BaselineConfig {
        seed: 4,
        ..Default::default()
    };
    let rows =
        baseline::snr_error_table(&base, &snrs, C4_TRIALS, Exec::Parallel).expect("table runs");
    let means: Vec<f64> = rows.iter().map(|r| r.mean_abs_err).collect();
    let mut ok = true;
    for w in means.windows(2) {
        let ratio = w[0] / w[1];
        ok &= (10.0 / C4_SCALING_FACTOR..=10.0 * C4_SCALING_FACTOR).contains(&ratio);
    }
    let r040 = means[1] / means[3];
    ok &= (100.0 / C4_SCALING_FACTOR..=100.0 * C4_SCALING_FACTOR).contains(&r040);
    let table_ratios: Vec<f64> = means.iter().zip(table).map(|(m, t)| m / t).collect();
    ok &= table_ratios
        .iter()
        .all(|&r| (1.0 / C4_TABLE_FACTOR..=C4_TABLE_FACTOR).contains(&r));
    outcome(
        ok,
        format!(
            "mean|Δd̂| = {:.3e}/{:.3e}/{:.3e}/{:.3e} at -20/0/20/40 dB; 0 vs 40 dB ratio {:.1}; vs table x{:.2}/{:.2}/{:.2}/{:.2}",
            means[0], means[1], means[2], means[3], r040,
            table_ratios[0], table_ratios[1], table_ratios[2], table_ratios[3]
        ),
    )
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_diag(&[v])
}

/// SISO plant whose one-step predictor has `Φ = 0`, so a VARX of any
/// `p ≥ 1` is exact.
fn exact_varx_plant() -> InnovationModel {
    InnovationModel::from_predictor(
        scalar(0.0),
        scalar(1.0),
        scalar(1.0),
        scalar(0.5),
        scalar(0.4),
        scalar(1.0),
    )
    .expect("consistent shapes")
}

fn c5_covariance() -> Outcome {
    let (p, horizon, n_id) = (2usize, 3usize, 500usize);
    let plant = exact_varx_plant();
    let cfg = DetectorConfig::new(horizon, p, 0.005, 1, 1, scalar(1.0)).unwrap();
    let per_trial: Vec<(Vec<f64>, Matrix)> =
        rrg_core::par::map_indexed(Exec::Parallel, C5_TRIALS, |t| {
            let mut rng = RngStream::derive(55, &[t as u64, 0]);
            let u_id = sysid::white_inputs(&mut rng, n_id, 1, 0.5);
            let id_rec = plant.simulate(&u_id, &mut rng, None).unwrap();
            let ident = sysid::identify(&id_rec, p).unwrap();
            let blocks = assemble_blocks(&ident.markov, &cfg).unwrap();
            let mut rng = RngStream::derive(55, &[t as u64, 1]);
            let det_u = vec![vec![5.0]; 40];
            let det = plant.simulate(&det_u, &mut rng, None).unwrap();
            let tail = det.slice(det.len() - horizon - p, det.len());
            let window: Vec<(Vec<f64>, Vec<f64>)> = (0..tail.len())
                .map(|k| (tail.u(k).to_vec(), tail.y(k).to_vec()))
                .collect();
            let state = ResidualState::from_window(horizon, p, &window).unwrap();
            let r = compute_residual(&state, &blocks).unwrap();
            let sigma = residual_covariance(&state, &ident.gram, &cfg).unwrap();
            (r.into_vec(), sigma)
        });
    let n = per_trial.len() as f64;
    let mut emp = Matrix::zeros(horizon, horizon);
    let mut mean_sigma = Matrix::zeros(horizon, horizon);
    for (r, s) in &per_trial {
        for i in 0..horizon {
            for j in 0..horizon {
                emp[(i, j)] += r[i] * r[j] / n;
            }
        }
        mean_sigma = mean_sigma.add(&s.scale(1.0 / n)).unwrap();
    }
    let rel = emp.sub(&mean_sigma).unwrap().frobenius_norm() / mean_sigma.frobenius_norm();
    let naive = emp
        .sub(&Matrix::identity(horizon))
        .unwrap()
        .frobenius_norm()
        / Matrix::identity(horizon).frobenius_norm();

    let sigma_e = Matrix::from_rows(&[[1.5, 0.2], [0.2, 0.7]]).unwrap();
    let gram = GramInverse::from_matrix(Matrix::identity(4)).unwrap();
    let zero = covariance_from_zol(&Matrix::zeros(4, horizon), &gram, &sigma_e).unwrap();
    let exact_zero = zero == kron(&Matrix::identity(horizon), &sigma_e);

    outcome(
        rel <= C5_REL_FROBENIUS && exact_zero,
        format!(
            "relative Frobenius error {:.2}% over {} trials (I_L alone: {:.1}%); Z_ol = 0 exact: {}",
            100.0 * rel,
            C5_TRIALS,
            100.0 * naive,
            exact_zero
        ),
    )
}

/// Identified MIMO detector state and covariance used by criteria 6 and 8.
fn realistic_sigma() -> (Matrix, ResidualState, Matrix) {
    let phi = Matrix::from_rows(&[[0.5, 0.1], [0.0, 0.3]]).unwrap();
    let bt = Matrix::from_rows(&[[1.0], [0.5]]).unwrap();
    let c = Matrix::identity(2);
    let d = Matrix::from_rows(&[[0.2], [0.0]]).unwrap();
    let k = Matrix::from_rows(&[[0.3, 0.0], [0.1, 0.2]]).unwrap();
    let sigma_e = Matrix::from_rows(&[[1.0, 0.3], [0.3, 0.5]]).unwrap();
    let plant = InnovationModel::from_predictor(phi, bt, c, d, k, sigma_e.clone()).unwrap();
    let mut rng = RngStream::new(66);
    let u = sysid::white_inputs(&mut rng, 400, 1, 1.0);
    let rec = plant.simulate(&u, &mut rng, None).unwrap();
    let ident = sysid::identify(&rec, 3).unwrap();
    let (horizon, p) = (5, 3);
    let cfg = DetectorConfig::new(horizon, p, 0.005, 1, 2, sigma_e).unwrap();
    let mut state = ResidualState::for_config(&cfg);
    for k in rec.len() - horizon - p..rec.len() {
        state.push_sample(rec.u(k), rec.y(k)).unwrap();
    }
    let sigma = residual_covariance(&state, &ident.gram, &cfg).unwrap();
    let r = compute_residual(&state, &assemble_blocks(&ident.markov, &cfg).unwrap()).unwrap();
    (sigma, state, r)
}

fn c6_calibration() -> Outcome {
    let (sigma, _, _) = realistic_sigma();
    let dim = sigma.rows();
    let g = chol(&sigma).unwrap();
    let taus = rrg_core::par::map_indexed(Exec::Parallel, C6_DRAWS, |i| {
        let mut rng = RngStream::derive(6, &[i as u64]);
        let w = numerics::gauss_draw(&mut rng, dim, 1.0);
        let r = mat_mul(&g, &w).unwrap();
        test_statistic(&r, &sigma).unwrap()
    });
    let mean = common::compensated_sum(taus.iter().copied()) / C6_DRAWS as f64;
    let band = 3.0 * (2.0 * dim as f64 / C6_DRAWS as f64).sqrt();
    outcome(
        (mean - dim as f64).abs() <= band,
        format!("mean τ = {mean:.4} vs L·l = {dim} (band ±{band:.4}, n = {C6_DRAWS})"),
    )
}

fn table2_scenario(fault: Option<FaultProfile>, seed: u64) -> BaselineConfig {
    BaselineConfig {
        d: 2.0,
        sigma_e: 1.0,
        u_level: 2.0,
        dhat: Some(2.04),
        horizon: 10,
        run_length: 2001,
        fault,
        seed,
        ..Default::default()
    }
}

fn c7_fixed_point() -> Outcome {
    let fault = FaultProfile {
        start: 400,
        end: 700,
        height: 5.0,
    };
    let cfg = table2_scenario(Some(fault), 7);
    let reference = float_run_detector(&cfg).unwrap();
    let formats = propose_formats(&reference.records, 6, None).unwrap();
    let run = fx_run_detector(&cfg, &formats).unwrap();
    let faulty: Vec<_> = run
        .rows
        .iter()
        .filter(|r| r.k + 1 >= fault.start + cfg.horizon && r.k < fault.end)
        .collect();
    let covered = faulty.iter().filter(|r| r.alarm).count() as f64 / faulty.len() as f64;

    let (mut windows, mut alarms) = (0usize, 0usize);
    for s in 0..C7_NOFAULT_RUNS {
        let clean = fx_run_detector(&table2_scenario(None, 1000 + s), &formats).unwrap();
        windows += clean.rows.len();
        alarms += clean.rows.iter().filter(|r| r.alarm).count();
    }
    let far = alarms as f64 / windows as f64;

    let float_ops = op_count_report(&reference);
    let fixed_ops = op_count_report(&run);
    let again = op_count_report(&fx_run_detector(&cfg, &formats).unwrap());
    let ops_ok = fixed_ops == again && fixed_ops.multipliers <= float_ops.multipliers;

    outcome(
        covered >= C7_COVERAGE && far < C7_FAR && ops_ok,
        format!(
            "coverage {:.1}% of {} faulty windows; no-fault FAR {:.3}% over {} windows; multipliers fixed {} vs float {}; {} saturations",
            100.0 * covered,
            faulty.len(),
            100.0 * far,
            windows,
            fixed_ops.multipliers,
            float_ops.multipliers,
            run.saturations
        ),
    )
}

fn c8_equivalences() -> Outcome {
    // quad_form against Σ^(-1/2) from an eigen-decomposition
    let (sigma, _, r) = realistic_sigma();
    let tau = test_statistic(&r, &sigma).unwrap();
    let w = common::mat_vec(&common::inverse_sqrt(&sigma), r.as_slice());
    let tau_eig = common::compensated_sum(w.iter().map(|v| v * v));
    let quad_err = (tau - tau_eig).abs() / tau.max(1.0);

    // streaming state against windows rebuilt from scratch
    let plant = exact_varx_plant();
    let mut rng = RngStream::new(88);
    let u = sysid::white_inputs(&mut rng, 600, 1, 1.0);
    let rec = plant.simulate(&u, &mut rng, None).unwrap();
    let ident = sysid::identify(&rec.slice(0, 400), 2).unwrap();
    let cfg = DetectorConfig::new(6, 2, 0.005, 1, 1, scalar(1.0)).unwrap();
    let mut det = Detector::new(cfg.clone(), &ident.markov, ident.gram.clone()).unwrap();
    let blocks = assemble_blocks(&ident.markov, &cfg).unwrap();
    let test = rec.slice(400, 600);
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..test.len())
        .map(|k| (test.u(k).to_vec(), test.y(k).to_vec()))
        .collect();
    let mut push_err = 0.0f64;
    for k in 0..test.len() {
        if let Some(d) = det.step(test.u(k), test.y(k)).unwrap() {
            let batch = ResidualState::from_window(6, 2, &samples[..=k]).unwrap();
            let r_b = compute_residual(&batch, &blocks).unwrap();
            let s_b = residual_covariance(&batch, &ident.gram, &cfg).unwrap();
            let r_s = compute_residual(det.state(), &blocks).unwrap();
            let s_s = residual_covariance(det.state(), &ident.gram, &cfg).unwrap();
            let tau_b = test_statistic(&r_b, &s_b).unwrap();
            push_err = push_err
                .max(r_b.sub(&r_s).unwrap().max_abs())
                .max(s_b.sub(&s_s).unwrap().max_abs())
                .max((d.tau - tau_b).abs() / tau_b.max(1.0));
        }
    }

    // wide fixed-point formats against the floating dataflow
    let wide = FormatMap::uniform(FxFormat::new(true, 64, 40).unwrap());
    let cfg = table2_scenario(
        Some(FaultProfile {
            start: 400,
            end: 700,
            height: 5.0,
        }),
        8,
    );
    let fx = fx_run_detector(&cfg, &wide).unwrap();
    let fl = float_run_detector(&cfg).unwrap();
    let wide_err = fx
        .rows
        .iter()
        .zip(&fl.rows)
        .map(|(a, b)| (a.tau - b.tau).abs())
        .fold(0.0, f64::max);

    outcome(
        quad_err <= C8_QUAD_TOL && push_err <= C8_PUSH_TOL && wide_err <= C8_WIDE_TOL,
        format!(
            "quad_form vs eigen {quad_err:.2e}; push vs batch {push_err:.2e}; wide fixed vs float {wide_err:.2e}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("threshold reproduction", c1_threshold),
        ("format table reproduction", c2_table_formats),
        ("baseline false-alarm rate", c3_far),
        ("SNR scaling of gain error", c4_snr_scaling),
        ("residual covariance", c5_covariance),
        ("chi-squared calibration", c6_calibration),
        ("fixed-point detection", c7_fixed_point),
        ("oracle equivalences", c8_equivalences),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!(
            "criterion {}: {verdict} | {name} | {} | {:.2}s",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
