use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use rrg_core::baseline::{self, far_sweep, snr_error_table};
use rrg_core::fixedpoint::{
    self, float_run_detector, fx_run_detector, op_count_report, propose_formats, DataflowGraph,
    FormatMap, Mode, OpCount,
};
use rrg_core::numerics::RngStream;
use rrg_core::residual::{self, Detector, DetectorConfig};
use rrg_core::sysid::{self, InnovationModel, IoRecord};
use rrg_core::Exec;

use crate::artifacts::{self, matrix, read_versioned, write_json, GramFile, MarkovFile};
use crate::config::RunConfig;
use crate::failure::{io_error, Failure};

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| io_error(&out, "create directory", e))?;
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_error(path, "open", e))
}

/// Runs `write` against a fresh file and flushes it.
fn write_file<E>(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>,
) -> Result<(), Failure>
where
    Failure: From<E>,
{
    let file = File::create(path).map_err(|e| io_error(path, "create", e))?;
    let mut w = BufWriter::new(file);
    write(&mut w).map_err(|e| Failure::from(e).context(path.display().to_string()))?;
    w.flush().map_err(|e| io_error(path, "write", e))
}

fn read_record(path: &Path) -> Result<IoRecord, Failure> {
    IoRecord::read_csv(open(path)?)
        .map_err(|e| Failure::from(e).context(path.display().to_string()))
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    path.ok_or_else(|| Failure::usage(format!("no {what} given")))
}

pub fn identify(cfg: RunConfig) -> Result<(), Failure> {
    let data = required(cfg.identify.data.clone(), "identification data (--data)")?;
    let rec = read_record(&data)?;
    let id = sysid::identify(&rec, cfg.identify.p)?;
    let out = prepare_out(&cfg)?;
    write_json(
        &out.join("markov.json"),
        &MarkovFile::from_identification(&id),
    )?;
    write_json(&out.join("gram.json"), &GramFile::from_gram(&id.gram))?;
    println!(
        "identified p={} m={} l={} from {} samples; D = {:?}",
        cfg.identify.p,
        rec.input_dim(),
        rec.output_dim(),
        rec.len(),
        id.markov.d().to_rows()
    );
    Ok(())
}

pub fn detect(cfg: RunConfig) -> Result<(), Failure> {
    let data = required(cfg.detect.data.clone(), "detection data (--data)")?;
    let out = cfg.out_dir();
    let markov_path = cfg
        .detect
        .markov
        .clone()
        .unwrap_or_else(|| out.join("markov.json"));
    let gram_path = cfg
        .detect
        .gram
        .clone()
        .unwrap_or_else(|| out.join("gram.json"));
    let markov_file: MarkovFile = read_versioned(&markov_path)?;
    let markov = markov_file.markov()?;
    let gram = read_versioned::<GramFile>(&gram_path)?.gram()?;
    let rec = read_record(&data)?;
    if rec.input_dim() != markov.input_dim() || rec.output_dim() != markov.output_dim() {
        return Err(Failure::data(format!(
            "{} has m={}, l={} but the model expects m={}, l={}",
            data.display(),
            rec.input_dim(),
            rec.output_dim(),
            markov.input_dim(),
            markov.output_dim()
        )));
    }
    let sigma_e = match &cfg.detect.sigma_e {
        Some(rows) => matrix(rows, "detect.sigma_e")?,
        None => markov_file.sigma_e_hat()?,
    };
    let dcfg = DetectorConfig::new(
        cfg.detect.horizon,
        markov.past_horizon(),
        cfg.detect.alpha,
        markov.input_dim(),
        markov.output_dim(),
        sigma_e,
    )?;
    let rows = Detector::new(dcfg, &markov, gram)?.run(&rec)?;
    let out = prepare_out(&cfg)?;
    write_file(&out.join("trace.csv"), |w| {
        residual::write_trace_csv(w, &rows)
    })?;
    let alarms = rows.iter().filter(|d| d.alarm).count();
    println!(
        "{} windows, {} alarms ({:.3}%), gamma = {:.4}",
        rows.len(),
        alarms,
        100.0 * alarms as f64 / rows.len() as f64,
        rows[0].gamma
    );
    Ok(())
}

pub fn sweep(mut cfg: RunConfig) -> Result<(), Failure> {
    cfg.require_seed()?;
    let exec = if cfg.sweep.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let s = &cfg.sweep;
    let grid = far_sweep(&cfg.baseline, &s.horizons, &s.snr_db, s.trials, exec)?;
    let table = snr_error_table(&cfg.baseline, &s.table_snr_db, s.table_trials, exec)?;
    let run = baseline::run(&cfg.baseline)?;
    let out = prepare_out(&cfg)?;
    write_file(&out.join("far_sweep.csv"), |w| grid.write_csv(w))?;
    write_file(&out.join("snr_table.csv"), |w| {
        baseline::write_snr_csv(w, &table)
    })?;
    write_file(&out.join("trace.csv"), |w| {
        baseline::write_trace_csv(w, &run.rows)
    })?;
    println!(
        "{} sweep cells, {} SNR rows, {} trace windows",
        grid.cells.len(),
        table.len(),
        run.rows.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct OpCountFile {
    schema_version: u32,
    float: OpCount,
    fixed: OpCount,
    saturations: u64,
}

pub fn fx(mut cfg: RunConfig) -> Result<(), Failure> {
    cfg.require_seed()?;
    let base = cfg.baseline.clone();
    let out = prepare_out(&cfg)?;
    let reference = baseline::run(&base)?;
    write_file(&out.join("trace.csv"), |w| {
        baseline::write_trace_csv(w, &reference.rows)
    })?;

    let formats = match &cfg.fx.formats {
        Some(path) => FormatMap::read_json(open(path)?)
            .map_err(|e| Failure::from(e).context(path.display().to_string()))?,
        None => {
            let statics = match &cfg.fx.static_bounds {
                Some(path) => Some(
                    FormatMap::read_json(open(path)?)
                        .map_err(|e| Failure::from(e).context(path.display().to_string()))?,
                ),
                None => None,
            };
            let float = float_run_detector(&base)?;
            let proposals = propose_formats(&float.records, cfg.fx.frac, statics.as_ref())?;
            write_file(&out.join("ranges.csv"), |w| {
                fixedpoint::write_ranges_csv(w, &float.records, &proposals)
            })?;
            write_file(&out.join("formats.json"), |w| proposals.write_json(&mut *w))?;
            proposals
        }
    };

    let fixed = fx_run_detector(&base, &formats)?;
    write_file(&out.join("fx_trace.csv"), |w| {
        fixedpoint::write_fx_trace_csv(w, &fixed.rows)
    })?;
    let report = OpCountFile {
        schema_version: artifacts::SCHEMA_VERSION,
        float: DataflowGraph::baseline(base.u_level, base.horizon).count(Mode::Float),
        fixed: op_count_report(&fixed),
        saturations: fixed.saturations,
    };
    write_json(&out.join("op_count.json"), &report)?;
    let alarms = fixed.rows.iter().filter(|r| r.alarm).count();
    println!(
        "fixed-point run: {} windows, {} alarms, {} saturations; dhat = {}",
        fixed.rows.len(),
        alarms,
        fixed.saturations,
        fixed.dhat
    );
    Ok(())
}

pub fn simulate(mut cfg: RunConfig) -> Result<(), Failure> {
    let seed = cfg.require_seed()?;
    let s = &cfg.simulate;
    let pl = &s.plant;
    let plant = InnovationModel::from_predictor(
        matrix(&pl.phi, "plant.phi")?,
        matrix(&pl.b_tilde, "plant.b_tilde")?,
        matrix(&pl.c, "plant.c")?,
        matrix(&pl.d, "plant.d")?,
        matrix(&pl.k, "plant.k")?,
        matrix(&pl.sigma_e, "plant.sigma_e")?,
    )
    .map_err(|e| Failure::config(format!("plant: {e}")))?;
    if s.id_samples == 0 || s.samples == 0 {
        return Err(Failure::config("sample counts must be positive"));
    }
    let m = plant.input_dim();
    let mut rng = RngStream::derive(seed, &[0]);
    let u = sysid::white_inputs(&mut rng, s.id_samples, m, s.input_sigma);
    let id_rec = plant.simulate(&u, &mut rng, None)?;
    let mut rng = RngStream::derive(seed, &[1]);
    let u = sysid::white_inputs(&mut rng, s.samples, m, s.input_sigma);
    let rec = plant.simulate(&u, &mut rng, s.fault.as_ref())?;
    let out = prepare_out(&cfg)?;
    write_file(&out.join("id.csv"), |w| id_rec.write_csv(w))?;
    write_file(&out.join("data.csv"), |w| rec.write_csv(w))?;
    println!(
        "wrote {} identification and {} detection samples",
        id_rec.len(),
        rec.len()
    );
    Ok(())
}
