use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono_field::field::ChronoField;
use chrono_field::io::{config_digest, hex, load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_ppm};
use chrono_field::metrics::{temporal_mse_series, time_grid, StabilityReport};
use chrono_field::render::{render_image, Camera, RenderOptions};
use chrono_field::synth::{default_view, generate_1d_signal, generate_dataset, ChronoDataset, ToySignal};
use chrono_field::tensor::suite::op_gradient_suite;
use chrono_field::train::{evaluate, fit_1d, mean_embedding, pipeline_gradient_check, train, Fit1dConfig, Fit1dReport, Trainer, LOG_HEADER};
use chrono_field::Error;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::run::{io_err, write_json, RunDir};
use crate::{Command, Common, SplitArg};

const CHECKPOINT: &str = "checkpoint.bin";
const OP_TOLERANCE: f64 = 1e-4;
const PIPELINE_TOLERANCE: f64 = 1e-3;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    GradientCheck(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::GradientCheck(s) => write!(f, "gradient check failed: {s}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Config(_) | Error::InvalidArgument(_)) => 2,
            CliError::Core(Error::Data(_) | Error::Io { .. } | Error::Format(_)) => 3,
            CliError::Core(Error::NonFinite(_) | Error::Shape { .. }) | CliError::GradientCheck(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(common: &Common, command: Command) -> Result<()> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), common.preset)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    let digest = hex(&config_digest(&cfg)?);
    let ctx = Ctx { common, cfg, digest };
    match command {
        Command::GenData => ctx.gen_data(),
        Command::GenSignal => ctx.gen_signal(),
        Command::Fit1d => ctx.fit1d(),
        Command::Train { data } => ctx.train(&data),
        Command::Render {
            checkpoint,
            data,
            time,
            illum,
            view,
        } => ctx.render(&checkpoint, &data, time, &illum, &view),
        Command::SweepTime {
            checkpoint,
            data,
            illum,
            view,
            steps,
            frames,
        } => ctx.sweep(&checkpoint, &data, &illum, &view, steps, frames),
        Command::Evaluate { checkpoint, data, split } => ctx.evaluate(&checkpoint, &data, split),
        Command::GradientCheck => ctx.gradient_check(),
    }
}

struct Ctx<'a> {
    common: &'a Common,
    cfg: ExperimentConfig,
    digest: String,
}

/// Where the illumination vector of a render comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum IllumSource {
    Image(usize),
    File(std::path::PathBuf),
    Interp(usize, usize, f64),
    Mean,
}

impl IllumSource {
    pub fn parse(s: &str) -> std::result::Result<Self, Error> {
        let bad = || Error::Config(format!("bad --illum '{s}' (image:<i> | file:<path> | interp:<i>,<j>,<alpha> | mean)"));
        if s == "mean" {
            return Ok(IllumSource::Mean);
        }
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "image" => arg.parse().map(IllumSource::Image).map_err(|_| bad()),
            "file" => Ok(IllumSource::File(arg.into())),
            "interp" => {
                let parts: Vec<&str> = arg.split(',').collect();
                if parts.len() != 3 {
                    return Err(bad());
                }
                let i = parts[0].trim().parse().map_err(|_| bad())?;
                let j = parts[1].trim().parse().map_err(|_| bad())?;
                let a: f64 = parts[2].trim().parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Config(format!("interpolation weight {a} outside [0, 1]")));
                }
                Ok(IllumSource::Interp(i, j, a))
            }
            _ => Err(bad()),
        }
    }

    fn resolve(&self, field: &ChronoField<f32>, ds: &ChronoDataset) -> std::result::Result<Vec<f64>, Error> {
        let row = |i: usize| -> std::result::Result<Vec<f64>, Error> {
            if i >= ds.images.len() {
                return Err(Error::Config(format!("image {i} out of range (dataset has {})", ds.images.len())));
            }
            Ok(field.illumination(i).iter().map(|&v| v as f64).collect())
        };
        match self {
            IllumSource::Image(i) => row(*i),
            IllumSource::Interp(i, j, a) => {
                let (x, y) = (row(*i)?, row(*j)?);
                Ok(x.iter().zip(&y).map(|(x, y)| (1.0 - a) * x + a * y).collect())
            }
            IllumSource::Mean => Ok(mean_embedding(field, &ds.train_indices())),
            IllumSource::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                let v: Vec<f64> = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
                if v.len() != field.illum_dim() {
                    return Err(Error::Data(format!(
                        "{} holds {} values, the field expects {}",
                        p.display(),
                        v.len(),
                        field.illum_dim()
                    )));
                }
                Ok(v)
            }
        }
    }
}

impl Ctx<'_> {
    fn out(&self, default: &str) -> std::path::PathBuf {
        self.common.out.clone().unwrap_or_else(|| default.into())
    }

    fn seed(&self) -> u64 {
        self.cfg.training.seed
    }

    fn gen_data(&self) -> Result<()> {
        let run = RunDir::open(&self.out("data"), self.common.force)?;
        let ds = generate_dataset(&self.cfg.data)?;
        save_dataset(&run.path, &ds)?;
        run.write_text("config.toml", &self.cfg.to_toml()?)?;
        println!(
            "{} images ({} test), transitions {:?} -> {}",
            ds.images.len(),
            ds.test_indices().len(),
            ds.transitions,
            run.path.display()
        );
        run.finish("gen-data", self.cfg.data.seed, &self.digest, &ds.transitions)?;
        Ok(())
    }

    fn gen_signal(&self) -> Result<()> {
        let run = RunDir::open(&self.out("signal"), self.common.force)?;
        let sig = generate_1d_signal(&self.cfg.signal)?;
        run.write_text("signal.csv", &signal_csv(&sig, &[]))?;
        run.write_json("signal.json", &sig)?;
        println!("{} samples, transitions {:?}", sig.times.len(), sig.transitions());
        run.finish("gen-signal", self.cfg.signal.seed, &self.digest, &sig.transitions())?;
        Ok(())
    }

    fn fit1d(&self) -> Result<()> {
        let run = RunDir::open(&self.out("fit1d"), self.common.force)?;
        let sig = generate_1d_signal(&self.cfg.signal)?;
        let tol = self.cfg.fit1d.tolerance;
        #[derive(Serialize)]
        struct Row {
            report: Fit1dReport,
            matched_transitions: usize,
        }
        let mut rows = Vec::new();
        let mut preds = Vec::new();
        println!("{:<28} {:>8} {:>12} {:>12} {:>10}", "encoding", "params", "mse_clean", "mse_noisy", "recovered");
        for enc in &self.cfg.fit1d.encodings {
            let fc = Fit1dConfig {
                encoding: *enc,
                ..self.cfg.fit1d.fit.clone()
            };
            let (model, report) = fit_1d::<f64>(&sig, &fc)?;
            preds.push(model.predict(&sig.times)?);
            let matched = sig
                .transitions()
                .iter()
                .filter(|&&t| report.recovered_transitions.iter().any(|&r| (r - t).abs() <= tol))
                .count();
            println!(
                "{:<28} {:>8} {:>12.3e} {:>12.3e} {:>7}/{}",
                report.encoding,
                report.parameter_count,
                report.mse_to_clean,
                report.mse_to_noisy,
                matched,
                sig.transitions().len()
            );
            rows.push(Row {
                report,
                matched_transitions: matched,
            });
        }
        run.write_text("signal.csv", &signal_csv(&sig, &preds))?;
        run.write_json("fit1d.json", &rows)?;
        run.finish("fit1d", self.cfg.fit1d.fit.seed, &self.digest, &sig.transitions())?;
        Ok(())
    }

    fn train(&self, data: &Path) -> Result<()> {
        let ds = load_dataset(data)?;
        let run = RunDir::open(&self.out("run"), self.common.force)?;
        run.write_text("config.toml", &self.cfg.to_toml()?)?;
        let digest = config_digest(&self.cfg)?;
        let mut field = ChronoField::<f32>::new(self.cfg.model.clone(), ds.images.len())?;
        let mut trainer = Trainer::<f32>::new(&ds, self.cfg.training.clone())?;
        let log_path = run.file("train_log.csv");
        let file = std::fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
        let mut log = std::io::LineWriter::new(file);
        writeln!(log, "{LOG_HEADER}").map_err(|e| io_err(&log_path, e))?;
        let every = self.cfg.training.checkpoint_every;
        let total = self.cfg.training.iterations;
        let ckpt = run.file(CHECKPOINT);
        println!("{} parameters, {} training rays", field.num_parameters(), trainer.pool().len());
        let report = train(&mut field, &mut trainer, |s, f| {
            writeln!(log, "{}", s.csv_row()).map_err(|e| io_err(&log_path, e))?;
            if every > 0 && s.iteration % every == 0 && s.iteration < total {
                save_checkpoint(&ckpt, f, &digest)?;
                println!("iter {:>7}  loss {:.5}  lr {:.2e}  {:.0}s", s.iteration, s.loss_fine, s.lr, s.seconds);
            }
            Ok(())
        });
        log.flush().map_err(|e| io_err(&log_path, e))?;
        let report = report?;
        save_checkpoint(&ckpt, &field, &digest)?;
        println!(
            "probe loss {:.5} -> {:.5} in {:.0}s",
            report.probe_loss_initial, report.probe_loss_final, report.seconds
        );
        run.finish("train", self.seed(), &self.digest, &report)?;
        Ok(())
    }

    fn load(&self, checkpoint: &Path, data: &Path) -> Result<(ChronoField<f32>, ChronoDataset)> {
        let ck = load_checkpoint(checkpoint)?;
        if hex(&ck.digest) != self.digest {
            eprintln!("note: checkpoint was trained under a different config digest");
        }
        let ds = load_dataset(data)?;
        if ck.num_images != ds.images.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} embeddings but the dataset has {} images",
                ck.num_images,
                ds.images.len()
            ))
            .into());
        }
        Ok((ck.into_field()?, ds))
    }

    fn view(&self, spec: &str, ds: &ChronoDataset) -> Result<Camera> {
        if spec == "default" {
            return Ok(default_view(&self.cfg.data)?);
        }
        let i: usize = spec
            .strip_prefix("image:")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad --view '{spec}' (default | image:<i>)")))?;
        ds.images
            .get(i)
            .map(|im| im.camera.clone())
            .ok_or_else(|| Error::Config(format!("view image {i} out of range")).into())
    }

    fn render(&self, checkpoint: &Path, data: &Path, t: f64, illum: &str, view: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("time {t} outside [0, 1]")).into());
        }
        let source = IllumSource::parse(illum)?;
        let (field, ds) = self.load(checkpoint, data)?;
        let camera = self.view(view, &ds)?;
        let ell = source.resolve(&field, &ds)?;
        let mut opts = RenderOptions::eval(self.cfg.training.sampling);
        opts.threads = self.common.threads;
        let img = render_image(&field, &camera, t, &ell, &opts)?.image;
        let out = self.out("render.ppm");
        if out.exists() && !self.common.force {
            return Err(Error::Config(format!("{} exists; pass --force to overwrite", out.display())).into());
        }
        write_ppm(&out, &img)?;
        println!("{}", out.display());
        Ok(())
    }

    fn sweep(&self, checkpoint: &Path, data: &Path, illum: &str, view: &str, steps: Option<usize>, frames: bool) -> Result<()> {
        let source = IllumSource::parse(illum)?;
        let (field, ds) = self.load(checkpoint, data)?;
        let camera = self.view(view, &ds)?;
        let ell = source.resolve(&field, &ds)?;
        let steps = steps.unwrap_or(self.cfg.evaluation.sweep_steps);
        let run = RunDir::open(&self.out("sweep"), self.common.force)?;
        let grid = time_grid(steps);
        let sweep = temporal_mse_series(&field, &camera, &ell, &grid, &self.cfg.training.sampling, self.common.threads)?;
        let truth = ds.transitions.clone();
        let report = StabilityReport::new(
            &sweep.grid,
            sweep.mse_series.clone(),
            &self.cfg.evaluation.peaks,
            Some((truth.as_slice(), self.cfg.evaluation.match_window)),
        )?;
        if frames {
            for (k, f) in sweep.frames.iter().enumerate() {
                write_ppm(&run.file(&format!("frame_{k:04}.ppm")), f)?;
            }
        }
        run.write_text("mse_series.csv", &report.to_csv())?;
        run.write_json("stability.json", &report)?;
        println!(
            "mean MSE {:.4e} (x1e3 {:.4}), entropy {:.4}, transitions {:?}",
            report.mean_mse, report.mean_mse_scaled, report.entropy, report.detected_transitions
        );
        run.finish("sweep-time", self.seed(), &self.digest, &report)?;
        Ok(())
    }

    fn evaluate(&self, checkpoint: &Path, data: &Path, split: SplitArg) -> Result<()> {
        let (field, ds) = self.load(checkpoint, data)?;
        let images = match split {
            SplitArg::Test => ds.test_indices(),
            SplitArg::Train => ds.train_indices(),
        };
        if images.is_empty() {
            return Err(Error::Data("the requested split is empty".into()).into());
        }
        let run = RunDir::open(&self.out("eval"), self.common.force)?;
        let report = evaluate(&field, &ds, &images, &self.cfg.eval_config())?;
        for s in &report.images {
            println!("image {:>4}  t {:.3}  psnr {:6.2}  ssim {:.4}", s.image, s.time, s.psnr, s.ssim);
        }
        println!("mean psnr {:.2} dB, mean ssim {:.4}", report.mean_psnr, report.mean_ssim);
        run.write_json("eval.json", &report)?;
        run.finish("evaluate", self.seed(), &self.digest, &(report.mean_psnr, report.mean_ssim))?;
        Ok(())
    }

    fn gradient_check(&self) -> Result<()> {
        let seed = self.seed();
        let mut failed = Vec::new();
        for (name, rep) in op_gradient_suite(seed, OP_TOLERANCE)? {
            println!("{:<16} {:.3e} {}", name, rep.max_rel_error(), verdict(rep.passed()));
            if !rep.passed() {
                failed.push(name.to_string());
            }
        }
        let (names, rep) = pipeline_gradient_check(seed, PIPELINE_TOLERANCE)?;
        for (name, p) in names.iter().zip(&rep.params) {
            println!("{:<16} {:.3e}", name, p.max_rel_error);
        }
        println!("{:<16} {:.3e} {}", "pipeline", rep.max_rel_error(), verdict(rep.passed()));
        if !rep.passed() {
            failed.push("pipeline".into());
        }
        if let Some(out) = &self.common.out {
            write_json(&out.with_extension("json"), &failed)?;
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(CliError::GradientCheck(failed.join(", ")))
        }
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

/// `time,value_0..,clean_0..,pred<k>_0..` rows.
fn signal_csv(sig: &ToySignal, preds: &[Vec<f64>]) -> String {
    let d = sig.dimension();
    let clean = sig.clean_values();
    let mut head = vec!["time".to_string()];
    head.extend((0..d).map(|c| format!("value_{c}")));
    head.extend((0..d).map(|c| format!("clean_{c}")));
    for k in 0..preds.len() {
        head.extend((0..d).map(|c| format!("pred{k}_{c}")));
    }
    let mut s = head.join(",") + "\n";
    for (i, t) in sig.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(sig.values[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
        row.extend(clean[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
        for p in preds {
            row.extend(p[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
        }
        s += &row.join(",");
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn illum_sources_parse() {
        assert_eq!(IllumSource::parse("mean").unwrap(), IllumSource::Mean);
        assert_eq!(IllumSource::parse("image:7").unwrap(), IllumSource::Image(7));
        assert_eq!(IllumSource::parse("interp:1, 2,0.25").unwrap(), IllumSource::Interp(1, 2, 0.25));
        assert_eq!(IllumSource::parse("file:a.json").unwrap(), IllumSource::File("a.json".into()));
        for bad in ["", "image:x", "interp:1,2", "interp:1,2,1.5", "sun:1"] {
            assert!(matches!(IllumSource::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::Data("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::NonFinite("x")).exit_code(), 4);
        assert_eq!(CliError::GradientCheck("x".into()).exit_code(), 4);
    }
}
