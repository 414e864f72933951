//! Executes a [`RunConfig`] and writes its artefacts.
//!
//! Every run writes CSV curves, optional `checkpoints/*.tnlc` files and
//! finally `report.json`, which lists every emitted file in its manifest.
//! `report.json` is written to a temporary name and renamed into place, so it
//! is either absent or complete.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentKind, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{CkaMatrix, VarianceReport};
use crate::nn::{write_checkpoint, Checkpoint, Layer};
use crate::probes::ProbeCurve;
use crate::tunnel::{
    run_capacity_sweep, run_development_experiment, run_metrics_experiment, run_ood_experiment,
    run_shorter_network_experiment, run_stitch_experiment, run_tunnel_experiment, TunnelReport, SCHEMA_VERSION,
};

pub const REPORT_FILE: &str = "report.json";

/// Chooses the output directory: explicit flag, then config, then the
/// `TUNNELSCOPE_OUT` environment value.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &RunConfig, env: Option<&str>) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .ok_or_else(|| Error::Config("no output directory: pass --out, set `out`, or set TUNNELSCOPE_OUT".into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub role: &'static str,
}

#[derive(Serialize)]
struct Envelope<'a, R: Serialize> {
    schema_version: u32,
    tool: &'static str,
    tool_version: &'static str,
    kind: ExperimentKind,
    config: &'a RunConfig,
    result: &'a R,
    manifest: &'a [ManifestEntry],
}

/// Outcome of [`run`]: the files written and a human-readable summary.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Vec<ManifestEntry>,
    pub summary: String,
}

struct Writer {
    dir: PathBuf,
    manifest: Vec<ManifestEntry>,
}

fn fmt_f(v: f64) -> String {
    v.to_string()
}

impl Writer {
    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.manifest.push(ManifestEntry {
            path: name.to_owned(),
            role: "csv",
        });
        Ok(())
    }

    fn probe_curve(&mut self, name: &str, c: &ProbeCurve) -> Result<()> {
        self.csv(
            name,
            &["layer", "value", "std"],
            c.mean
                .iter()
                .zip(&c.std)
                .enumerate()
                .map(|(l, (m, s))| vec![l.to_string(), fmt_f(*m), fmt_f(*s)]),
        )
    }

    fn counts(&mut self, name: &str, values: &[usize]) -> Result<()> {
        self.csv(
            name,
            &["layer", "value", "std"],
            values
                .iter()
                .enumerate()
                .map(|(l, v)| vec![l.to_string(), v.to_string(), "0".into()]),
        )
    }

    fn variance(&mut self, name: &str, values: &[VarianceReport]) -> Result<()> {
        self.csv(
            name,
            &["layer", "intra", "inter"],
            values
                .iter()
                .enumerate()
                .map(|(l, v)| vec![l.to_string(), fmt_f(v.intra), fmt_f(v.inter)]),
        )
    }

    fn drift(&mut self, name: &str, values: &[Option<f64>]) -> Result<()> {
        self.csv(
            name,
            &["layer", "value", "std"],
            values
                .iter()
                .enumerate()
                .filter_map(|(l, v)| v.map(|v| vec![l.to_string(), fmt_f(v), "0".into()])),
        )
    }

    fn cka(&mut self, name: &str, m: &CkaMatrix) -> Result<()> {
        let n = m.len();
        self.csv(
            name,
            &["row", "col", "value"],
            (0..n).flat_map(|i| {
                (0..n).map(move |j| {
                    vec![
                        i.to_string(),
                        j.to_string(),
                        m.get(i, j).map(fmt_f).unwrap_or_default(),
                    ]
                })
            }),
        )
    }

    fn geometry(&mut self, ranks: &[usize], variance: &[VarianceReport], drift: &[Option<f64>], cka: Option<&CkaMatrix>) -> Result<()> {
        self.counts("rank_curve.csv", ranks)?;
        self.variance("variance_curve.csv", variance)?;
        self.drift("l1_drift.csv", drift)?;
        if let Some(m) = cka {
            self.cka("cka_matrix.csv", m)?;
        }
        Ok(())
    }

    fn tunnel(&mut self, r: &TunnelReport) -> Result<()> {
        self.probe_curve("probe_curve.csv", &r.probe_curve)?;
        self.geometry(&r.rank_curve, &r.variance_curve, &r.l1_drift, r.cka.as_ref())
    }

    fn checkpoint(&mut self, name: &str, layers: &[Layer<f32>]) -> Result<()> {
        let rel = format!("checkpoints/{name}.tnlc");
        fs::create_dir_all(self.dir.join("checkpoints"))?;
        write_checkpoint(&self.dir.join(&rel), layers)?;
        self.manifest.push(ManifestEntry {
            path: rel,
            role: "checkpoint",
        });
        Ok(())
    }

    fn checkpoints(&mut self, all: &[Checkpoint]) -> Result<()> {
        for c in all {
            self.checkpoint(&format!("epoch_{:04}", c.epoch), &c.layers)?;
        }
        Ok(())
    }

    fn finish<R: Serialize>(mut self, cfg: &RunConfig, result: &R, summary: String) -> Result<RunSummary> {
        self.manifest.push(ManifestEntry {
            path: REPORT_FILE.to_owned(),
            role: "report",
        });
        let envelope = Envelope {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            kind: cfg.kind,
            config: cfg,
            result,
            manifest: &self.manifest,
        };
        let mut bytes = serde_json::to_vec_pretty(&envelope)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join(REPORT_FILE), &bytes)?;
        Ok(RunSummary {
            out_dir: self.dir,
            manifest: self.manifest,
            summary,
        })
    }
}

/// Writes `bytes` to a sibling temporary file, syncs it, then renames it
/// over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn boundary_line(r: &TunnelReport) -> String {
    format!(
        "tunnel start: layer {} at 95% ({}), layer {} at 98% ({}) of {} layers; extractor fraction {:.2}; reference accuracy {:.4}",
        r.tunnel_start_95.layer,
        if r.tunnel_start_95.found { "found" } else { "no tunnel" },
        r.tunnel_start_98.layer,
        if r.tunnel_start_98.found { "found" } else { "no tunnel" },
        r.num_layers,
        r.extractor_fraction_95,
        r.reference_accuracy,
    )
}

/// Runs the experiment selected by `cfg.kind` and writes all artefacts into
/// `out_dir`, creating it when needed.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    if !out_dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", out_dir.display())));
    }
    let mut w = Writer {
        dir: out_dir.to_path_buf(),
        manifest: Vec::new(),
    };
    let exp = &cfg.experiment;
    match cfg.kind {
        ExperimentKind::Tunnel => {
            let run = run_tunnel_experiment(exp)?;
            w.tunnel(&run.report)?;
            w.checkpoints(&run.outcome.checkpoints)?;
            let line = boundary_line(&run.report);
            w.finish(cfg, &run.report, line)
        }
        ExperimentKind::Ood => {
            let run = run_ood_experiment(exp)?;
            let r = &run.report;
            w.tunnel(&r.in_distribution)?;
            w.probe_curve("ood_probe_curve.csv", &r.ood_probe_curve)?;
            w.counts("ood_rank_curve.csv", &r.ood_rank_curve)?;
            w.checkpoints(&run.source.outcome.checkpoints)?;
            let line = format!(
                "{}\nOOD probe accuracy peaks at layer {} ({:.4}){}",
                boundary_line(&r.in_distribution),
                r.ood_best_layer,
                r.ood_probe_curve.mean[r.ood_best_layer],
                if r.sanity_mode { " [sanity mode: target = source]" } else { "" }
            );
            w.finish(cfg, r, line)
        }
        ExperimentKind::Develop => {
            let run = run_development_experiment(exp)?;
            let r = &run.report;
            w.tunnel(&r.final_report)?;
            let epochs = &r.checkpoint_epochs;
            w.csv(
                "weight_change.csv",
                &["from_epoch", "to_epoch", "layer", "value"],
                r.weight_change.iter().enumerate().flat_map(|(p, row)| {
                    row.iter()
                        .enumerate()
                        .map(move |(l, v)| vec![epochs[p].to_string(), epochs[p + 1].to_string(), l.to_string(), fmt_f(*v)])
                }),
            )?;
            w.csv(
                "rank_evolution.csv",
                &["step", "layer", "rank"],
                r.rank_steps.iter().zip(&r.rank_evolution).flat_map(|(s, row)| {
                    row.iter()
                        .enumerate()
                        .map(move |(l, v)| vec![s.to_string(), l.to_string(), v.to_string()])
                }),
            )?;
            w.checkpoints(&run.outcome.checkpoints)?;
            let line = format!(
                "{}\nmean weight change: extractor {}, tunnel {}",
                boundary_line(&r.final_report),
                r.mean_change_extractor.map_or("n/a".into(), |v| format!("{v:.5}")),
                r.mean_change_tunnel.map_or("n/a".into(), |v| format!("{v:.5}")),
            );
            w.finish(cfg, r, line)
        }
        ExperimentKind::Stitch => {
            let run = run_stitch_experiment(exp)?;
            let g = &run.grid;
            w.probe_curve("task1_probe_curve.csv", &g.task1.probe_curve)?;
            w.csv(
                "stitch_grid.csv",
                &["extractor", "tunnel", "task", "accuracy"],
                g.entries.iter().map(|e| {
                    vec![e.extractor.to_string(), e.tunnel.to_string(), e.task.to_string(), fmt_f(e.accuracy)]
                }),
            )?;
            w.csv(
                "substitution_sweeps.csv",
                &["eval_task", "bottom", "top", "layers_from_bottom", "accuracy"],
                g.sweeps.iter().flat_map(|s| {
                    s.accuracy.iter().enumerate().map(move |(x, a)| {
                        vec![s.eval_task.to_string(), s.bottom.to_string(), s.top.to_string(), x.to_string(), fmt_f(*a)]
                    })
                }),
            )?;
            w.checkpoint("task1_final", &run.task1.network.layers)?;
            w.checkpoint("task2_final", &run.task2.network.layers)?;
            let acc = |e, t, k| g.accuracy(e, t, k).unwrap_or(f64::NAN);
            let line = format!(
                "split after {} hidden layers (task-1 tunnel start {})\ntask 1: E1+T1 {:.4}  E1+T2 {:.4}  E2+T2 {:.4}  E2+T1 {:.4}\ntask 2: E2+T2 {:.4}  E2+T1 {:.4}  E1+T1 {:.4}  E1+T2 {:.4}",
                g.split,
                g.task1.tunnel_start_95.layer,
                acc(1, 1, 1),
                acc(1, 2, 1),
                acc(2, 2, 1),
                acc(2, 1, 1),
                acc(2, 2, 2),
                acc(2, 1, 2),
                acc(1, 1, 2),
                acc(1, 2, 2),
            );
            w.finish(cfg, g, line)
        }
        ExperimentKind::Sweep => {
            let r = run_capacity_sweep(exp)?;
            w.csv(
                "sweep.csv",
                &[
                    "depth",
                    "width",
                    "classes",
                    "epochs",
                    "test_accuracy",
                    "tunnel_start_95",
                    "tunnel_start_98",
                    "extractor_fraction_95",
                    "extractor_fraction_98",
                ],
                r.cells.iter().map(|c| {
                    vec![
                        c.depth.to_string(),
                        c.width.to_string(),
                        c.classes.to_string(),
                        c.epochs.to_string(),
                        fmt_f(c.test_accuracy),
                        c.tunnel_start_95.to_string(),
                        c.tunnel_start_98.to_string(),
                        fmt_f(c.extractor_fraction_95),
                        fmt_f(c.extractor_fraction_98),
                    ]
                }),
            )?;
            let line = r
                .cells
                .iter()
                .map(|c| {
                    format!(
                        "depth {:>2} width {:>4} classes {:>3}: tunnel start {} (95%), {} (98%), accuracy {:.4}",
                        c.depth, c.width, c.classes, c.tunnel_start_95, c.tunnel_start_98, c.test_accuracy
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            w.finish(cfg, &r, line)
        }
        ExperimentKind::Shorter => {
            let r = run_shorter_network_experiment(exp)?;
            w.csv(
                "shorter.csv",
                &["depth", "task1_after_task1", "task1_after_task2", "task2_after_task2", "forgetting"],
                r.rows.iter().map(|row| {
                    vec![
                        row.depth.to_string(),
                        fmt_f(row.task1_after_task1),
                        fmt_f(row.task1_after_task2),
                        fmt_f(row.task2_after_task2),
                        fmt_f(row.forgetting),
                    ]
                }),
            )?;
            let line = r
                .rows
                .iter()
                .map(|row| {
                    format!(
                        "depth {:>2}: task-1 accuracy {:.4}, forgetting {:.4}",
                        row.depth, row.task1_after_task1, row.forgetting
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            let line = format!("extractor length {} (task-1 tunnel start {})\n{line}", r.extractor_length, r.task1_tunnel_start_95);
            w.finish(cfg, &r, line)
        }
        ExperimentKind::Metrics => {
            let run = run_metrics_experiment(exp)?;
            let r = &run.report;
            w.geometry(&r.rank_curve, &r.variance_curve, &r.l1_drift, r.cka.as_ref())?;
            if let Some(outcome) = &run.outcome {
                w.checkpoints(&outcome.checkpoints)?;
            }
            let line = format!("ranks {:?}; test accuracy {:.4}", r.rank_curve, r.test_accuracy);
            w.finish(cfg, r, line)
        }
    }
}
