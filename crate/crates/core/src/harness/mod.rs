//! Command implementations behind the `clueassign` binary.
//!
//! Each command takes fully resolved options and returns the bytes it would
//! write, so tests can drive them without spawning a process.

pub mod cli;
pub mod config;
pub mod memsim;

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::archive;
use crate::assign::{AssignerKind, AssignerSettings, Assignment, Verdict};
use crate::enhance::{self, EnhanceParams};
use crate::error::{Error, Result};
use crate::ingest;
use crate::linalg::Matrix;
use crate::memory;
use crate::report::{self, BucketReport, BucketTally, ReportFormat};
use crate::scene::Scene;
use crate::synth::{self, SynthConfig};

pub use config::{HarnessConfig, MemorySimConfig};
pub use memsim::{run_memory_sim, Trajectory};

/// Where `assign` gets its scenes.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    /// `count` generated scenes, optionally with all jitter disabled.
    Synth { cfg: SynthConfig, count: usize, noiseless: bool },
    Files { gt: PathBuf, pred: PathBuf },
}

/// Runs `f` on a pool of `threads` workers (0 = available parallelism).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn generate_scenes(cfg: &SynthConfig, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| synth::generate_scene(cfg, i))
        .collect()
}

pub fn load_scenes(source: &SceneSource, scores_are_probabilities: bool) -> Result<Vec<Scene>> {
    match source {
        SceneSource::Synth { cfg, count, noiseless } => {
            let cfg = if *noiseless { cfg.clone().noiseless() } else { cfg.clone() };
            generate_scenes(&cfg, *count)
        }
        SceneSource::Files { gt, pred } => {
            let gt = ingest::load_ground_truth(gt)?;
            let preds = ingest::load_predictions(pred, gt.category_count(), scores_are_probabilities)?;
            ingest::build_scenes(&gt, &preds)
        }
    }
}

#[derive(Serialize)]
struct SceneAssignment<'a> {
    image_id: u64,
    thresholds: &'a [f64],
    per_gt_positives: &'a [Vec<usize>],
    verdicts: &'a [Verdict],
}

#[derive(Serialize)]
struct AssignReport<'a> {
    assigner: AssignerKind,
    scenes: Vec<SceneAssignment<'a>>,
}

pub fn assign_scenes(settings: &AssignerSettings, kind: AssignerKind, scenes: &[Scene]) -> Result<Vec<Assignment>> {
    scenes.par_iter().map(|s| settings.run(kind, s)).collect()
}

/// JSON: one object per scene with thresholds, per-GT lists and verdicts.
/// CSV: one row per prediction.
pub fn render_assignments(kind: AssignerKind, scenes: &[Scene], results: &[Assignment], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let doc = AssignReport {
                assigner: kind,
                scenes: scenes
                    .iter()
                    .zip(results)
                    .map(|(s, a)| SceneAssignment {
                        image_id: s.image_id(),
                        thresholds: &a.thresholds,
                        per_gt_positives: &a.per_gt_positives,
                        verdicts: &a.per_pred,
                    })
                    .collect(),
            };
            let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut out = String::from("image_id,pred,verdict,gt,confidence\n");
            for (s, a) in scenes.iter().zip(results) {
                for (p, v) in a.per_pred.iter().enumerate() {
                    let _ = match v {
                        Verdict::Negative => writeln!(out, "{},{p},negative,,", s.image_id()),
                        Verdict::Ignored => writeln!(out, "{},{p},ignored,,", s.image_id()),
                        Verdict::Positive { gt, confidence } => {
                            writeln!(out, "{},{p},positive,{gt},{confidence}", s.image_id())
                        }
                    };
                }
            }
            out
        }
    }
}

pub fn cmd_assign(
    settings: &AssignerSettings,
    kind: AssignerKind,
    source: &SceneSource,
    format: ReportFormat,
) -> Result<String> {
    let scenes = load_scenes(source, settings.mcss.scores_are_probabilities())?;
    let results = assign_scenes(settings, kind, &scenes)?;
    for a in &results {
        a.check_consistency()?;
    }
    Ok(render_assignments(kind, &scenes, &results, format))
}

/// Generates `n_scenes` scenes and tallies every assigner on each. The
/// reduction is over integer counts, so the result does not depend on the
/// order scenes are processed in.
pub fn compute_stats(
    settings: &AssignerSettings,
    kinds: &[AssignerKind],
    cfg: &SynthConfig,
    n_scenes: usize,
) -> Result<BucketReport> {
    if kinds.is_empty() {
        return Err(Error::InvalidConfig("assigner list is empty".into()));
    }
    if n_scenes == 0 {
        return Err(Error::InvalidConfig("scenes must be at least 1".into()));
    }
    cfg.validate()?;
    let tally = (0..n_scenes as u64)
        .into_par_iter()
        .map(|i| -> Result<BucketTally> {
            let scene = synth::generate_scene(cfg, i)?;
            let mut t = BucketTally::default();
            for &k in kinds {
                t.add_assignment(k, &scene, &settings.run(k, &scene)?);
            }
            Ok(t)
        })
        .try_reduce(BucketTally::default, |mut a, b| {
            a.merge(&b);
            Ok(a)
        })?;
    Ok(tally.report(kinds))
}

/// Rendered stats outputs: the main table and, for CSV, the CoV table.
pub struct StatsOutput {
    pub report: BucketReport,
    pub table: String,
    pub cov_table: Option<String>,
}

pub fn cmd_stats(
    settings: &AssignerSettings,
    kinds: &[AssignerKind],
    cfg: &SynthConfig,
    n_scenes: usize,
    format: ReportFormat,
) -> Result<StatsOutput> {
    let report = compute_stats(settings, kinds, cfg, n_scenes)?;
    let (table, cov_table) = match format {
        ReportFormat::Json => (report::render_json(&report), None),
        ReportFormat::Csv => (report::render_csv(&report), Some(report::render_cov_csv(&report))),
    };
    Ok(StatsOutput {
        report,
        table,
        cov_table,
    })
}

pub fn render_trajectory(t: &Trajectory, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(t).expect("serializable");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut out = String::from("iteration,row,distance,nearest_other\n");
            for p in &t.points {
                let _ = writeln!(out, "{},{},{},{}", p.iteration, p.row, p.distance, p.nearest_other);
            }
            out
        }
    }
}

pub fn cmd_memory_sim(cfg: &MemorySimConfig, format: ReportFormat) -> Result<String> {
    Ok(render_trajectory(&run_memory_sim(cfg)?, format))
}

pub const FEATURES_ENTRY: &str = "r_hat";
pub const OUTPUT_ENTRIES: [&str; 4] = ["r", "p", "f_c", "r_enh"];

/// Output archive of the enhancement pipeline, entries in [`OUTPUT_ENTRIES`] order.
pub fn cmd_enhance(params: &EnhanceParams, features: &[(String, Matrix)], mem: &memory::CategoryMemory) -> Result<Vec<u8>> {
    let r_hat = archive::find(features, FEATURES_ENTRY, "features")?;
    let out = enhance::enhance_pipeline(r_hat, mem, params)?;
    Ok(archive::encode_matrices([
        ("r", &out.r),
        ("p", &out.p),
        ("f_c", &out.f_c),
        ("r_enh", &out.r_enh),
    ]))
}

/// Seeded inputs for `enhance`: parameters, an `n x in_features` feature
/// matrix and a memory, returned as encoded files.
pub struct EnhanceInputs {
    pub params: Vec<u8>,
    pub features: Vec<u8>,
    pub memory: Vec<u8>,
}

pub fn make_enhance_inputs(seed: u64, n: usize, in_features: usize, dim: usize, num_classes: usize) -> Result<EnhanceInputs> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let params = EnhanceParams::random(seed, in_features, dim, num_classes)?;
    let mem = memory::init_memory(num_classes, dim, seed, memory::default_scale(dim))?;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let data = (0..n * in_features).map(|_| StandardNormal.sample(&mut rng)).collect();
    let r_hat = Matrix::new(n, in_features, data)?;
    Ok(EnhanceInputs {
        params: archive::encode_params(&params),
        features: archive::encode_matrices([(FEATURES_ENTRY, &r_hat)]),
        memory: archive::encode_memory(&mem),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_synth() -> SynthConfig {
        SynthConfig {
            clutter_preds: 16,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn stats_are_order_independent() {
        let s = AssignerSettings::default();
        let kinds = [AssignerKind::Mcss, AssignerKind::IouMax];
        let a = with_threads(1, || compute_stats(&s, &kinds, &small_synth(), 12)).unwrap().unwrap();
        let b = with_threads(4, || compute_stats(&s, &kinds, &small_synth(), 12)).unwrap().unwrap();
        assert_eq!(a, b);
        let total: u64 = a.rows.iter().filter(|r| r.assigner == AssignerKind::Mcss).map(|r| r.gt_count).sum();
        assert_eq!(total, 12 * 8);
    }

    #[test]
    fn single_bucket_has_zero_cov() {
        let cfg = SynthConfig {
            size_range: (4.0, 10.0),
            ..small_synth()
        };
        let r = compute_stats(&AssignerSettings::default(), &[AssignerKind::Mcss], &cfg, 4).unwrap();
        assert_eq!(r.cov_of(AssignerKind::Mcss), Some(0.0));
    }

    #[test]
    fn empty_assigner_list_fails() {
        assert!(compute_stats(&AssignerSettings::default(), &[], &small_synth(), 1).is_err());
    }

    #[test]
    fn empty_feature_batch() {
        let inputs = make_enhance_inputs(3, 0, 4, 4, 2).unwrap();
        let params = archive::decode_params(&inputs.params, "p").unwrap();
        let feats = archive::decode_matrices(&inputs.features, "f").unwrap();
        let mem = archive::decode_memory(&inputs.memory, "m").unwrap();
        let out = archive::decode_matrices(&cmd_enhance(&params, &feats, &mem).unwrap(), "o").unwrap();
        let names: Vec<&str> = out.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, OUTPUT_ENTRIES);
        assert!(out.iter().all(|(_, m)| m.rows() == 0));
    }

    #[test]
    fn enhance_shape_mismatch_names_the_pair() {
        let inputs = make_enhance_inputs(3, 2, 4, 4, 2).unwrap();
        let params = archive::decode_params(&inputs.params, "p").unwrap();
        let feats = archive::decode_matrices(&inputs.features, "f").unwrap();
        let mem = memory::init_memory(2, 6, 0, 1.0).unwrap();
        let e = cmd_enhance(&params, &feats, &mem).unwrap_err().to_string();
        assert!(e.contains("memory width 6") && e.contains("parameter width 4"), "{e}");
    }
}
