use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{evaluate, MetricsReport};
use super::train::{train, with_threads, TrainConfig, TrainOutcome};
use crate::error::{invalid, Error, Result};
use crate::manifest::Manifest;
use crate::posenc::{heatmap_csv, pairwise_heatmap, EncodingKind, EncodingScheme};
use crate::posrec::PosRecModel;
use crate::sessgraph::Session;

pub const RESULTS_HEADER: &str = "scheme,R@5,R@10,M@5,M@10,N,seed,manifest_hash";
pub const LAMBDA2_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

/// Train/test pairs and the provenance of the data they came from.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Vec<Session>,
    pub test: Vec<Session>,
    pub num_items: usize,
    pub dataset_hash: String,
}

/// A trained model and its test metrics.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    pub manifest: Manifest,
    pub report: MetricsReport,
    pub outcome: TrainOutcome,
}

/// Rows of one experiment, sharing a manifest hash.
#[derive(Clone, Debug)]
pub struct ResultsTable {
    pub manifest: Manifest,
    pub rows: Vec<RunResult>,
}

impl ResultsTable {
    pub fn manifest_hash(&self) -> String {
        self.manifest.hash()
    }

    pub fn to_csv(&self) -> String {
        let hash = self.manifest_hash();
        let mut out = format!("{RESULTS_HEADER}\n");
        for r in &self.rows {
            let pct = |v: Option<f64>| v.map(MetricsReport::pct).unwrap_or_else(|| "NA".into());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.label,
                pct(r.report.recall_at(5)),
                pct(r.report.recall_at(10)),
                pct(r.report.mrr_at(5)),
                pct(r.report.mrr_at(10)),
                r.report.n,
                r.seed,
                hash
            )
            .unwrap();
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&RunResult> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// The run manifest: every training setting plus the dataset hash.
pub fn run_manifest(config: &TrainConfig, data: &ExperimentData) -> Manifest {
    let mut cfg = config.clone();
    cfg.model.num_items = data.num_items;
    let mut m = cfg.manifest();
    m.set("dataset_hash", &data.dataset_hash)
        .set("train_pairs", data.train.len())
        .set("test_pairs", data.test.len());
    m
}

/// Trains on `data.train` and evaluates on `data.test` at `ks`.
pub fn run_once(data: &ExperimentData, config: &TrainConfig, label: &str, ks: &[usize]) -> Result<RunResult> {
    if data.test.is_empty() {
        return Err(Error::Data("no test pairs".into()));
    }
    let manifest = run_manifest(config, data);
    let outcome = train(&data.train, data.num_items, config)?;
    let mut report = with_threads(config.threads, || evaluate(&outcome.model, &data.test, ks))??;
    report.manifest_hash = Some(manifest.hash());
    log::info!("{label}: {}", report.summary());
    Ok(RunResult {
        label: label.to_owned(),
        seed: config.model.seed,
        manifest,
        report,
        outcome,
    })
}

/// Options shared by the experiment harnesses.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    /// Independent runs per setting, with seeds `seed, seed + 1, ...`.
    pub repeats: usize,
    pub ks: Vec<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            repeats: 1,
            ks: vec![5, 10],
        }
    }
}

fn run_grid(
    data: &ExperimentData,
    base: &TrainConfig,
    opts: &SweepOptions,
    experiment: &str,
    settings: Vec<(String, TrainConfig)>,
) -> Result<ResultsTable> {
    if opts.repeats == 0 {
        return Err(invalid!("repeats must be positive"));
    }
    let mut manifest = run_manifest(base, data);
    manifest
        .set("experiment", experiment)
        .set(
            "settings",
            settings.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>().join(" "),
        )
        .set("repeats", opts.repeats);
    let mut rows = Vec::new();
    for (label, cfg) in settings {
        for r in 0..opts.repeats {
            let mut cfg = cfg.clone();
            cfg.model.seed = base.model.seed.wrapping_add(r as u64);
            rows.push(run_once(data, &cfg, &label, &opts.ks)?);
        }
    }
    Ok(ResultsTable { manifest, rows })
}

/// One model per encoding kind, everything else shared.
pub fn run_encoding_sweep(
    data: &ExperimentData,
    base: &TrainConfig,
    kinds: &[EncodingKind],
    opts: &SweepOptions,
) -> Result<ResultsTable> {
    if kinds.is_empty() {
        return Err(invalid!("encoding sweep needs at least one scheme"));
    }
    let settings = kinds
        .iter()
        .map(|&k| {
            let mut c = base.clone();
            c.model.encoding = k;
            (k.name().to_owned(), c)
        })
        .collect();
    run_grid(data, base, opts, "encoding_sweep", settings)
}

/// The same configuration with and without anchor aggregation.
pub fn run_anchor_ablation(data: &ExperimentData, base: &TrainConfig, opts: &SweepOptions) -> Result<ResultsTable> {
    let settings = [true, false]
        .into_iter()
        .map(|on| {
            let mut c = base.clone();
            c.model.anchors = on;
            (
                format!("{}{}", base.model.encoding, if on { "+anchors" } else { "-anchors" }),
                c,
            )
        })
        .collect();
    run_grid(data, base, opts, "anchor_ablation", settings)
}

/// One run per first-item readout weight.
pub fn run_lambda2_sweep(
    data: &ExperimentData,
    base: &TrainConfig,
    values: &[f64],
    opts: &SweepOptions,
) -> Result<ResultsTable> {
    if values.is_empty() {
        return Err(invalid!("lambda2 sweep needs at least one value"));
    }
    let settings = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            c.model.lambda[2] = v;
            (format!("lambda2={v}"), c)
        })
        .collect();
    run_grid(data, base, opts, "lambda2_sweep", settings)
}

/// Writes the pairwise heatmap of `kind` to `out`, plus `_forward` and
/// `_backward` variants for dual kinds. Learned kinds take their tables from
/// `checkpoint`.
pub fn export_heatmap(
    kind: EncodingKind,
    dim: usize,
    max_len: usize,
    checkpoint: Option<&PosRecModel>,
    l1: usize,
    l2: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if !kind.is_absolute() {
        return Err(invalid!("{kind} has no per-position vectors to compare"));
    }
    let scheme = if kind.is_learned() {
        let model = checkpoint.ok_or_else(|| invalid!("{kind} is learned; a checkpoint is required"))?;
        if model.config().encoding != kind {
            return Err(invalid!("checkpoint uses {}, not {kind}", model.config().encoding));
        }
        model.scheme()?
    } else {
        EncodingScheme::fixed(kind, dim, max_len)?
    };
    let hm = pairwise_heatmap(&scheme, l1, l2)?;
    let mut written = vec![out.to_path_buf()];
    std::fs::write(out, heatmap_csv(&hm.full)).map_err(|e| Error::io(out, e))?;
    for (suffix, half) in [("forward", &hm.forward), ("backward", &hm.backward)] {
        if let Some(m) = half {
            let path = sibling(out, suffix);
            std::fs::write(&path, heatmap_csv(m)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// `dir/stem_suffix.ext`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{suffix}"),
    };
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{last_item_pairs, split_tail, synth_generate};
    use crate::posenc::row_argmax;
    use crate::posrec::ModelConfig;

    fn data() -> ExperimentData {
        let ds = synth_generate(12, 60, (2, 4), 5).unwrap();
        let (tr, te) = split_tail(&ds, 10).unwrap();
        ExperimentData {
            train: last_item_pairs(&tr),
            test: last_item_pairs(&te),
            num_items: 12,
            dataset_hash: ds.manifest.hash(),
        }
    }

    fn config() -> TrainConfig {
        let mut c = TrainConfig {
            model: ModelConfig::new(0, 8, EncodingKind::Ldpe),
            ..TrainConfig::default()
        };
        c.model.max_len = 8;
        c.batch_size = 25;
        c.epochs = 1;
        c
    }

    #[test]
    fn sweep_rows_share_hash() {
        let kinds = [EncodingKind::Spe, EncodingKind::Rspe, EncodingKind::Dpe];
        let t = run_encoding_sweep(&data(), &config(), &kinds, &SweepOptions::default()).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        assert_eq!(lines.len(), 4);
        let hashes: Vec<&str> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
        assert!(hashes.iter().all(|h| *h == t.manifest_hash()));
        assert!(lines[3].starts_with("DPE,"));
        assert!(run_encoding_sweep(&data(), &config(), &[], &SweepOptions::default()).is_err());
    }

    #[test]
    fn ablation_manifests_differ_only_in_anchors() {
        let t = run_anchor_ablation(&data(), &config(), &SweepOptions::default()).unwrap();
        assert_eq!(t.rows.len(), 2);
        let (a, b) = (&t.rows[0].manifest, &t.rows[1].manifest);
        let diff: Vec<&str> = a.iter().filter(|(k, v)| b.get(k) != Some(*v)).map(|(k, _)| k).collect();
        assert_eq!(diff, vec!["anchors"]);
        for r in &t.rows {
            assert!(r.report.recall_at(5).is_some() && r.report.mrr_at(10).is_some());
        }
    }

    #[test]
    fn lambda_grid_and_repeats() {
        let opts = SweepOptions {
            repeats: 2,
            ..SweepOptions::default()
        };
        let t = run_lambda2_sweep(&data(), &config(), &LAMBDA2_GRID, &opts).unwrap();
        assert_eq!(t.rows.len(), 8);
        assert_eq!(t.rows[0].seed, t.rows[2].seed);
        assert_ne!(t.rows[0].seed, t.rows[1].seed);
    }

    #[test]
    fn heatmap_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("dpe.csv");
        let files = export_heatmap(EncodingKind::Dpe, 100, 50, None, 10, 20, &out).unwrap();
        assert_eq!(files.len(), 3);
        assert!(files[2].ends_with("dpe_backward.csv"));
        let text = std::fs::read_to_string(&files[2]).unwrap();
        assert!(text.starts_with("l1\\l2,0,1,"));

        let spe = EncodingScheme::fixed(EncodingKind::Spe, 100, 50).unwrap();
        let hm = pairwise_heatmap(&spe, 10, 20).unwrap();
        assert_eq!(row_argmax(&hm.full), (0..10).collect::<Vec<_>>());

        let none = dir.path().join("none.csv");
        export_heatmap(EncodingKind::None, 16, 50, None, 3, 4, &none).unwrap();
        let text = std::fs::read_to_string(&none).unwrap();
        assert!(text
            .lines()
            .skip(1)
            .all(|l| l.split(',').skip(1).all(|c| c == "0.000000")));

        assert!(export_heatmap(EncodingKind::Ldpe, 16, 50, None, 3, 4, &none).is_err());
        assert!(export_heatmap(EncodingKind::Lrpe, 16, 50, None, 3, 4, &none).is_err());
    }
}
