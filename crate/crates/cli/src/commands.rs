use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use posrec_core::datapipe::{
    augment, filter_with, last_item_pairs, parse_raw, split, split_tail, synth_generate, Dataset, FilterSpec, Fraction,
    RawFormat, SplitSpec, TestRule, Vocab,
};
use posrec_core::evalkit::{
    evaluate, export_heatmap, run_anchor_ablation, run_encoding_sweep, run_lambda2_sweep, run_manifest, run_once,
    with_threads, EpochReport, ExperimentData, MetricsReport, ResultsTable, SweepOptions, TrainConfig,
};
use posrec_core::manifest::short_hash;
use posrec_core::posenc::{check_awareness, EncodingKind, EncodingScheme};
use posrec_core::posrec::{load_checkpoint, save_checkpoint};
use posrec_core::sessgraph::{AnchorWeighting, Session};
use posrec_core::{Error, ErrorCategory, Manifest, ModelConfig};

use crate::options::Options;
use crate::CliError;

type CliResult<T> = Result<T, CliError>;

pub fn run(opts: &Options) -> CliResult<()> {
    let out = opts.out_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let threads: usize = opts.get("threads")?;
    let mut manifest = opts.manifest();
    let verb = opts.verb.as_str();
    let result = with_threads(threads, || -> CliResult<()> {
        match verb {
            "check-encodings" => check_encodings(opts, &out, &mut manifest),
            "heatmap" => heatmap(opts, &out, &mut manifest),
            "preprocess" => preprocess(opts, &out, &mut manifest),
            "synth" => synth(opts, &out, &mut manifest),
            "train" => train_cmd(opts, &out, &mut manifest),
            "eval" => eval_cmd(opts, &out, &mut manifest),
            "sweep-encodings" | "ablate-anchors" | "sweep-lambda2" => experiment(opts, &out, &mut manifest),
            other => Err(CliError::Usage(format!("unknown verb `{other}`"))),
        }
    })?;
    if let Err(CliError::Core(e)) = &result {
        if e.category() == ErrorCategory::Numerical {
            write(&out.join("failure.txt"), &format!("{e}\n"))?;
        }
    }
    result?;
    manifest.write(&out.join("manifest.txt"))?;
    println!("manifest_hash: {}", manifest.hash());
    Ok(())
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e).into())
}

fn core<T>(r: posrec_core::Result<T>) -> CliResult<T> {
    r.map_err(CliError::from_core)
}

fn check_encodings(opts: &Options, out: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let dims: usize = opts.get("dims")?;
    let max_len: usize = opts.get("max-len")?;
    let epsilon: f64 = opts.get("epsilon")?;
    let delta: f64 = opts.get("delta")?;
    let seed: u64 = opts.get("seed")?;
    let fixed = [
        EncodingKind::Spe,
        EncodingKind::Rspe,
        EncodingKind::Dpe,
        EncodingKind::Aspe,
        EncodingKind::TwoDSpe,
        EncodingKind::None,
    ];
    let kinds: Vec<EncodingKind> = match opts.raw("kinds") {
        "fixed" => fixed.to_vec(),
        "all" => EncodingKind::ALL
            .into_iter()
            .filter(|k| k.is_absolute() || *k == EncodingKind::None)
            .collect(),
        _ => opts.list("kinds")?,
    };
    let lengths: Vec<usize> = (1..=max_len).collect();
    let mut csv = String::from("scheme,forward_aware,backward_aware,forward_dims,backward_dims\n");
    println!(
        "{:<8} {:>8} {:>9} {:>8} {:>9}",
        "scheme", "forward", "backward", "fwd_dims", "bwd_dims"
    );
    for kind in kinds {
        let scheme = core(EncodingScheme::new(kind, dims, max_len, seed))?;
        let r = core(check_awareness(&scheme, &lengths, epsilon, delta))?;
        let yn = |b: bool| if b { "yes" } else { "no" };
        println!(
            "{:<8} {:>8} {:>9} {:>8} {:>9}",
            kind.name(),
            yn(r.forward_aware),
            yn(r.backward_aware),
            r.forward_dims.len(),
            r.backward_dims.len()
        );
        writeln!(
            csv,
            "{},{},{},{},{}",
            kind.name(),
            r.forward_aware,
            r.backward_aware,
            r.forward_dims.len(),
            r.backward_dims.len()
        )
        .unwrap();
    }
    write(&out.join("awareness.csv"), &csv)?;
    manifest
        .set("output", "awareness.csv")
        .set("result_hash", short_hash(csv.as_bytes()));
    Ok(())
}

fn heatmap(opts: &Options, out: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let kind: EncodingKind = opts.get("scheme")?;
    let model = opts.path("checkpoint").map(|p| load_checkpoint(&p)).transpose()?;
    let target = out.join(format!("heatmap_{}.csv", kind.name()));
    let written = core(export_heatmap(
        kind,
        opts.get("dims")?,
        opts.get("max-len")?,
        model.as_ref(),
        opts.get("l1")?,
        opts.get("l2")?,
        &target,
    ))?;
    let mut names = Vec::new();
    for p in &written {
        println!("wrote {}", p.display());
        names.push(p.file_name().unwrap().to_string_lossy().into_owned());
    }
    manifest.set("outputs", names.join(" "));
    Ok(())
}

fn preprocess(opts: &Options, out: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let input = opts.path("input").unwrap();
    let format: RawFormat = opts.get("format")?;
    let test_rule = match opts.raw("test-rule") {
        "auto" if format == RawFormat::Diginetica => TestRule::FinalDays(7),
        "auto" => TestRule::FinalDays(1),
        _ => opts.get("test-rule")?,
    };
    let spec = FilterSpec {
        min_item_count: opts.get("min-item-count")?,
        min_session_len: opts.get("min-session-len")?,
        to_fixpoint: opts.get("fixpoint")?,
    };
    let split_spec = SplitSpec {
        test_rule,
        fraction: opts.get::<Fraction>("fraction")?,
        augment: opts.get("augment")?,
    };
    let raw = parse_raw(&input, format)?;
    let filtered = filter_with(raw, spec)?;
    let sp = split(&filtered, split_spec)?;
    sp.train.write_tsv(&out.join("train.tsv"))?;
    sp.test.write_tsv(&out.join("test.tsv"))?;
    let st = sp.stats();
    let report = format!(
        "clicks\t{}\ntrain_sessions\t{}\ntest_sessions\t{}\nitems\t{}\navg_len\t{:.2}\ntrain_pairs\t{}\ntest_pairs\t{}\nstraddling\t{}\n",
        st.clicks,
        st.train_sessions,
        st.test_sessions,
        st.items,
        st.avg_len,
        st.train_pairs,
        st.test_pairs,
        sp.straddling
    );
    print!("{report}");
    write(&out.join("stats.tsv"), &report)?;
    manifest
        .set("cutoff", sp.cutoff)
        .set("train_hash", short_hash(sp.train.to_tsv().as_bytes()))
        .set("test_hash", short_hash(sp.test.to_tsv().as_bytes()));
    Ok(())
}

fn synth(opts: &Options, out: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let ds = synth_generate(
        opts.get("m")?,
        opts.get("n")?,
        (opts.get("len-min")?, opts.get("len-max")?),
        opts.get("seed")?,
    )?;
    ds.write_tsv(&out.join("sessions.tsv"))?;
    manifest.set("sessions_hash", short_hash(ds.to_tsv().as_bytes()));
    let test_n: usize = opts.get("test-n")?;
    if test_n > 0 {
        let (train, test) = split_tail(&ds, test_n)?;
        train.write_tsv(&out.join("train.tsv"))?;
        test.write_tsv(&out.join("test.tsv"))?;
        manifest
            .set("train_sessions", train.sessions.len())
            .set("test_sessions", test.sessions.len());
    }
    let st = ds.stats();
    println!("sessions {} clicks {} items {}", st.sessions, st.clicks, st.items);
    Ok(())
}

fn train_config(opts: &Options) -> CliResult<TrainConfig> {
    let kind: EncodingKind = opts.get("scheme")?;
    let dim: usize = opts.get("dim")?;
    let mut model = ModelConfig::new(0, dim, kind);
    model.max_len = opts.get("max-len")?;
    model.heads = opts.get("heads")?;
    let ffn: usize = opts.get("ffn-dim")?;
    model.ffn_dim = if ffn == 0 { 2 * dim } else { ffn };
    model.layer_norm = opts.get("layer-norm")?;
    model.anchors = opts.get("anchors")?;
    model.anchor_weighting = opts.get::<AnchorWeighting>("anchor-weighting")?;
    model.lambda = [opts.get("lambda0")?, opts.get("lambda1")?, opts.get("lambda2")?];
    model.seed = opts.get("seed")?;
    Ok(TrainConfig {
        model,
        lr: opts.get("lr")?,
        lr_decay: opts.get("lr-decay")?,
        decay_every: opts.get("decay-every")?,
        batch_size: opts.get("batch-size")?,
        epochs: opts.get("epochs")?,
        l2: opts.get("l2")?,
        val_fraction: opts.get("val-fraction")?,
        threads: opts.get("threads")?,
    })
}

fn load_tsv(path: &Path) -> CliResult<(Dataset, Vec<u8>)> {
    let bytes = read(path)?;
    let ds = parse_raw(path, RawFormat::Tsv)?;
    Ok((ds, bytes))
}

fn pairs(ds: &Dataset, augmented: bool) -> Vec<Session> {
    if augmented {
        augment(ds)
    } else {
        last_item_pairs(ds)
    }
}

/// Test sessions over the training vocabulary.
fn load_test(path: &Path, vocab: &Vocab) -> CliResult<(Dataset, Vec<u8>)> {
    let (ds, bytes) = load_tsv(path)?;
    let mapped = ds.remap_onto(vocab, 2);
    let dropped = ds.sessions.len() - mapped.sessions.len();
    if dropped > 0 {
        log::warn!("{dropped} test sessions dropped: fewer than 2 clicks on known items");
    }
    if mapped.sessions.is_empty() {
        return Err(Error::Data(format!("{}: no test session uses known items", path.display())).into());
    }
    Ok((mapped, bytes))
}

fn experiment_data(opts: &Options) -> CliResult<(ExperimentData, Vocab)> {
    let augmented: bool = opts.get("augment")?;
    let (train, mut bytes) = load_tsv(&opts.path("data").unwrap())?;
    let train = train.reindexed();
    let test = match opts.path("test") {
        Some(p) => {
            let (test, tb) = load_test(&p, &train.vocab)?;
            bytes.extend_from_slice(&tb);
            pairs(&test, augmented)
        }
        None => Vec::new(),
    };
    let data = ExperimentData {
        train: pairs(&train, augmented),
        test,
        num_items: train.vocab.len(),
        dataset_hash: short_hash(&bytes),
    };
    Ok((data, train.vocab))
}

fn epochs_csv(epochs: &[EpochReport]) -> String {
    let mut csv = String::from("epoch,lr,loss,val_R@10,val_M@10\n");
    for e in epochs {
        let (r, m) = e
            .validation
            .as_ref()
            .map(|v| {
                (
                    MetricsReport::pct(v.recall_at(10).unwrap()),
                    MetricsReport::pct(v.mrr_at(10).unwrap()),
                )
            })
            .unwrap_or_else(|| ("NA".into(), "NA".into()));
        writeln!(csv, "{},{},{:.6},{r},{m}", e.epoch, e.lr, e.loss).unwrap();
    }
    csv
}

fn train_cmd(opts: &Options, out: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let cfg = train_config(opts)?;
    let (data, vocab) = experiment_data(opts)?;
    write(&out.join("vocab.txt"), &(vocab.raw_ids().join("\n") + "\n"))?;
    let (outcome, run_m) = if data.test.is_empty() {
        let outcome = posrec_core::evalkit::train(&data.train, data.num_items, &cfg)?;
        (outcome, run_manifest(&cfg, &data))
    } else {
        let r = run_once(&data, &cfg, cfg.model.encoding.name(), &[5, 10])?;
        let table = ResultsTable {
            manifest: r.manifest.clone(),
            rows: vec![r.clone()],
        };
        write(&out.join("results.csv"), &table.to_csv())?;
        println!("{}", r.report.summary());
        (r.outcome, r.manifest)
    };
    save_checkpoint(&outcome.model, &out.join("model.ckpt"))?;
    write(&out.join("epochs.csv"), &epochs_csv(&outcome.epochs))?;
    for (k, v) in run_m.iter() {
        manifest.set(format!("run.{k}"), v);
    }
    manifest.set("best_epoch", outcome.best_epoch);
    println!("best epoch {} of {}", outcome.best_epoch, cfg.epochs);
    Ok(())
}

fn eval_cmd(opts: &Options, out: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let ckpt = opts.path("checkpoint").unwrap();
    let model = load_checkpoint(&ckpt)?;
    let vocab_path = opts
        .path("vocab")
        .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("vocab.txt"));
    let vocab_text = String::from_utf8_lossy(&read(&vocab_path)?).into_owned();
    let vocab = Vocab::from_ordered(
        vocab_text
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect(),
    )?;
    if vocab.len() != model.config().num_items {
        return Err(Error::Data(format!(
            "{} lists {} items but the checkpoint has {}",
            vocab_path.display(),
            vocab.len(),
            model.config().num_items
        ))
        .into());
    }
    let ks: Vec<usize> = opts.list("ks")?;
    let (test, bytes) = load_test(&opts.path("data").unwrap(), &vocab)?;
    let test_pairs = pairs(&test, opts.get("augment")?);
    let mut report = evaluate(&model, &test_pairs, &ks)?;
    let mut run_m = Manifest::new();
    model.config().write_manifest(&mut run_m);
    run_m
        .set("checkpoint_hash", short_hash(&read(&ckpt)?))
        .set("dataset_hash", short_hash(&bytes))
        .set("test_pairs", test_pairs.len());
    report.manifest_hash = Some(run_m.hash());

    let mut header: Vec<String> = vec!["scheme".into()];
    let mut row: Vec<String> = vec![model.config().encoding.name().into()];
    for &k in &ks {
        header.push(format!("R@{k}"));
        row.push(MetricsReport::pct(report.recall_at(k).unwrap()));
    }
    for &k in &ks {
        header.push(format!("M@{k}"));
        row.push(MetricsReport::pct(report.mrr_at(k).unwrap()));
    }
    header.extend(["N", "seed", "manifest_hash"].map(String::from));
    row.extend([report.n.to_string(), model.config().seed.to_string(), run_m.hash()]);
    let csv = format!("{}\n{}\n", header.join(","), row.join(","));
    write(&out.join("results.csv"), &csv)?;
    println!("{}", report.summary());
    for (k, v) in run_m.iter() {
        manifest.set(format!("run.{k}"), v);
    }
    Ok(())
}

fn experiment(opts: &Options, out: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let cfg = train_config(opts)?;
    let (data, _) = experiment_data(opts)?;
    let sweep = SweepOptions {
        repeats: opts.get("repeats")?,
        ..SweepOptions::default()
    };
    let table = match opts.verb.as_str() {
        "sweep-encodings" => run_encoding_sweep(&data, &cfg, &opts.list("kinds")?, &sweep)?,
        "ablate-anchors" => run_anchor_ablation(&data, &cfg, &sweep)?,
        _ => run_lambda2_sweep(&data, &cfg, &opts.list("values")?, &sweep)?,
    };
    let csv = table.to_csv();
    write(&out.join("results.csv"), &csv)?;
    table.manifest.write(&out.join("experiment.manifest"))?;
    print!("{csv}");
    for (k, v) in table.manifest.iter() {
        manifest.set(format!("run.{k}"), v);
    }
    Ok(())
}
