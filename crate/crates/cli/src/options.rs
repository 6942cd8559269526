//! Flag tables per verb, and the merge of defaults, config file and
//! command line into one effective option set.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use posrec_core::Manifest;

use crate::CliError;

#[derive(Clone, Copy)]
pub struct Opt {
    pub key: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn opt(key: &'static str, default: &'static str, help: &'static str) -> Opt {
    Opt {
        key,
        default: Some(default),
        help,
    }
}

const fn req(key: &'static str, help: &'static str) -> Opt {
    Opt {
        key,
        default: None,
        help,
    }
}

pub const COMMON: &[Opt] = &[
    opt("out-dir", "out", "directory for every output file"),
    opt("threads", "1", "worker threads (1 keeps runs bit-reproducible)"),
];

pub const CHECK: &[Opt] = &[
    opt("dims", "16", "encoding dimension"),
    opt("max-len", "12", "test lengths 1..=max-len"),
    opt("kinds", "fixed", "comma-separated schemes, `fixed` or `all`"),
    opt("epsilon", "1e-9", "tolerance for equal values across lengths"),
    opt("delta", "1e-6", "minimum L-inf gap between positions"),
    opt("seed", "42", "seed for randomly initialized learned tables"),
];

pub const HEATMAP: &[Opt] = &[
    opt("scheme", "DPE", "absolute encoding scheme"),
    opt("dims", "100", "encoding dimension"),
    opt("max-len", "50", "longest encodable session"),
    opt("l1", "10", "row session length"),
    opt("l2", "20", "column session length"),
    opt("checkpoint", "", "model checkpoint (required for learned schemes)"),
];

pub const PREPROCESS: &[Opt] = &[
    req("input", "raw click log"),
    opt("format", "tsv", "yoochoose, diginetica or tsv"),
    opt(
        "test-rule",
        "auto",
        "final_days:N, cutoff:UNIX_TS, or auto (1 day; 7 for diginetica)",
    ),
    opt(
        "fraction",
        "1",
        "most recent share of training sessions to keep (1, 1/4, 1/64)",
    ),
    opt("min-item-count", "5", "drop items with fewer clicks"),
    opt("min-session-len", "2", "drop shorter sessions"),
    opt("fixpoint", "true", "repeat filtering until stable"),
    opt("augment", "true", "count prefix pairs in the statistics"),
];

pub const SYNTH: &[Opt] = &[
    opt("m", "50", "vocabulary size"),
    opt("n", "5000", "number of sessions"),
    opt("len-min", "2", "shortest session before its label"),
    opt("len-max", "10", "longest session before its label"),
    opt("seed", "42", "generator seed"),
    opt("test-n", "0", "hold out the last N sessions as test.tsv"),
];

pub const MODEL: &[Opt] = &[
    opt("scheme", "LDPE", "positional encoding"),
    opt("dim", "100", "embedding width"),
    opt(
        "max-len",
        "50",
        "longest session fed to the model (older clicks are cut)",
    ),
    opt("heads", "1", "attention heads"),
    opt("ffn-dim", "0", "feed-forward width (0 means 2*dim)"),
    opt("layer-norm", "true", "layer norm in the transformer layer"),
    opt("anchors", "true", "aggregate anchor nodes"),
    opt("anchor-weighting", "distance", "distance or inverse"),
    opt("lambda0", "1", "weight of the graph output of the last item"),
    opt("lambda1", "1", "weight of the transformer output of the last item"),
    opt("lambda2", "0.5", "weight of the transformer output of the first item"),
    opt("seed", "42", "initialization and shuffling seed"),
    opt("lr", "0.001", "initial learning rate"),
    opt("lr-decay", "0.1", "learning-rate factor"),
    opt("decay-every", "3", "epochs between decays"),
    opt("batch-size", "100", "pairs per step"),
    opt("epochs", "4", "training epochs"),
    opt("l2", "1e-5", "l2 penalty"),
    opt(
        "val-fraction",
        "0.1",
        "latest share of training pairs used for model selection",
    ),
    opt(
        "augment",
        "true",
        "train on every session prefix (false: one pair per session)",
    ),
];

pub const TRAIN_DATA: &[Opt] = &[
    req("data", "training sessions (tsv)"),
    opt("test", "", "test sessions (tsv); evaluated after training"),
];

pub const EXPERIMENT_DATA: &[Opt] = &[
    req("data", "training sessions (tsv)"),
    req("test", "test sessions (tsv)"),
    opt("repeats", "1", "runs per setting with consecutive seeds"),
];

pub const EVAL: &[Opt] = &[
    req("checkpoint", "model checkpoint"),
    req("data", "test sessions (tsv)"),
    opt(
        "vocab",
        "",
        "item list written by train (default: next to the checkpoint)",
    ),
    opt("augment", "true", "evaluate every prefix (false: one pair per session)"),
    opt("ks", "5,10", "cut-offs"),
];

pub const SWEEP_KINDS: &[Opt] = &[opt(
    "kinds",
    "NONE,SPE,RSPE,DPE,ASPE,2DSPE,LPE,LDPE,ALPE,2DLPE,LRPE",
    "schemes to compare",
)];

pub const SWEEP_LAMBDA: &[Opt] = &[opt("values", "0.25,0.5,1,2", "first-item weights to compare")];

pub fn verb_opts(verb: &str) -> Vec<Opt> {
    let groups: &[&[Opt]] = match verb {
        "check-encodings" => &[CHECK],
        "heatmap" => &[HEATMAP],
        "preprocess" => &[PREPROCESS],
        "synth" => &[SYNTH],
        "train" => &[TRAIN_DATA, MODEL],
        "eval" => &[EVAL],
        "sweep-encodings" => &[EXPERIMENT_DATA, MODEL, SWEEP_KINDS],
        "ablate-anchors" => &[EXPERIMENT_DATA, MODEL],
        "sweep-lambda2" => &[EXPERIMENT_DATA, MODEL, SWEEP_LAMBDA],
        _ => &[],
    };
    groups
        .iter()
        .flat_map(|g| g.iter().copied())
        .chain(COMMON.iter().copied())
        .collect()
}

pub const VERBS: &[(&str, &str)] = &[
    (
        "check-encodings",
        "Check forward/backward awareness of encoding schemes",
    ),
    ("heatmap", "Export dot-product heatmaps between two session lengths"),
    (
        "preprocess",
        "Filter and split a raw click log into train/test TSV files",
    ),
    (
        "synth",
        "Generate a synthetic dataset whose label depends on first and last clicks",
    ),
    ("train", "Train a model and write its checkpoint"),
    ("eval", "Evaluate a checkpoint on test sessions"),
    ("sweep-encodings", "Train one model per encoding scheme"),
    ("ablate-anchors", "Train with and without anchor aggregation"),
    ("sweep-lambda2", "Train one model per first-item readout weight"),
];

pub fn command() -> Command {
    let mut root = Command::new("posrec")
        .about("Session-based recommendation with dual positional encodings")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("verbose")
                .long("verbose")
                .short('v')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("log progress to stderr"),
        );
    for (verb, about) in VERBS {
        let mut sub = Command::new(*verb).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("`key = value` file; command-line flags take precedence"),
        );
        for o in verb_opts(verb) {
            let mut arg = Arg::new(o.key).long(o.key).value_name("VALUE").help(o.help);
            if let Some(d) = o.default {
                if !d.is_empty() {
                    arg = arg.default_value(d);
                }
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

/// Effective options of one invocation.
#[derive(Clone, Debug)]
pub struct Options {
    pub verb: String,
    values: BTreeMap<String, String>,
}

impl Options {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(verb: &str, m: &ArgMatches) -> Result<Self, CliError> {
        let opts = verb_opts(verb);
        let mut values = BTreeMap::new();
        for o in &opts {
            if let Some(d) = o.default {
                values.insert(o.key.to_owned(), d.to_owned());
            }
        }
        if let Some(path) = m.get_one::<String>("config") {
            let cfg = Manifest::read(std::path::Path::new(path)).map_err(CliError::from_core)?;
            for (k, v) in cfg.iter() {
                if !opts.iter().any(|o| o.key == k) {
                    return Err(CliError::Usage(format!("unknown key `{k}` in config file {path}")));
                }
                values.insert(k.to_owned(), v.to_owned());
            }
        }
        for o in &opts {
            if m.value_source(o.key) == Some(ValueSource::CommandLine) {
                values.insert(o.key.to_owned(), m.get_one::<String>(o.key).unwrap().clone());
            }
        }
        for o in &opts {
            if o.default.is_none() && !values.contains_key(o.key) {
                return Err(CliError::Usage(format!("`--{}` is required for {verb}", o.key)));
            }
        }
        Ok(Options {
            verb: verb.to_owned(),
            values,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value `{raw}` for --{key}: {e}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Usage(format!("invalid entry `{s}` in --{key}: {e}")))
            })
            .collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out-dir"))
    }

    /// The effective option set, echoed into every run manifest. The output
    /// directory is left out so that identical runs hash identically.
    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("verb", &self.verb);
        for (k, v) in self.values.iter().filter(|(k, _)| k.as_str() != "out-dir") {
            m.set(format!("opt.{k}"), v);
        }
        m
    }
}
