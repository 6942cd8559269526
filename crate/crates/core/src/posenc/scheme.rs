use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::numcore::{uniform, Tape, Tensor, Var};

/// Half-width of the uniform initializer for learned encoding tables.
pub const LEARNED_INIT_BOUND: f64 = 0.1;

/// Catalogue of positional encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EncodingKind {
    /// Sinusoid of the forward position.
    Spe,
    /// Sinusoid of the reverse position `l - pos - 1`.
    Rspe,
    /// Forward sinusoid on the first half, reverse sinusoid on the second.
    Dpe,
    /// One learned row per forward position.
    Lpe,
    /// Learned forward table on the first half, learned reverse table on the second.
    Ldpe,
    /// Learned scalar attention bias per relative offset.
    Lrpe,
    /// SPE plus the sin/cos-swapped RSPE.
    Aspe,
    /// Learned forward row plus learned reverse row, full width.
    Alpe,
    /// Sinusoid of the position on the first half, of the length on the second.
    TwoDSpe,
    /// Learned analogue of `TwoDSpe`.
    TwoDLpe,
    /// No positional signal.
    None,
}

impl EncodingKind {
    pub const ALL: [EncodingKind; 11] = [
        EncodingKind::Spe,
        EncodingKind::Rspe,
        EncodingKind::Dpe,
        EncodingKind::Lpe,
        EncodingKind::Ldpe,
        EncodingKind::Lrpe,
        EncodingKind::Aspe,
        EncodingKind::Alpe,
        EncodingKind::TwoDSpe,
        EncodingKind::TwoDLpe,
        EncodingKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncodingKind::Spe => "SPE",
            EncodingKind::Rspe => "RSPE",
            EncodingKind::Dpe => "DPE",
            EncodingKind::Lpe => "LPE",
            EncodingKind::Ldpe => "LDPE",
            EncodingKind::Lrpe => "LRPE",
            EncodingKind::Aspe => "ASPE",
            EncodingKind::Alpe => "ALPE",
            EncodingKind::TwoDSpe => "2DSPE",
            EncodingKind::TwoDLpe => "2DLPE",
            EncodingKind::None => "NONE",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(
            self,
            EncodingKind::Lpe | EncodingKind::Ldpe | EncodingKind::Lrpe | EncodingKind::Alpe | EncodingKind::TwoDLpe
        )
    }

    /// Forward-aware first half, backward-aware second half.
    pub fn is_dual(self) -> bool {
        matches!(self, EncodingKind::Dpe | EncodingKind::Ldpe)
    }

    /// Produces one vector per position (everything except the relative kind).
    pub fn is_absolute(self) -> bool {
        self != EncodingKind::Lrpe
    }

    fn needs_quarter_dim(self) -> bool {
        matches!(
            self,
            EncodingKind::Dpe | EncodingKind::Ldpe | EncodingKind::Alpe | EncodingKind::TwoDSpe | EncodingKind::TwoDLpe
        )
    }

    /// Learned tables for this kind as `(name, shape)`.
    pub fn table_specs(self, dim: usize, max_len: usize) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            EncodingKind::Lpe => vec![("table", vec![max_len, dim])],
            EncodingKind::Ldpe => vec![
                ("forward", vec![max_len, dim / 2]),
                ("backward", vec![max_len, dim / 2]),
            ],
            EncodingKind::Alpe => vec![("forward", vec![max_len, dim]), ("backward", vec![max_len, dim])],
            EncodingKind::TwoDLpe => vec![("position", vec![max_len, dim / 2]), ("length", vec![max_len, dim / 2])],
            EncodingKind::Lrpe => vec![("bias", vec![2 * max_len - 1, 1])],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncodingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['_', '-'], "");
        let kind = match norm.as_str() {
            "SPE" => EncodingKind::Spe,
            "RSPE" => EncodingKind::Rspe,
            "DPE" => EncodingKind::Dpe,
            "LPE" => EncodingKind::Lpe,
            "LDPE" => EncodingKind::Ldpe,
            "LRPE" => EncodingKind::Lrpe,
            "ASPE" => EncodingKind::Aspe,
            "ALPE" => EncodingKind::Alpe,
            "2DSPE" | "TWODSPE" => EncodingKind::TwoDSpe,
            "2DLPE" | "TWODLPE" => EncodingKind::TwoDLpe,
            "NONE" => EncodingKind::None,
            _ => return Err(invalid!("unknown encoding scheme `{s}`")),
        };
        Ok(kind)
    }
}

/// `10000^(2i/d)`
pub fn frequency(i: usize, dim: usize) -> f64 {
    10000f64.powf(2.0 * i as f64 / dim as f64)
}

/// A positional encoding with its dimension, maximum session length and, for
/// learned kinds, its parameter tables.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingScheme {
    kind: EncodingKind,
    dim: usize,
    max_len: usize,
    tables: BTreeMap<String, Tensor>,
}

impl EncodingScheme {
    /// Builds a scheme, drawing learned tables from `seed`. Learned tables are
    /// uniform in `±LEARNED_INIT_BOUND`; the relative-bias table starts at zero.
    pub fn new(kind: EncodingKind, dim: usize, max_len: usize, seed: u64) -> Result<Self> {
        validate(kind, dim, max_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = kind
            .table_specs(dim, max_len)
            .into_iter()
            .map(|(name, shape)| {
                let t = if kind == EncodingKind::Lrpe {
                    Tensor::zeros(&shape)
                } else {
                    uniform(&shape, LEARNED_INIT_BOUND, &mut rng)
                };
                (name.to_owned(), t)
            })
            .collect();
        Ok(EncodingScheme {
            kind,
            dim,
            max_len,
            tables,
        })
    }

    /// A parameter-free scheme. Fails for learned kinds.
    pub fn fixed(kind: EncodingKind, dim: usize, max_len: usize) -> Result<Self> {
        if kind.is_learned() {
            return Err(invalid!("{kind} is learned and needs tables"));
        }
        Self::new(kind, dim, max_len, 0)
    }

    /// Builds a scheme from existing tables (e.g. from a checkpoint).
    pub fn with_tables(
        kind: EncodingKind,
        dim: usize,
        max_len: usize,
        tables: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        validate(kind, dim, max_len)?;
        let specs = kind.table_specs(dim, max_len);
        if specs.len() != tables.len() {
            return Err(invalid!("{kind} expects {} tables, got {}", specs.len(), tables.len()));
        }
        for (name, shape) in specs {
            let t = tables
                .get(name)
                .ok_or_else(|| invalid!("{kind} is missing table `{name}`"))?;
            if t.shape() != shape.as_slice() {
                return Err(invalid!(
                    "{kind} table `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                ));
            }
        }
        Ok(EncodingScheme {
            kind,
            dim,
            max_len,
            tables,
        })
    }

    pub fn kind(&self) -> EncodingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn tables(&self) -> &BTreeMap<String, Tensor> {
        &self.tables
    }

    fn table(&self, name: &str) -> &Tensor {
        &self.tables[name]
    }

    /// Encoding of 0-based position `pos` in a session of length `l`.
    pub fn encode(&self, pos: usize, l: usize) -> Result<Vec<f64>> {
        self.check_position(pos, l)?;
        let d = self.dim;
        let rev = l - pos - 1;
        let mut out = vec![0.0; d];
        match self.kind {
            EncodingKind::Spe => sinusoid_into(&mut out, pos as f64, d),
            EncodingKind::Rspe => sinusoid_into(&mut out, rev as f64, d),
            EncodingKind::Dpe => {
                for i in 0..d / 4 {
                    let f = frequency(i, d);
                    out[2 * i] = (pos as f64 / f).sin();
                    out[2 * i + 1] = (pos as f64 / f).cos();
                    out[2 * i + d / 2] = (rev as f64 / f).sin();
                    out[2 * i + 1 + d / 2] = (rev as f64 / f).cos();
                }
            }
            EncodingKind::Aspe => {
                for i in 0..d / 2 {
                    let f = frequency(i, d);
                    out[2 * i] = (pos as f64 / f).sin() + (rev as f64 / f).cos();
                    out[2 * i + 1] = (pos as f64 / f).cos() + (rev as f64 / f).sin();
                }
            }
            EncodingKind::TwoDSpe => {
                for i in 0..d / 4 {
                    let g = 10000f64.powf(4.0 * i as f64 / d as f64);
                    out[2 * i] = (pos as f64 / g).sin();
                    out[2 * i + 1] = (pos as f64 / g).cos();
                    out[2 * i + d / 2] = (l as f64 / g).sin();
                    out[2 * i + 1 + d / 2] = (l as f64 / g).cos();
                }
            }
            EncodingKind::Lpe => out.copy_from_slice(self.table("table").row(pos)),
            EncodingKind::Ldpe => {
                out[..d / 2].copy_from_slice(self.table("forward").row(pos));
                out[d / 2..].copy_from_slice(self.table("backward").row(rev));
            }
            EncodingKind::Alpe => {
                let (f, b) = (self.table("forward").row(pos), self.table("backward").row(rev));
                for j in 0..d {
                    out[j] = f[j] + b[j];
                }
            }
            EncodingKind::TwoDLpe => {
                out[..d / 2].copy_from_slice(self.table("position").row(pos));
                out[d / 2..].copy_from_slice(self.table("length").row(l - 1));
            }
            EncodingKind::None => {}
            EncodingKind::Lrpe => unreachable!("rejected by check_position"),
        }
        Ok(out)
    }

    fn check_position(&self, pos: usize, l: usize) -> Result<()> {
        if self.kind == EncodingKind::Lrpe {
            return Err(invalid!(
                "LRPE has no per-position vectors; use relative_bias for attention logits"
            ));
        }
        if l == 0 || l > self.max_len {
            return Err(invalid!("session length {l} outside [1, {}]", self.max_len));
        }
        if pos >= l {
            return Err(invalid!("position {pos} outside a session of length {l}"));
        }
        Ok(())
    }

    /// Index into the relative-bias table for query `i` and key `j`.
    pub fn relative_offset_index(&self, i: usize, j: usize) -> usize {
        let span = self.max_len as i64 - 1;
        let offset = (i as i64 - j as i64).clamp(-span, span);
        (offset + span) as usize
    }

    /// Learned attention-logit bias for query position `i` and key position `j`.
    pub fn relative_bias(&self, i: usize, j: usize) -> Result<f64> {
        if self.kind != EncodingKind::Lrpe {
            return Err(invalid!("relative_bias requires LRPE, scheme is {}", self.kind));
        }
        Ok(self.table("bias").data()[self.relative_offset_index(i, j)])
    }

    /// Differentiable counterpart of [`encode`](Self::encode) for many
    /// positions at once: returns a `[positions.len(), dim]` variable.
    ///
    /// `tables` maps table names to their variables on `tape`; it is ignored
    /// for parameter-free kinds.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        tables: &BTreeMap<String, Var>,
        positions: &[usize],
        l: usize,
    ) -> Result<Var> {
        for &p in positions {
            self.check_position(p, l)?;
        }
        let table = |name: &str| -> Result<Var> {
            tables
                .get(name)
                .copied()
                .ok_or_else(|| invalid!("{} table `{name}` not bound", self.kind))
        };
        let rev: Vec<usize> = positions.iter().map(|&p| l - p - 1).collect();
        match self.kind {
            EncodingKind::Lpe => tape.gather_rows(table("table")?, positions),
            EncodingKind::Ldpe => {
                let f = tape.gather_rows(table("forward")?, positions)?;
                let b = tape.gather_rows(table("backward")?, &rev)?;
                tape.concat(&[f, b])
            }
            EncodingKind::Alpe => {
                let f = tape.gather_rows(table("forward")?, positions)?;
                let b = tape.gather_rows(table("backward")?, &rev)?;
                tape.add(f, b)
            }
            EncodingKind::TwoDLpe => {
                let p = tape.gather_rows(table("position")?, positions)?;
                let lens = vec![l - 1; positions.len()];
                let q = tape.gather_rows(table("length")?, &lens)?;
                tape.concat(&[p, q])
            }
            _ => {
                let mut data = Vec::with_capacity(positions.len() * self.dim);
                for &p in positions {
                    data.extend(self.encode(p, l)?);
                }
                Ok(tape.constant(Tensor::matrix(positions.len(), self.dim, data)?))
            }
        }
    }
}

fn validate(kind: EncodingKind, dim: usize, max_len: usize) -> Result<()> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(invalid!("encoding dimension must be positive and even, got {dim}"));
    }
    if kind.needs_quarter_dim() && !dim.is_multiple_of(4) {
        return Err(invalid!("{kind} needs a dimension divisible by 4, got {dim}"));
    }
    if max_len == 0 {
        return Err(invalid!("max_len must be positive"));
    }
    Ok(())
}

fn sinusoid_into(out: &mut [f64], x: f64, d: usize) {
    for i in 0..d / 2 {
        let f = frequency(i, d);
        out[2 * i] = (x / f).sin();
        out[2 * i + 1] = (x / f).cos();
    }
}
