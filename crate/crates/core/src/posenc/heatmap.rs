use std::fmt::Write as _;

use super::scheme::EncodingScheme;
use crate::error::Result;
use crate::numcore::Tensor;

/// Dot products between the encodings of two session lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// `[l1, l2]`, entry `(a, b)` = `<P(a, l1), P(b, l2)>`.
    pub full: Tensor,
    /// First-half-only products, dual kinds only.
    pub forward: Option<Tensor>,
    /// Second-half-only products, dual kinds only.
    pub backward: Option<Tensor>,
}

pub fn pairwise_heatmap(scheme: &EncodingScheme, l1: usize, l2: usize) -> Result<Heatmap> {
    let left: Vec<Vec<f64>> = (0..l1).map(|p| scheme.encode(p, l1)).collect::<Result<_>>()?;
    let right: Vec<Vec<f64>> = (0..l2).map(|p| scheme.encode(p, l2)).collect::<Result<_>>()?;
    let d = scheme.dim();
    let product = |lo: usize, hi: usize| -> Result<Tensor> {
        let mut data = Vec::with_capacity(l1 * l2);
        for a in &left {
            for b in &right {
                data.push(a[lo..hi].iter().zip(&b[lo..hi]).map(|(x, y)| x * y).sum());
            }
        }
        Tensor::matrix(l1, l2, data)
    };
    let full = product(0, d)?;
    let (forward, backward) = if scheme.kind().is_dual() {
        (Some(product(0, d / 2)?), Some(product(d / 2, d)?))
    } else {
        (None, None)
    };
    Ok(Heatmap {
        full,
        forward,
        backward,
    })
}

/// Index of the largest entry in each row; ties resolve to the lower column.
pub fn row_argmax(m: &Tensor) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            m.row(r)
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                )
                .0
        })
        .collect()
}

/// CSV with a `l1\l2` corner cell, column indices in the header and row
/// indices in the first column; values at 6 decimals.
pub fn heatmap_csv(m: &Tensor) -> String {
    let mut out = String::from("l1\\l2");
    for b in 0..m.cols() {
        write!(out, ",{b}").unwrap();
    }
    out.push('\n');
    for a in 0..m.rows() {
        write!(out, "{a}").unwrap();
        for &v in m.row(a) {
            let cell = format!("{v:.6}");
            out.push(',');
            out.push_str(if cell == "-0.000000" { "0.000000" } else { &cell });
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenc::EncodingKind;

    #[test]
    fn spe_same_length_is_symmetric_with_dominant_diagonal() {
        let s = EncodingScheme::fixed(EncodingKind::Spe, 100, 50).unwrap();
        let h = pairwise_heatmap(&s, 12, 12).unwrap();
        assert!(h.forward.is_none());
        for a in 0..12 {
            for b in 0..12 {
                assert!((h.full.at(a, b) - h.full.at(b, a)).abs() < 1e-12);
                assert!(h.full.at(a, a) >= h.full.at(a, b));
            }
        }
    }

    #[test]
    fn dpe_has_two_strips() {
        let s = EncodingScheme::fixed(EncodingKind::Dpe, 100, 50).unwrap();
        let h = pairwise_heatmap(&s, 10, 20).unwrap();
        assert_eq!(row_argmax(h.forward.as_ref().unwrap()), (0..10).collect::<Vec<_>>());
        assert_eq!(row_argmax(h.backward.as_ref().unwrap()), (10..20).collect::<Vec<_>>());
    }

    #[test]
    fn csv_layout() {
        let m = Tensor::matrix(2, 3, vec![1.0, -0.0000001, 2.5, 0.0, 1.0 / 3.0, -4.0]).unwrap();
        assert_eq!(
            heatmap_csv(&m),
            "l1\\l2,0,1,2\n0,1.000000,0.000000,2.500000\n1,0.000000,0.333333,-4.000000\n"
        );
    }
}
