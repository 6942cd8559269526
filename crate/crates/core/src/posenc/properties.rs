use super::scheme::{EncodingKind, EncodingScheme};
use crate::error::{invalid, Result};

/// Largest violation of the angle-addition identity
///
/// ```text
/// P[x+y, 2i]   = P[x, 2i]   P[y, 2i+1] + P[x, 2i+1] P[y, 2i]
/// P[x+y, 2i+1] = P[x, 2i+1] P[y, 2i+1] - P[x, 2i]   P[y, 2i]
/// ```
///
/// over all frequency pairs, at session length `l`.
pub fn linear_combination_residual(scheme: &EncodingScheme, x: usize, y: usize, l: usize) -> Result<f64> {
    if !matches!(scheme.kind(), EncodingKind::Spe | EncodingKind::Aspe) {
        return Err(invalid!(
            "linear-combination residual is defined for SPE and ASPE, not {}",
            scheme.kind()
        ));
    }
    if x + y >= l {
        return Err(invalid!("need x + y < l, got {x} + {y} >= {l}"));
    }
    let px = scheme.encode(x, l)?;
    let py = scheme.encode(y, l)?;
    let pxy = scheme.encode(x + y, l)?;
    let mut worst = 0.0_f64;
    for i in 0..scheme.dim() / 2 {
        let (s, c) = (2 * i, 2 * i + 1);
        let sin_res = pxy[s] - (px[s] * py[c] + px[c] * py[s]);
        let cos_res = pxy[c] - (px[c] * py[c] - px[s] * py[s]);
        worst = worst.max(sin_res.abs()).max(cos_res.abs());
    }
    Ok(worst)
}

/// Smallest pairwise L-infinity distance between the encodings of one length.
/// `None` when `l < 2`.
pub fn min_pairwise_distance(scheme: &EncodingScheme, l: usize) -> Result<Option<f64>> {
    let rows: Vec<Vec<f64>> = (0..l).map(|p| scheme.encode(p, l)).collect::<Result<_>>()?;
    let mut best: Option<f64> = None;
    for a in 0..l {
        for b in a + 1..l {
            let d = rows[a]
                .iter()
                .zip(&rows[b])
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
            best = Some(best.map_or(d, |m| m.min(d)));
        }
    }
    Ok(best)
}
