use crate::error::{Error, Result};
use crate::volgeom::Volume3D;

pub const DEFAULT_BINS: usize = 32;

/// Negated histogram mutual information in nats.
///
/// Each image is min-max normalised and quantised into `bins` levels. A
/// constant image carries no information, so the result is 0.
pub fn mutual_information(a: &Volume3D, b: &Volume3D, bins: usize) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::invalid("mutual information needs volumes on the same grid"));
    }
    if bins < 2 {
        return Err(Error::invalid(format!("bins must be at least 2, got {bins}")));
    }
    let (Some(qa), Some(qb)) = (quantise(a, bins), quantise(b, bins)) else {
        return Ok(0.0);
    };
    let mut joint = vec![0u64; bins * bins];
    let mut ha = vec![0u64; bins];
    let mut hb = vec![0u64; bins];
    for (&i, &j) in qa.iter().zip(&qb) {
        joint[i as usize * bins + j as usize] += 1;
        ha[i as usize] += 1;
        hb[j as usize] += 1;
    }
    let n = qa.len() as f64;
    // Entropies from sorted counts do not depend on bin order, which makes
    // the result exactly symmetric in (a, b).
    let mi = entropy(ha, n) + entropy(hb, n) - entropy(joint, n);
    Ok(-mi.max(0.0))
}

fn quantise(v: &Volume3D, bins: usize) -> Option<Vec<u16>> {
    let (lo, hi) = v.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    if hi <= lo {
        return None;
    }
    let scale = bins as f64 / (hi - lo);
    Some(v.data().iter().map(|&x| (((x as f64 - lo) * scale) as usize).min(bins - 1) as u16).collect())
}

fn entropy(mut counts: Vec<u64>, n: f64) -> f64 {
    counts.retain(|&c| c > 0);
    counts.sort_unstable();
    let s: f64 = counts.iter().map(|&c| c as f64 * (c as f64).ln()).sum();
    n.ln() - s / n
}
