use ndarray::{Array3, Array4};

use super::{FeatureMap, FusionError};
use crate::occupancy::OccupancyGrid;

/// Splits BEV channels into height bins: `logits[x, y, z, k] = F[z·classes + k, x, y]`.
pub fn bev_to_voxel_logits(map: &FeatureMap, bins: usize, classes: usize) -> Result<Array4<f64>, FusionError> {
    let (c, nx, ny) = map.dim();
    if bins == 0 || classes == 0 || c != bins * classes {
        return Err(FusionError::ChannelMismatch { channels: c, bins, classes });
    }
    let data = map.data();
    Ok(Array4::from_shape_fn((nx, ny, bins, classes), |(x, y, z, k)| data[[z * classes + k, x, y]]))
}

/// Inverse of [`bev_to_voxel_logits`].
pub fn voxel_logits_to_bev(logits: &Array4<f64>) -> Result<FeatureMap, FusionError> {
    let (nx, ny, bins, classes) = logits.dim();
    FeatureMap::new(Array3::from_shape_fn((bins * classes, nx, ny), |(c, x, y)| {
        logits[[x, y, c / classes, c % classes]]
    }))
}

fn check_labels(dim: (usize, usize, usize, usize), labels: &OccupancyGrid) -> Result<(), FusionError> {
    let d = labels.spec().dims();
    if (dim.0, dim.1, dim.2) != (d[0], d[1], d[2]) {
        return Err(FusionError::ShapeMismatch(format!("logits are {:?}, labels are {:?}", (dim.0, dim.1, dim.2), d)));
    }
    Ok(())
}

fn label_index(label: u8, classes: usize, at: (usize, usize, usize)) -> Result<usize, FusionError> {
    let l = label as usize;
    if l >= classes {
        return Err(FusionError::ShapeMismatch(format!("label {label} at {at:?} but only {classes} classes")));
    }
    Ok(l)
}

/// Mean over non-ignored voxels of `−log softmax(logits)[label]`; 0 when every voxel is ignored.
pub fn cross_entropy(logits: &Array4<f64>, labels: &OccupancyGrid, ignore: u8) -> Result<f64, FusionError> {
    check_labels(logits.dim(), labels)?;
    let (nx, ny, nz, classes) = logits.dim();
    let mut total = 0.0;
    let mut count = 0usize;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let label = labels.get([x, y, z]);
                if label == ignore {
                    continue;
                }
                let l = label_index(label, classes, (x, y, z))?;
                let row = logits.slice(ndarray::s![x, y, z, ..]);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row {
                    sum += (v - max).exp();
                }
                total += max + sum.ln() - row[l];
                count += 1;
            }
        }
    }
    if !total.is_finite() {
        return Err(FusionError::NonFinite("cross entropy".into()));
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Row-wise softmax over the class axis.
pub fn softmax_probs(logits: &Array4<f64>) -> Array4<f64> {
    let mut out = logits.clone();
    for mut row in out.lanes_mut(ndarray::Axis(3)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let mut sum = 0.0;
        for v in row.iter() {
            sum += v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Gradient of the Lovász extension of the Jaccard loss with respect to errors
/// sorted in decreasing order, given the matching ground-truth indicators.
pub fn lovasz_grad(gt_sorted: &[bool]) -> Vec<f64> {
    let positives = gt_sorted.iter().filter(|g| **g).count() as f64;
    let mut grad = Vec::with_capacity(gt_sorted.len());
    let (mut seen_pos, mut seen_neg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &g in gt_sorted {
        if g {
            seen_pos += 1.0;
        } else {
            seen_neg += 1.0;
        }
        let intersection = positives - seen_pos;
        let union = positives + seen_neg;
        let jaccard = 1.0 - intersection / union;
        grad.push(jaccard - prev);
        prev = jaccard;
    }
    grad
}

/// Lovász-softmax: for each class present in the non-ignored labels, the sorted
/// absolute errors `|1[label = c] − p_c|` dotted with [`lovasz_grad`]; averaged over
/// those classes. Returns 0 when no class is present.
pub fn lovasz_softmax(probs: &Array4<f64>, labels: &OccupancyGrid, ignore: u8) -> Result<f64, FusionError> {
    check_labels(probs.dim(), labels)?;
    let (nx, ny, nz, classes) = probs.dim();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let label = labels.get([x, y, z]);
                if label == ignore {
                    continue;
                }
                let row = probs.slice(ndarray::s![x, y, z, ..]);
                let mut sum = 0.0;
                for v in row {
                    sum += v;
                }
                if !sum.is_finite() || (sum - 1.0).abs() > 1e-6 || row.iter().any(|p| *p < 0.0) {
                    return Err(FusionError::NotNormalized { index: [x, y, z], sum });
                }
                targets.push(label_index(label, classes, (x, y, z))?);
                rows.push(row);
            }
        }
    }
    let mut losses = Vec::new();
    for c in 0..classes {
        if !targets.contains(&c) {
            continue;
        }
        let mut errs: Vec<(f64, bool)> = rows
            .iter()
            .zip(&targets)
            .map(|(row, &t)| {
                let fg = t == c;
                ((f64::from(u8::from(fg)) - row[c]).abs(), fg)
            })
            .collect();
        // stable sort keeps ties in voxel order
        errs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let gt: Vec<bool> = errs.iter().map(|e| e.1).collect();
        let grad = lovasz_grad(&gt);
        let mut loss = 0.0;
        for ((e, _), g) in errs.iter().zip(&grad) {
            loss += e * g;
        }
        losses.push(loss);
    }
    if losses.is_empty() {
        return Ok(0.0);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
