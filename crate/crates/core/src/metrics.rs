//! Overlap and surface-distance metrics, largest-component post-processing
//! and cross-fold aggregation.
//!
//! Conventions:
//! - DSC of a class absent from both masks is 100.
//! - ASSD is undefined when either mask lacks the class; undefined entries
//!   are excluded from means and counted.
//! - Boundary pixels are foreground pixels with at least one neighbour
//!   (4- or 8-connected) that is background or outside the image.
//! - Fold statistics use the population standard deviation.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{Mask, Spacing};
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

fn check_pair(pred: &Mask, target: &Mask, class_id: u8) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let k = pred.num_classes.max(target.num_classes);
    if class_id > k {
        return Err(Error::UnknownClass {
            class_id,
            num_classes: k,
        });
    }
    Ok(())
}

/// Dice similarity coefficient of one class, in percent.
pub fn dsc(pred: &Mask, target: &Mask, class_id: u8) -> Result<f64> {
    check_pair(pred, target, class_id)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.labels.as_slice().iter().zip(target.labels.as_slice()) {
        let (ip, it) = (p == class_id, t == class_id);
        a += usize::from(ip);
        b += usize::from(it);
        both += usize::from(ip && it);
    }
    if a + b == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * both as f64 / (a + b) as f64)
}

fn neighbours(
    (r, c): (usize, usize),
    (h, w): (usize, usize),
    conn: Connectivity,
) -> impl Iterator<Item = Option<(usize, usize)>> {
    conn.offsets().iter().map(move |&(dr, dc)| {
        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
        (rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w)
            .then_some((rr as usize, cc as usize))
    })
}

/// Boundary pixels of `class_id` in raster order.
pub fn boundary(labels: &Grid<u8>, class_id: u8, conn: Connectivity) -> Vec<(usize, usize)> {
    let dims = labels.dims();
    let mut out = Vec::new();
    for r in 0..dims.0 {
        for c in 0..dims.1 {
            if labels.get(r, c) != class_id {
                continue;
            }
            let edge = neighbours((r, c), dims, conn)
                .any(|n| n.is_none_or(|(rr, cc)| labels.get(rr, cc) != class_id));
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// Squared-distance transform along one line: `out[p] = min_q w2·(p−q)² + f[q]`.
fn distance_1d(f: &[f64], w2: f64, out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k: isize = -1;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let vk = v[k as usize];
            let s = (fq - (f[vk] + w2 * (vk * vk) as f64)) / (2.0 * w2 * (q - vk) as f64);
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (p, o) in out.iter_mut().enumerate() {
        while z[j + 1] < p as f64 {
            j += 1;
        }
        let d = p as f64 - v[j] as f64;
        *o = w2 * d * d + f[v[j]];
    }
}

/// Exact squared Euclidean distance (in mm²) from every pixel to the nearest
/// seed pixel, separable over rows then columns.
fn squared_distance_map(dims: (usize, usize), seeds: &[(usize, usize)], spacing: Spacing) -> Grid<f64> {
    let (h, w) = dims;
    let mut g = Grid::filled(h, w, f64::INFINITY);
    for &(r, c) in seeds {
        g.set(r, c, 0.0);
    }
    let wr = spacing.row_mm * spacing.row_mm;
    let wc = spacing.col_mm * spacing.col_mm;
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for c in 0..w {
        for (r, v) in col.iter_mut().enumerate() {
            *v = g.get(r, c);
        }
        distance_1d(&col, wr, &mut col_out);
        for (r, &v) in col_out.iter().enumerate() {
            g.set(r, c, v);
        }
    }
    let mut row_out = vec![0.0; w];
    for r in 0..h {
        let row = g.as_slice()[r * w..(r + 1) * w].to_vec();
        distance_1d(&row, wc, &mut row_out);
        g.as_mut_slice()[r * w..(r + 1) * w].copy_from_slice(&row_out);
    }
    g
}

/// Average symmetric surface distance of one class in mm, or `None` when
/// either mask lacks the class.
pub fn assd(
    pred: &Mask,
    target: &Mask,
    class_id: u8,
    spacing: Spacing,
    conn: Connectivity,
) -> Result<Option<f64>> {
    check_pair(pred, target, class_id)?;
    let bp = boundary(&pred.labels, class_id, conn);
    let bt = boundary(&target.labels, class_id, conn);
    if bp.is_empty() || bt.is_empty() {
        return Ok(None);
    }
    let dims = pred.dims();
    let to_t = squared_distance_map(dims, &bt, spacing);
    let to_p = squared_distance_map(dims, &bp, spacing);
    let mean = |pts: &[(usize, usize)], map: &Grid<f64>| {
        pts.iter().map(|&(r, c)| map.get(r, c).sqrt()).sum::<f64>() / pts.len() as f64
    };
    Ok(Some(0.5 * (mean(&bp, &to_t) + mean(&bt, &to_p))))
}

/// Connected components of `class_id`, each as pixel list, in order of
/// their first pixel in raster order.
pub fn components(labels: &Grid<u8>, class_id: u8, conn: Connectivity) -> Vec<Vec<(usize, usize)>> {
    let dims = labels.dims();
    let mut seen = Grid::filled(dims.0, dims.1, false);
    let mut out = Vec::new();
    for r in 0..dims.0 {
        for c in 0..dims.1 {
            if labels.get(r, c) != class_id || seen.get(r, c) {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(r, c)]);
            seen.set(r, c, true);
            while let Some(p) = queue.pop_front() {
                comp.push(p);
                for (rr, cc) in neighbours(p, dims, conn).flatten() {
                    if labels.get(rr, cc) == class_id && !seen.get(rr, cc) {
                        seen.set(rr, cc, true);
                        queue.push_back((rr, cc));
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// Keeps only the largest connected component of `class_id`; the rest of
/// that class becomes background. Ties go to the component whose first
/// pixel comes first in raster order.
pub fn largest_component(pred: &Mask, class_id: u8, conn: Connectivity) -> Mask {
    let comps = components(&pred.labels, class_id, conn);
    if comps.len() <= 1 {
        return pred.clone();
    }
    let keep = comps
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| if c.len() > comps[best].len() { i } else { best });
    let mut out = pred.clone();
    for (i, comp) in comps.iter().enumerate() {
        if i != keep {
            for &(r, c) in comp {
                out.labels.set(r, c, 0);
            }
        }
    }
    out
}

/// Applies [`largest_component`] to every foreground class.
pub fn postprocess(pred: &Mask, conn: Connectivity) -> Mask {
    (1..=pred.num_classes).fold(pred.clone(), |m, k| largest_component(&m, k, conn))
}

/// Per-class scores of one predicted mask.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub fold: usize,
    pub image_id: String,
    /// Indexed by class - 1.
    pub dsc: Vec<f64>,
    pub assd: Vec<Option<f64>>,
}

pub fn image_metrics(
    fold: usize,
    image_id: &str,
    pred: &Mask,
    target: &Mask,
    spacing: Spacing,
    conn: Connectivity,
) -> Result<ImageMetrics> {
    let k = target.num_classes;
    let mut out = ImageMetrics {
        fold,
        image_id: image_id.to_string(),
        dsc: Vec::with_capacity(k as usize),
        assd: Vec::with_capacity(k as usize),
    };
    for class in 1..=k {
        out.dsc.push(dsc(pred, target, class)?);
        out.assd.push(assd(pred, target, class, spacing, conn)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub images: usize,
    pub dsc: Vec<f64>,
    pub assd: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassSummary {
    pub name: String,
    pub dsc_mean: f64,
    pub dsc_std: f64,
    pub assd_mean: Option<f64>,
    pub assd_std: Option<f64>,
    pub assd_undefined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub post_processed: bool,
    pub folds: Vec<FoldMetrics>,
    pub classes: Vec<ClassSummary>,
    pub images: Vec<ImageMetrics>,
}

impl MetricsReport {
    /// Cross-fold mean DSC averaged over classes.
    pub fn mean_dsc(&self) -> f64 {
        self.classes.iter().map(|c| c.dsc_mean).sum::<f64>() / self.classes.len().max(1) as f64
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-fold means, then mean ± population std across folds.
pub fn aggregate(records: &[ImageMetrics], class_names: &[String], post_processed: bool) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::EmptySplit("no per-image metrics to aggregate".into()));
    }
    let k = class_names.len();
    if let Some(r) = records.iter().find(|r| r.dsc.len() != k || r.assd.len() != k) {
        return Err(Error::Shape(format!(
            "image {} has {} classes, report expects {k}",
            r.image_id,
            r.dsc.len()
        )));
    }
    let mut fold_ids: Vec<usize> = records.iter().map(|r| r.fold).collect();
    fold_ids.sort_unstable();
    fold_ids.dedup();

    let folds: Vec<FoldMetrics> = fold_ids
        .iter()
        .map(|&f| {
            let rs: Vec<&ImageMetrics> = records.iter().filter(|r| r.fold == f).collect();
            let dsc = (0..k)
                .map(|c| rs.iter().map(|r| r.dsc[c]).sum::<f64>() / rs.len() as f64)
                .collect();
            let assd = (0..k)
                .map(|c| {
                    let vals: Vec<f64> = rs.iter().filter_map(|r| r.assd[c]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            FoldMetrics {
                fold: f,
                images: rs.len(),
                dsc,
                assd,
            }
        })
        .collect();

    let classes = (0..k)
        .map(|c| {
            let d: Vec<f64> = folds.iter().map(|f| f.dsc[c]).collect();
            let a: Vec<f64> = folds.iter().filter_map(|f| f.assd[c]).collect();
            let (dsc_mean, dsc_std) = mean_std(&d);
            let (assd_mean, assd_std) = if a.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&a);
                (Some(m), Some(s))
            };
            ClassSummary {
                name: class_names[c].clone(),
                dsc_mean,
                dsc_std,
                assd_mean,
                assd_std,
                assd_undefined: records.iter().filter(|r| r.assd[c].is_none()).count(),
            }
        })
        .collect();

    Ok(MetricsReport {
        post_processed,
        folds,
        classes,
        images: records.to_vec(),
    })
}

/// Per-image CSV: `fold,image_id,class,dsc,assd` with `NA` for undefined ASSD.
pub fn per_image_csv(report: &MetricsReport) -> String {
    let mut out = String::from("fold,image_id,class,dsc,assd\n");
    for r in &report.images {
        for (c, class) in report.classes.iter().enumerate() {
            let assd = r.assd[c].map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(out, "{},{},{},{:.6},{}", r.fold, r.image_id, class.name, r.dsc[c], assd);
        }
    }
    out
}

/// Text table with one row per method: `DSC(%)` and `ASSD(mm)` as
/// `mean ± std` for every class.
pub fn format_table(title: &str, rows: &[(&str, &MetricsReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let names: Vec<&str> = first.classes.iter().map(|c| c.name.as_str()).collect();
    let label_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(title.len()).max(6);
    let cell = 14;
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$} |", title);
    for n in &names {
        let _ = write!(out, " {:<w$} |", n, w = 2 * cell + 3);
    }
    out.push('\n');
    let _ = write!(out, "{:<label_w$} |", "");
    for _ in &names {
        let _ = write!(out, " {:<cell$} | {:<cell$} |", "DSC(%)", "ASSD(mm)");
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(label_w + 2 + names.len() * (2 * cell + 6)));
    for (label, rep) in rows {
        let _ = write!(out, "{:<label_w$} |", label);
        for c in &rep.classes {
            let d = format!("{:.1} ± {:.1}", c.dsc_mean, c.dsc_std);
            let a = match (c.assd_mean, c.assd_std) {
                (Some(m), Some(s)) => format!("{m:.1} ± {s:.1}"),
                _ => "n/a".to_string(),
            };
            let _ = write!(out, " {:<cell$} | {:<cell$} |", d, a);
        }
        out.push('\n');
    }
    out
}
