//! Thermal-leakage metrics: power/temperature correlation, per-bin
//! correlation stability across activity samples, and spatial entropy of
//! power maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dim_mismatch, Grid2D};
use crate::scalar::Scalar;

/// Pearson coefficient over `n` locations; `None` when either side has zero
/// variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation<T> {
    pub value: Option<T>,
    pub n: usize,
}

impl<T: Scalar> Correlation<T> {
    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

/// Pearson correlation of two equal-length series, two-pass centered form.
/// Returns `None` if either series is constant.
pub fn pearson_slices<T: Scalar>(p: &[T], t: &[T]) -> Option<T> {
    debug_assert_eq!(p.len(), t.len());
    if p.is_empty() || is_constant(p) || is_constant(t) {
        return None;
    }
    let n = T::of(p.len() as f64);
    let mp = p.iter().copied().sum::<T>() / n;
    let mt = t.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in p.iter().zip(t) {
        let (da, db) = (a - mp, b - mt);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    let denom = sxx.sqrt() * syy.sqrt();
    if !(denom > T::zero()) {
        return None;
    }
    Some((sxy / denom).max(-T::one()).min(T::one()))
}

fn is_constant<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Correlation between a power map and a temperature map of one die.
pub fn pearson<T: Scalar>(power: &Grid2D<T>, temp: &Grid2D<T>) -> Result<Correlation<T>> {
    if !power.same_dims(temp) {
        return Err(dim_mismatch(power, temp));
    }
    Ok(Correlation { value: pearson_slices(power.values(), temp.values()), n: power.len() })
}

/// Per-bin correlation across `m` activity samples.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityMap<T> {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<Option<T>>,
    pub m: usize,
}

impl<T: Scalar> StabilityMap<T> {
    pub fn get(&self, x: usize, y: usize) -> Option<T> {
        self.values[y * self.nx + x]
    }

    pub fn defined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Mean over defined bins, `None` if no bin is defined.
    pub fn mean_defined(&self) -> Option<T> {
        let defined: Vec<T> = self.values.iter().flatten().copied().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().copied().sum::<T>() / T::of(defined.len() as f64))
        }
    }

    /// Dense grid with undefined bins replaced by `fill`.
    pub fn to_grid(&self, pitch: (f64, f64), fill: T) -> Result<Grid2D<T>> {
        Grid2D::from_values(self.nx, self.ny, pitch, self.values.iter().map(|v| v.unwrap_or(fill)).collect())
    }
}

/// Runtime stability of the correlation: for each bin, Pearson across the
/// aligned `(power_i, temp_i)` samples at that bin.
pub fn stability<T: Scalar>(power_samples: &[Grid2D<T>], temp_samples: &[Grid2D<T>]) -> Result<StabilityMap<T>> {
    let m = power_samples.len();
    if m != temp_samples.len() {
        return Err(Error::domain(format!("{m} power samples but {} temperature samples", temp_samples.len())));
    }
    if m < 2 {
        return Err(Error::domain(format!("stability needs at least 2 samples, got {m}")));
    }
    let first = &power_samples[0];
    for g in power_samples.iter().chain(temp_samples) {
        if !g.same_dims(first) {
            return Err(dim_mismatch(first, g));
        }
    }
    let mut p = vec![T::zero(); m];
    let mut t = vec![T::zero(); m];
    let values = (0..first.len())
        .map(|bin| {
            for i in 0..m {
                p[i] = power_samples[i].values()[bin];
                t[i] = temp_samples[i].values()[bin];
            }
            pearson_slices(&p, &t)
        })
        .collect();
    Ok(StabilityMap { nx: first.nx(), ny: first.ny(), values, m })
}

/// Nested-means partitioning. Returns classes as lists of indices into
/// `values`, each class contiguous in ascending value order, classes ordered
/// from low to high.
pub fn nested_means_classify<T: Scalar>(values: &[T]) -> Vec<Vec<usize>> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let sorted: Vec<T> = order.iter().map(|&i| values[i]).collect();
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let eps = T::of(1e-9) * (hi - lo);

    let mut classes = Vec::new();
    // explicit stack of [start, end) ranges; push right before left so the
    // output stays in ascending order
    let mut stack = vec![(0usize, sorted.len())];
    while let Some((s, e)) = stack.pop() {
        let slice = &sorted[s..e];
        let n = T::of(slice.len() as f64);
        let mean = slice.iter().copied().sum::<T>() / n;
        let var = slice.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
        let cut = s + slice.partition_point(|v| *v < mean);
        if var.sqrt() <= eps || cut == s || cut == e {
            classes.push(order[s..e].to_vec());
        } else {
            stack.push((cut, e));
            stack.push((s, cut));
        }
    }
    classes
}

/// One class of the spatial-entropy classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats<T> {
    /// Bin indices (row-major).
    pub members: Vec<usize>,
    pub mean_power: T,
    pub d_intra: T,
    pub d_inter: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyResult<T> {
    /// Bits.
    pub value: T,
    pub classes: Vec<ClassStats<T>>,
}

/// Which distance ratio weights each class's Shannon term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceRatio {
    /// `d_inter / d_intra`, the ratio as written in the leakage model.
    InterOverIntra,
    /// `d_intra / d_inter`, the original geographic formulation.
    IntraOverInter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyOptions {
    pub ratio: DistanceRatio,
    /// Distance (in bin pitches) used for singleton classes and for a map
    /// that has only one class.
    pub degenerate_distance: f64,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self { ratio: DistanceRatio::InterOverIntra, degenerate_distance: 0.5 }
    }
}

/// Spatial entropy of a power map with default options.
pub fn spatial_entropy<T: Scalar>(power: &Grid2D<T>) -> EntropyResult<T> {
    spatial_entropy_with(power, &EntropyOptions::default())
}

pub fn spatial_entropy_with<T: Scalar>(power: &Grid2D<T>, opts: &EntropyOptions) -> EntropyResult<T> {
    let (nx, ny) = power.dims();
    let n = power.len();
    let classes = nested_means_classify(power.values());
    let total = n as f64;

    // Manhattan sums separate into x and y parts; both are computed from
    // per-class row/column histograms.
    let mut all_x = vec![0.0f64; nx];
    let mut all_y = vec![0.0f64; ny];
    for i in 0..n {
        all_x[i % nx] += 1.0;
        all_y[i / nx] += 1.0;
    }

    let mut value = 0.0f64;
    let mut stats = Vec::with_capacity(classes.len());
    for members in classes {
        let k = members.len();
        let mut hx = vec![0.0f64; nx];
        let mut hy = vec![0.0f64; ny];
        for &i in &members {
            hx[i % nx] += 1.0;
            hy[i / nx] += 1.0;
        }
        let rest_x: Vec<f64> = all_x.iter().zip(&hx).map(|(a, b)| a - b).collect();
        let rest_y: Vec<f64> = all_y.iter().zip(&hy).map(|(a, b)| a - b).collect();

        let d_intra = if k < 2 {
            opts.degenerate_distance
        } else {
            let pair_sum = cross_abs_sum(&hx, &hx) / 2.0 + cross_abs_sum(&hy, &hy) / 2.0;
            pair_sum / (k * (k - 1) / 2) as f64
        };
        let outside = n - k;
        let d_inter = if outside == 0 {
            opts.degenerate_distance
        } else {
            (cross_abs_sum(&hx, &rest_x) + cross_abs_sum(&hy, &rest_y)) / (k * outside) as f64
        };

        let share = k as f64 / total;
        let ratio = match opts.ratio {
            DistanceRatio::InterOverIntra => d_inter / d_intra,
            DistanceRatio::IntraOverInter => d_intra / d_inter,
        };
        value -= ratio * share * share.log2();

        let mean_power = members.iter().map(|&i| power.values()[i]).sum::<T>() / T::of(k as f64);
        stats.push(ClassStats { members, mean_power, d_intra: T::of(d_intra), d_inter: T::of(d_inter) });
    }
    // -0.0 for a single class
    EntropyResult { value: T::of(value.max(0.0)), classes: stats }
}

/// `Σ_a Σ_b h[a]·g[b]·|a − b|`.
fn cross_abs_sum(h: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, ha) in h.iter().enumerate() {
        if *ha == 0.0 {
            continue;
        }
        for (b, gb) in g.iter().enumerate() {
            s += ha * gb * (a as f64 - b as f64).abs();
        }
    }
    s
}

/// Mean of the defined values, `None` when none is defined.
pub fn mean_defined<T: Scalar>(values: &[Option<T>]) -> Option<T> {
    let defined: Vec<T> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().copied().sum::<T>() / T::of(defined.len() as f64))
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (ranks(a), ranks(b));
    pearson_slices(&ra, &rb)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}
