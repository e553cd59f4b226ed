//! Steady-state temperatures of the two-die stack.
//!
//! [`solve_steady`] solves the full resistive network and serves as the
//! reference; [`BlurEstimator`] is the fast convolution estimate used inside
//! the annealing loop.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dim_mismatch, Grid2D};
use crate::scalar::Scalar;

/// Layer geometry and material constants of the stack, bottom to top:
/// package path, die 1, bond/BEOL layer, die 2, heatsink path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    /// Silicon thickness of each die, µm.
    pub die_thickness: f64,
    /// W/(m·K)
    pub silicon_conductivity: f64,
    /// µm
    pub bond_thickness: f64,
    /// W/(m·K)
    pub bond_conductivity: f64,
    /// TSV fill, W/(m·K)
    pub tsv_conductivity: f64,
    /// Die 2 to ambient through the heatsink, W/K for the whole outline,
    /// shared evenly among bins.
    pub heatsink_conductance: f64,
    /// Die 1 to ambient through the package, W/K for the whole outline.
    pub package_conductance: f64,
    /// K
    pub ambient: f64,
}

impl Default for StackModel {
    fn default() -> Self {
        Self {
            die_thickness: 100.0,
            silicon_conductivity: 150.0,
            bond_thickness: 10.0,
            bond_conductivity: 2.0,
            tsv_conductivity: 385.0,
            heatsink_conductance: 0.6,
            package_conductance: 0.06,
            ambient: 293.0,
        }
    }
}

impl StackModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("die_thickness", self.die_thickness),
            ("silicon_conductivity", self.silicon_conductivity),
            ("bond_thickness", self.bond_thickness),
            ("bond_conductivity", self.bond_conductivity),
            ("tsv_conductivity", self.tsv_conductivity),
            ("heatsink_conductance", self.heatsink_conductance),
            ("package_conductance", self.package_conductance),
            ("ambient", self.ambient),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Vertical die-to-die conductance of one bin (W/K) at TSV density `d`:
    /// half of each die's silicon in series with the bond layer, whose
    /// conductivity mixes bond material and TSV fill by area.
    pub fn vertical_conductance(&self, bin_area_um2: f64, d: f64) -> f64 {
        let area = bin_area_um2 * 1e-12;
        let k_eff = (1.0 - d) * self.bond_conductivity + d * self.tsv_conductivity;
        let r_si = (self.die_thickness * 0.5e-6) / (self.silicon_conductivity * area);
        let r_bond = (self.bond_thickness * 1e-6) / (k_eff * area);
        1.0 / (2.0 * r_si + r_bond)
    }

    /// Lateral conductance between neighbouring bins along a direction with
    /// bin length `along` and cross width `across` (both µm).
    pub fn lateral_conductance(&self, along: f64, across: f64) -> f64 {
        self.silicon_conductivity * self.die_thickness * across / along * 1e-6
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when Σ|node imbalance| ≤ tolerance × total power.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 50_000 }
    }
}

/// Temperatures of both dies in K.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalResult<T> {
    /// Indexed by die slot: `[die 1, die 2]`.
    pub temps: [Grid2D<T>; 2],
    pub peak: T,
    /// Σ|node imbalance| at exit, W.
    pub residual: f64,
    pub iterations: usize,
}

impl<T: Scalar> ThermalResult<T> {
    pub fn die(&self, die: crate::model::Die) -> &Grid2D<T> {
        &self.temps[die.slot()]
    }

    fn ambient(power: &Grid2D<T>, ambient: f64) -> Result<Self> {
        let g = Grid2D::filled(power.nx(), power.ny(), power.pitch(), T::of(ambient))?;
        Ok(Self { temps: [g.clone(), g], peak: T::of(ambient), residual: 0.0, iterations: 0 })
    }
}

/// The discretized network: two layers of `nx × ny` nodes.
struct Network {
    nx: usize,
    ny: usize,
    gx: f64,
    gy: f64,
    /// per bin
    vertical: Vec<f64>,
    diag: Vec<f64>,
}

impl Network {
    fn new(dims: (usize, usize), pitch: (f64, f64), density: &[f64], stack: &StackModel) -> Self {
        let (nx, ny) = dims;
        let n = nx * ny;
        let bin_area = pitch.0 * pitch.1;
        let gx = stack.lateral_conductance(pitch.0, pitch.1);
        let gy = stack.lateral_conductance(pitch.1, pitch.0);
        let vertical: Vec<f64> = density.iter().map(|d| stack.vertical_conductance(bin_area, *d)).collect();
        let g_sink = stack.heatsink_conductance / n as f64;
        let g_package = stack.package_conductance / n as f64;
        let mut net = Self { nx, ny, gx, gy, vertical, diag: vec![0.0; 2 * n] };
        for layer in 0..2 {
            for y in 0..ny {
                for x in 0..nx {
                    let i = y * nx + x;
                    let mut d = net.vertical[i] + if layer == 0 { g_package } else { g_sink };
                    if x > 0 {
                        d += gx;
                    }
                    if x + 1 < nx {
                        d += gx;
                    }
                    if y > 0 {
                        d += gy;
                    }
                    if y + 1 < ny {
                        d += gy;
                    }
                    net.diag[layer * n + i] = d;
                }
            }
        }
        net
    }

    fn len(&self) -> usize {
        2 * self.nx * self.ny
    }

    /// `out = G · theta` for temperature rises over ambient.
    fn apply(&self, theta: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let n = nx * ny;
        for layer in 0..2 {
            let base = layer * n;
            let other = (1 - layer) * n;
            for y in 0..ny {
                for x in 0..nx {
                    let i = y * nx + x;
                    let k = base + i;
                    let mut acc = self.diag[k] * theta[k] - self.vertical[i] * theta[other + i];
                    if x > 0 {
                        acc -= self.gx * theta[k - 1];
                    }
                    if x + 1 < nx {
                        acc -= self.gx * theta[k + 1];
                    }
                    if y > 0 {
                        acc -= self.gy * theta[k - nx];
                    }
                    if y + 1 < ny {
                        acc -= self.gy * theta[k + nx];
                    }
                    out[k] = acc;
                }
            }
        }
    }

    /// Dense copy of the conductance matrix, row-major.
    fn dense(&self) -> Vec<f64> {
        let m = self.len();
        let mut a = vec![0.0; m * m];
        let mut e = vec![0.0; m];
        let mut col = vec![0.0; m];
        for j in 0..m {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..m {
                a[i * m + j] = col[i];
            }
            e[j] = 0.0;
        }
        a
    }
}

fn check_inputs<T: Scalar>(power1: &Grid2D<T>, power2: &Grid2D<T>, tsv_density: &Grid2D<T>) -> Result<()> {
    if !power1.same_dims(power2) {
        return Err(dim_mismatch(power1, power2));
    }
    if !power1.same_dims(tsv_density) {
        return Err(dim_mismatch(power1, tsv_density));
    }
    if power1.values().iter().chain(power2.values()).any(|v| !(*v >= T::zero())) {
        return Err(Error::domain("power values must be finite and non-negative"));
    }
    Ok(())
}

/// Bin powers in W for both layers, stacked `[die 1 | die 2]`.
fn node_powers<T: Scalar>(power1: &Grid2D<T>, power2: &Grid2D<T>) -> Vec<f64> {
    let a = power1.bin_area();
    power1.values().iter().chain(power2.values()).map(|v| v.as_f64() * a).collect()
}

fn densities<T: Scalar>(tsv_density: &Grid2D<T>) -> Vec<f64> {
    tsv_density.values().iter().map(|v| v.as_f64().clamp(0.0, 1.0)).collect()
}

fn to_result<T: Scalar>(theta: &[f64], like: &Grid2D<T>, ambient: f64, residual: f64, iterations: usize) -> Result<ThermalResult<T>> {
    let n = like.len();
    let mk = |s: &[f64]| Grid2D::from_values(like.nx(), like.ny(), like.pitch(), s.iter().map(|t| T::of(ambient + t)).collect());
    let temps = [mk(&theta[..n])?, mk(&theta[n..])?];
    let peak = temps[0].max().max(temps[1].max());
    Ok(ThermalResult { temps, peak, residual, iterations })
}

/// Steady-state temperatures of both dies for the given power-density maps
/// (W/µm²) and TSV density map.
///
/// Solved with Jacobi-preconditioned conjugate gradients on the symmetric
/// positive-definite conductance matrix.
pub fn solve_steady<T: Scalar>(
    power1: &Grid2D<T>,
    power2: &Grid2D<T>,
    tsv_density: &Grid2D<T>,
    stack: &StackModel,
    opts: &SolverOptions,
) -> Result<ThermalResult<T>> {
    check_inputs(power1, power2, tsv_density)?;
    stack.validate()?;
    let b = node_powers(power1, power2);
    let total: f64 = b.iter().sum();
    if total == 0.0 {
        return ThermalResult::ambient(power1, stack.ambient);
    }
    let net = Network::new(power1.dims(), power1.pitch(), &densities(tsv_density), stack);
    let m = net.len();
    let limit = opts.tolerance * total;

    let mut x = vec![0.0; m];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&net.diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; m];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut scratch = vec![0.0; m];

    let true_residual = |x: &[f64], scratch: &mut Vec<f64>| -> f64 {
        net.apply(x, scratch);
        scratch.iter().zip(&b).map(|(ax, bi)| (bi - ax).abs()).sum()
    };

    for it in 1..=opts.max_iterations {
        net.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let approx: f64 = r.iter().map(|v| v.abs()).sum();
        if approx <= limit {
            let res = true_residual(&x, &mut scratch);
            if res <= limit {
                return to_result(&x, power1, stack.ambient, res, it);
            }
            // recursive residual drifted; restart from the true one
            net.apply(&x, &mut scratch);
            for i in 0..m {
                r[i] = b[i] - scratch[i];
            }
        }
        for i in 0..m {
            z[i] = r[i] / net.diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = true_residual(&x, &mut scratch);
    if residual <= limit {
        return to_result(&x, power1, stack.ambient, residual, opts.max_iterations);
    }
    Err(Error::Solver { iterations: opts.max_iterations, residual })
}

/// Dense conductance matrix and right-hand side (W) of the network that
/// [`solve_steady`] solves, for verification against direct solvers.
pub fn network_system<T: Scalar>(
    power1: &Grid2D<T>,
    power2: &Grid2D<T>,
    tsv_density: &Grid2D<T>,
    stack: &StackModel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_inputs(power1, power2, tsv_density)?;
    let net = Network::new(power1.dims(), power1.pitch(), &densities(tsv_density), stack);
    Ok((net.dense(), node_powers(power1, power2)))
}

/// Heat leaving through heatsink and package, W.
pub fn heat_to_ambient<T: Scalar>(result: &ThermalResult<T>, stack: &StackModel) -> f64 {
    let n = result.temps[0].len() as f64;
    let rise = |g: &Grid2D<T>| g.values().iter().map(|t| t.as_f64() - stack.ambient).sum::<f64>();
    rise(&result.temps[0]) * stack.package_conductance / n + rise(&result.temps[1]) * stack.heatsink_conductance / n
}

/// Impulse responses for one TSV density level, as FFT spectra indexed
/// `[source layer][observed layer]`.
struct MaskSet<T> {
    spectra: [[Vec<Complex<T>>; 2]; 2],
}

struct Calibration<T> {
    dims: (usize, usize),
    pitch: (f64, f64),
    /// FFT extent `(2 nx, 2 ny)`.
    ext: (usize, usize),
    /// Masks calibrated with no TSVs and with full TSV coverage.
    sets: [MaskSet<T>; 2],
    /// Raw masks `[level][source][observed]`, offsets `-(n-1)..=(n-1)`.
    raw: Vec<Vec<f64>>,
    fwd_x: Arc<dyn Fft<T>>,
    fwd_y: Arc<dyn Fft<T>>,
    inv_x: Arc<dyn Fft<T>>,
    inv_y: Arc<dyn Fft<T>>,
}

/// Power-blurring temperature estimate.
///
/// Each die's power map is convolved with impulse-response masks obtained
/// from [`solve_steady`] for a unit impulse at the die center. Masks are
/// calibrated for TSV density 0 and 1 and blended by the mean TSV density of
/// the input, so local TSV arrangement is not resolved. With `mirror` the
/// maps are reflected across the die edges and the result is shifted by a
/// constant so that the heat leaving through heatsink and package matches
/// the input power.
pub struct BlurEstimator<T> {
    stack: StackModel,
    solver: SolverOptions,
    /// Responses below this fraction of the mask peak are cut off.
    pub truncation: f64,
    /// Mirror the power maps across the die edges before convolving.
    pub mirror: bool,
    calibration: Option<Calibration<T>>,
}

impl<T: Scalar> BlurEstimator<T> {
    pub fn new(stack: StackModel) -> Self {
        Self { stack, solver: SolverOptions { tolerance: 1e-10, max_iterations: 50_000 }, truncation: 0.01, mirror: true, calibration: None }
    }

    pub fn stack(&self) -> &StackModel {
        &self.stack
    }

    pub fn is_calibrated_for(&self, dims: (usize, usize), pitch: (f64, f64)) -> bool {
        self.calibration.as_ref().is_some_and(|c| c.dims == dims && c.pitch == pitch)
    }

    /// Derive the masks for grids of `dims` bins at `pitch` µm.
    pub fn calibrate(&mut self, dims: (usize, usize), pitch: (f64, f64)) -> Result<()> {
        let (nx, ny) = dims;
        let (cx, cy) = (nx / 2, ny / 2);
        let (ex, ey) = (2 * nx, 2 * ny);
        let mut planner = FftPlanner::<T>::new();
        let fwd_x = planner.plan_fft_forward(ex);
        let fwd_y = planner.plan_fft_forward(ey);
        let inv_x = planner.plan_fft_inverse(ex);
        let inv_y = planner.plan_fft_inverse(ey);

        let zero = Grid2D::<f64>::zeros(nx, ny, pitch)?;
        let mut impulse = zero.clone();
        impulse.set(cx, cy, 1.0 / zero.bin_area());

        let (mw, mh) = (2 * nx - 1, 2 * ny - 1);
        let mut raw = Vec::with_capacity(8);
        let mut sets = Vec::with_capacity(2);
        for level in [0.0, 1.0] {
            let density = Grid2D::filled(nx, ny, pitch, level)?;
            let mut spectra: [[Vec<Complex<T>>; 2]; 2] = Default::default();
            for source in 0..2 {
                let (p1, p2) = if source == 0 { (&impulse, &zero) } else { (&zero, &impulse) };
                let res = solve_steady(p1, p2, &density, &self.stack, &self.solver)?;
                for observed in 0..2 {
                    let resp = &res.temps[observed];
                    let mut mask = vec![0.0; mw * mh];
                    for ky in 0..mh {
                        for kx in 0..mw {
                            // offsets beyond the centered response reuse its edge values
                            let ox = (cx as isize + kx as isize - (nx as isize - 1)).clamp(0, nx as isize - 1) as usize;
                            let oy = (cy as isize + ky as isize - (ny as isize - 1)).clamp(0, ny as isize - 1) as usize;
                            mask[ky * mw + kx] = resp.get(ox, oy) - self.stack.ambient;
                        }
                    }
                    truncate_mask(&mut mask, mw, mh, self.truncation);
                    // wrap offsets into the (ex, ey) periodic frame
                    let mut buf = vec![Complex::new(T::zero(), T::zero()); ex * ey];
                    for ky in 0..mh {
                        for kx in 0..mw {
                            let dx = kx as isize - (nx as isize - 1);
                            let dy = ky as isize - (ny as isize - 1);
                            let wx = dx.rem_euclid(ex as isize) as usize;
                            let wy = dy.rem_euclid(ey as isize) as usize;
                            buf[wy * ex + wx] = Complex::new(T::of(mask[ky * mw + kx]), T::zero());
                        }
                    }
                    fft2(&mut buf, ex, ey, &fwd_x, &fwd_y);
                    spectra[source][observed] = buf;
                    raw.push(mask);
                }
            }
            sets.push(MaskSet { spectra });
        }
        let [s0, s1]: [MaskSet<T>; 2] = sets.try_into().map_err(|_| Error::State("mask sets".into()))?;
        self.calibration = Some(Calibration { dims, pitch, ext: (ex, ey), sets: [s0, s1], raw, fwd_x, fwd_y, inv_x, inv_y });
        Ok(())
    }

    /// Calibrated mask `[level][source][observed]` as a `(2nx-1) × (2ny-1)`
    /// array with the zero offset at its center.
    pub fn mask(&self, level: usize, source: usize, observed: usize) -> Option<&[f64]> {
        self.calibration.as_ref().map(|c| c.raw[level * 4 + source * 2 + observed].as_slice())
    }

    /// Fast temperature estimate. Fails with a state error unless
    /// [`calibrate`](Self::calibrate) ran for the input's dims and pitch.
    pub fn estimate(&self, power1: &Grid2D<T>, power2: &Grid2D<T>, tsv_density: &Grid2D<T>) -> Result<ThermalResult<T>> {
        check_inputs(power1, power2, tsv_density)?;
        let cal = match &self.calibration {
            Some(c) if c.dims == power1.dims() && c.pitch == power1.pitch() => c,
            Some(_) => return Err(Error::State("estimator calibrated for different grid".into())),
            None => return Err(Error::State("estimator not calibrated".into())),
        };
        if power1.sum() == T::zero() && power2.sum() == T::zero() {
            return ThermalResult::ambient(power1, self.stack.ambient);
        }
        let (nx, ny) = cal.dims;
        let (ex, ey) = cal.ext;
        let bin_area = T::of(power1.bin_area());
        let spectrum = |g: &Grid2D<T>| {
            let mut buf = vec![Complex::new(T::zero(), T::zero()); ex * ey];
            for y in 0..ny {
                for x in 0..nx {
                    let v = Complex::new(g.get(x, y) * bin_area, T::zero());
                    buf[y * ex + x] = v;
                    if self.mirror {
                        // images across the adiabatic die edges
                        buf[y * ex + (ex - 1 - x)] = v;
                        buf[(ey - 1 - y) * ex + x] = v;
                        buf[(ey - 1 - y) * ex + (ex - 1 - x)] = v;
                    }
                }
            }
            fft2(&mut buf, ex, ey, &cal.fwd_x, &cal.fwd_y);
            buf
        };
        let sources = [spectrum(power1), spectrum(power2)];
        let w1 = T::of(densities(tsv_density).iter().sum::<f64>() / tsv_density.len() as f64);
        let w0 = T::one() - w1;
        let norm = T::of((ex * ey) as f64);

        let mut theta = vec![0.0; 2 * nx * ny];
        for observed in 0..2 {
            let mut acc = vec![Complex::new(T::zero(), T::zero()); ex * ey];
            for (source, ps) in sources.iter().enumerate() {
                let m0 = &cal.sets[0].spectra[source][observed];
                let m1 = &cal.sets[1].spectra[source][observed];
                for i in 0..acc.len() {
                    let m = m0[i] * w0 + m1[i] * w1;
                    acc[i] = acc[i] + m * ps[i];
                }
            }
            fft2(&mut acc, ex, ey, &cal.inv_x, &cal.inv_y);
            for y in 0..ny {
                for x in 0..nx {
                    theta[observed * nx * ny + y * nx + x] = (acc[y * ex + x].re / norm).as_f64();
                }
            }
        }
        if self.mirror {
            // images overcount the far field; shift back to the global heat balance
            let n = (nx * ny) as f64;
            let (g1, g2) = (self.stack.package_conductance, self.stack.heatsink_conductance);
            let mean = |s: &[f64]| s.iter().sum::<f64>() / n;
            let out = g1 * mean(&theta[..nx * ny]) + g2 * mean(&theta[nx * ny..]);
            let total = (power1.sum() + power2.sum()).as_f64() * power1.bin_area();
            let shift = (out - total) / (g1 + g2);
            theta.iter_mut().for_each(|t| *t -= shift);
        }
        theta.iter_mut().for_each(|t| *t = t.max(0.0));
        to_result(&theta, power1, self.stack.ambient, f64::NAN, 0)
    }
}

/// Zero every entry beyond the largest Chebyshev radius that still holds a
/// value of at least `fraction × peak`.
fn truncate_mask(mask: &mut [f64], w: usize, h: usize, fraction: f64) {
    let peak = mask.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return;
    }
    let (cx, cy) = ((w / 2) as isize, (h / 2) as isize);
    let radius_of = |i: usize| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        (x - cx).abs().max((y - cy).abs())
    };
    let keep = (0..mask.len()).filter(|&i| mask[i] >= fraction * peak).map(radius_of).max().unwrap_or(0);
    for i in 0..mask.len() {
        if radius_of(i) > keep {
            mask[i] = 0.0;
        }
    }
}

/// In-place 2D FFT of a row-major `w × h` buffer.
fn fft2<T: Scalar>(buf: &mut [Complex<T>], w: usize, h: usize, fx: &Arc<dyn Fft<T>>, fy: &Arc<dyn Fft<T>>) {
    for row in buf.chunks_exact_mut(w) {
        fx.process(row);
    }
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        fy.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Fast estimate with a one-off calibration.
pub fn estimate_fast<T: Scalar>(
    power1: &Grid2D<T>,
    power2: &Grid2D<T>,
    tsv_density: &Grid2D<T>,
    stack: &StackModel,
) -> Result<ThermalResult<T>> {
    let mut est = BlurEstimator::new(stack.clone());
    est.calibrate(power1.dims(), power1.pitch())?;
    est.estimate(power1, power2, tsv_density)
}
