//! Oracles shared by the integration tests. Nothing here calls the solvers
//! under test.
#![allow(dead_code)]

use statrs::function::gamma::gamma;
use superpose::closedform::{ModelKind, ModelParams};
use superpose::measures::{JumpMeasure, RGrid, ReversionMixture};

/// Nondimensional reference configuration: `M₁ = 0.5`, `λ = 0.5`, `b = 1`,
/// Gamma shape `alpha` with `R/(1-M₁) = 1`, so the mean is 1 and the
/// previous-model variance is 2.
pub fn reference(kind: ModelKind, w: f64, alpha: f64) -> ModelParams {
    ModelParams::new(
        kind,
        1.0,
        w,
        JumpMeasure::new(0.25, 0.5).unwrap(),
        ReversionMixture::gamma(alpha, 1.0 / ((alpha - 1.0) * 0.5)).unwrap(),
    )
    .unwrap()
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `R⁻¹ ∫ r⁻¹ e^{-rcτ} π(dr)` for a Gamma(shape, scale) law by quadrature.
///
/// With `x = r/scale = e^v` the integrand becomes the smooth bell
/// `exp((α-1)v - s·e^v)`, `s = 1 + scale·c·τ`, integrated over a window
/// wide enough that both tails are below 1e-14 of the mass.
pub fn gamma_kernel_by_quadrature(shape: f64, scale: f64, c: f64, lag: f64) -> f64 {
    let k = shape - 1.0;
    let s = 1.0 + scale * c * lag;
    let f = |v: f64| (k * v - s * v.exp()).exp();
    let peak = (k / s).ln();
    let (lo, hi) = (peak - 40.0 / k, (200.0 / s).ln().max(peak + 5.0));
    // Scale of the answer, so the tolerance is relative.
    let panels = 400;
    let h = (hi - lo) / panels as f64;
    let rough: f64 = (0..=panels).map(|i| f(lo + i as f64 * h)).sum::<f64>() * h;
    let integral: f64 = (0..panels)
        .map(|i| {
            let a = lo + i as f64 * h;
            simpson(&f, a, a + h, 1e-14 * rough / panels as f64)
        })
        .sum();
    // π density in x is x^{α-1}e^{-x}/Γ(α); R = 1/(scale·(α-1)).
    k / gamma(shape) * integral
}

/// Classical fourth-order Runge–Kutta for a scalar ODE from `t0` to `t1`
/// with steps no longer than `h`.
pub fn rk4<F: Fn(f64) -> f64>(f: F, y0: f64, t0: f64, t1: f64, h: f64) -> f64 {
    let steps = ((t1 - t0) / h).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

/// Dense Gaussian elimination with partial pivoting; `a` is row-major `n×n`.
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())
            .unwrap();
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x
}

/// Stationary first and second moments of the finite interacting system on
/// `grid`, from its linear drift `dE[Y] = (AY + c)dt` and jump covariance.
pub struct LinearNoise {
    pub drift: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub n: usize,
}

impl LinearNoise {
    pub fn new(p: &ModelParams, grid: &RGrid) -> Self {
        let n = grid.len();
        let (r, pi) = (grid.speeds(), grid.weights());
        let (m1, m2) = (p.jump().m1(), p.jump().moment(2));
        let (b, w) = (p.source_rate(), p.weight());
        // rate_i = w r_i Y_i + (1-w) π_i Σ_j r_j Y_j (AG) or a constant (MF).
        let mut a = vec![0.0; n * n];
        let mut c: Vec<f64> = pi.iter().map(|&q| b * q).collect();
        for i in 0..n {
            a[i * n + i] = -r[i] + m1 * w * r[i];
            match p.kind() {
                ModelKind::Aggregation => {
                    for j in 0..n {
                        a[i * n + j] += m1 * (1.0 - w) * pi[i] * r[j];
                    }
                }
                _ => c[i] += m1 * (1.0 - w) * pi[i] * b / (1.0 - m1),
            }
        }
        let mean = solve(a.clone(), c.iter().map(|x| -x).collect());
        let total_flux: f64 = r.iter().zip(&mean).map(|(r, m)| r * m).sum();
        let rate: Vec<f64> = (0..n)
            .map(|i| match p.kind() {
                ModelKind::Aggregation => w * r[i] * mean[i] + (1.0 - w) * pi[i] * total_flux,
                _ => w * r[i] * mean[i] + (1.0 - w) * pi[i] * b / (1.0 - m1),
            })
            .collect();
        // (I⊗A + A⊗I) vec Σ = -vec D, D = diag(M₂ rate).
        let nn = n * n;
        let mut big = vec![0.0; nn * nn];
        for i in 0..n {
            for j in 0..n {
                let row = i * n + j;
                for k in 0..n {
                    big[row * nn + k * n + j] += a[i * n + k];
                    big[row * nn + i * n + k] += a[j * n + k];
                }
            }
        }
        let mut rhs = vec![0.0; nn];
        for i in 0..n {
            rhs[i * n + i] = -m2 * rate[i];
        }
        let cov = solve(big, rhs);
        Self { drift: a, mean, cov, n }
    }

    pub fn total_mean(&self) -> f64 {
        self.mean.iter().sum()
    }

    pub fn total_variance(&self) -> f64 {
        self.cov.iter().sum()
    }

    /// `Corr(Z_{t+τ}, Z_t) = 1ᵀe^{Aτ}Σ1 / 1ᵀΣ1`, with `e^{Aτ}` applied by RK4.
    pub fn acf(&self, lag: f64) -> f64 {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.cov[i * n + j]).sum()).collect();
        let apply = |v: &[f64]| -> Vec<f64> {
            (0..n).map(|i| (0..n).map(|j| self.drift[i * n + j] * v[j]).sum()).collect()
        };
        let steps = (lag / 1e-3).ceil().max(1.0) as usize;
        let h = lag / steps as f64;
        for _ in 0..steps {
            let k1 = apply(&x);
            let y: Vec<f64> = x.iter().zip(&k1).map(|(x, k)| x + 0.5 * h * k).collect();
            let k2 = apply(&y);
            let y: Vec<f64> = x.iter().zip(&k2).map(|(x, k)| x + 0.5 * h * k).collect();
            let k3 = apply(&y);
            let y: Vec<f64> = x.iter().zip(&k3).map(|(x, k)| x + h * k).collect();
            let k4 = apply(&y);
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        x.iter().sum::<f64>() / self.total_variance()
    }
}
