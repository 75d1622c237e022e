//! Log-barrier interior-point method for smooth convex programs
//!
//! ```text
//! minimize c^T z   subject to   f_i(z) <= 0
//! ```
//!
//! specialised to Hessians that are banded up to a few dense rank-one
//! terms and a few dense trailing ("border") variables. Trajectory problems
//! have exactly that shape: per-slot constraints couple neighbouring
//! waypoints only, while the handful of sum constraints (energy, per-sensor
//! data) and the epigraph variable touch everything.
//!
//! Newton systems are solved by banded Cholesky, a Woodbury correction for
//! the rank-one terms and a Schur complement for the border, followed by
//! one step of iterative refinement.

use nalgebra::{DMatrix, DVector};

/// Dense symmetric block of a constraint Hessian over `idx`.
#[derive(Clone, Debug)]
pub struct HessBlock {
    pub idx: Vec<usize>,
    pub mat: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct ConstraintEval {
    pub value: f64,
    /// Sparse gradient; indices may repeat.
    pub grad: Vec<(usize, f64)>,
    /// Hessian blocks; they must not touch border variables.
    pub hess: Vec<HessBlock>,
}

pub trait ConvexProgram {
    fn dim(&self) -> usize;
    /// Number of trailing variables handled as dense border.
    fn border(&self) -> usize;
    /// Half-bandwidth of the banded part.
    fn bandwidth(&self) -> usize;
    fn cost(&self) -> DVector<f64>;
    fn constraint_count(&self) -> usize;
    fn constraint_name(&self, i: usize) -> String;
    fn in_domain(&self, z: &DVector<f64>) -> bool;
    fn values(&self, z: &DVector<f64>) -> Vec<f64>;
    fn evaluate(&self, z: &DVector<f64>) -> Vec<ConstraintEval>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierOptions {
    pub t0: f64,
    pub mu: f64,
    /// Stop once the duality-gap bound `m / t` falls below this.
    pub gap_tol: f64,
    /// Newton decrement `lambda^2 / 2` ending a centering stage.
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            t0: 1.0,
            mu: 20.0,
            gap_tol: 1e-7,
            newton_tol: 1e-13,
            max_newton: 3000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BarrierResult {
    pub z: DVector<f64>,
    pub newton_steps: usize,
    /// `m / t` at exit.
    pub duality_gap: f64,
    /// Infinity norm of the Lagrangian gradient with the barrier multipliers.
    pub kkt_residual: f64,
    /// True if the line search stalled before reaching the gap tolerance.
    pub stalled: bool,
}

/// Lower band of a symmetric matrix, row-major, `kb + 1` entries per row.
struct Band {
    n: usize,
    kb: usize,
    a: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, kb: usize) -> Self {
        Self { n, kb, a: vec![0.0; n * (kb + 1)] }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.kb + 1) + (j + self.kb - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.kb);
        let k = self.at(i, j);
        self.a[k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.kb {
            0.0
        } else {
            self.a[self.at(i, j)]
        }
    }

    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kb);
            for j in lo..i {
                let v = self.a[self.at(i, j)];
                y[i] += v * x[j];
                y[j] += v * x[i];
            }
            y[i] += self.a[self.at(i, i)] * x[i];
        }
        y
    }

    /// In-place Cholesky `L L^T`; false if not positive definite.
    fn factor(&mut self) -> bool {
        let kb = self.kb;
        for i in 0..self.n {
            let lo = i.saturating_sub(kb);
            for j in lo..=i {
                let mut s = self.a[self.at(i, j)];
                let lo2 = lo.max(j.saturating_sub(kb));
                for k in lo2..j {
                    s -= self.a[self.at(i, k)] * self.a[self.at(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    let k = self.at(i, i);
                    self.a[k] = s.sqrt();
                } else {
                    let k = self.at(i, j);
                    self.a[k] = s / self.a[self.at(j, j)];
                }
            }
        }
        true
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = b.clone();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kb);
            let mut s = y[i];
            for k in lo..i {
                s -= self.a[self.at(i, k)] * y[k];
            }
            y[i] = s / self.a[self.at(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            let hi = (i + self.kb).min(self.n - 1);
            for k in i + 1..=hi {
                s -= self.a[self.at(k, i)] * y[k];
            }
            y[i] = s / self.a[self.at(i, i)];
        }
        y
    }
}

/// `H = [[B + U U^T, C], [C^T, D]]`.
struct Kkt {
    band: Band,
    u: Vec<DVector<f64>>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Kkt {
    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let nb = self.band.n;
        let k = self.d.nrows();
        let xa = x.rows(0, nb).into_owned();
        let xb = x.rows(nb, k).into_owned();
        let mut ya = self.band.mul(&xa);
        for u in &self.u {
            ya.axpy(u.dot(&xa), u, 1.0);
        }
        ya += &self.c * &xb;
        let yb = self.c.transpose() * &xa + &self.d * &xb;
        let mut y = DVector::zeros(nb + k);
        y.rows_mut(0, nb).copy_from(&ya);
        y.rows_mut(nb, k).copy_from(&yb);
        y
    }

    fn solver(&self) -> Option<KktSolver<'_>> {
        let mut band = Band { n: self.band.n, kb: self.band.kb, a: self.band.a.clone() };
        let scale = (0..band.n).map(|i| band.get(i, i)).fold(0.0, f64::max).max(1e-300);
        let mut reg = 0.0;
        while !band.factor() {
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
            if reg > 1e-2 * scale {
                return None;
            }
            band = Band { n: self.band.n, kb: self.band.kb, a: self.band.a.clone() };
            for i in 0..band.n {
                band.add(i, i, reg);
            }
        }
        let nb = band.n;
        let r = self.u.len();
        let y: Vec<DVector<f64>> = self.u.iter().map(|u| band.solve(u)).collect();
        let mut s = DMatrix::identity(r, r);
        for i in 0..r {
            for j in 0..r {
                s[(i, j)] += self.u[i].dot(&y[j]);
            }
        }
        let wood = s.lu();
        let mut solver = KktSolver { kkt: self, band, y, wood, za: DMatrix::zeros(nb, 0), schur: None };
        let k = self.d.nrows();
        if k > 0 {
            let mut za = DMatrix::zeros(nb, k);
            for j in 0..k {
                let col = solver.solve_a(&self.c.column(j).into_owned());
                za.set_column(j, &col);
            }
            let schur = &self.d - self.c.transpose() * &za;
            solver.za = za;
            solver.schur = Some(schur.lu());
        }
        Some(solver)
    }
}

struct KktSolver<'a> {
    kkt: &'a Kkt,
    band: Band,
    y: Vec<DVector<f64>>,
    wood: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    za: DMatrix<f64>,
    schur: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl KktSolver<'_> {
    fn solve_a(&self, r: &DVector<f64>) -> DVector<f64> {
        let z = self.band.solve(r);
        if self.y.is_empty() {
            return z;
        }
        let ut = DVector::from_iterator(self.y.len(), self.kkt.u.iter().map(|u| u.dot(&z)));
        let coef = self.wood.solve(&ut).unwrap_or_else(|| DVector::zeros(self.y.len()));
        let mut out = z;
        for (yj, cj) in self.y.iter().zip(coef.iter()) {
            out.axpy(-cj, yj, 1.0);
        }
        out
    }

    fn solve_once(&self, r: &DVector<f64>) -> DVector<f64> {
        let nb = self.band.n;
        let k = self.kkt.d.nrows();
        let ra = r.rows(0, nb).into_owned();
        let xa0 = self.solve_a(&ra);
        if k == 0 {
            return xa0;
        }
        let rb = r.rows(nb, k).into_owned();
        let rhs = rb - self.kkt.c.transpose() * &xa0;
        let xb = self
            .schur
            .as_ref()
            .and_then(|s| s.solve(&rhs))
            .unwrap_or_else(|| DVector::zeros(k));
        let xa = xa0 - &self.za * &xb;
        let mut x = DVector::zeros(nb + k);
        x.rows_mut(0, nb).copy_from(&xa);
        x.rows_mut(nb, k).copy_from(&xb);
        x
    }

    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve_once(r);
        let resid = r - self.kkt.mul(&x);
        x += self.solve_once(&resid);
        x
    }
}

fn barrier_value<P: ConvexProgram + ?Sized>(p: &P, c: &DVector<f64>, t: f64, z: &DVector<f64>) -> f64 {
    if !p.in_domain(z) {
        return f64::INFINITY;
    }
    let mut phi = t * c.dot(z);
    for f in p.values(z) {
        if !(f < 0.0) {
            return f64::INFINITY;
        }
        phi -= (-f).ln();
    }
    phi
}

/// Barrier gradient and Newton system at `z` for parameter `t`.
fn assemble<P: ConvexProgram + ?Sized>(p: &P, c: &DVector<f64>, t: f64, z: &DVector<f64>) -> (DVector<f64>, Kkt) {
    let n = p.dim();
    let k = p.border();
    let nb = n - k;
    let kb = p.bandwidth();
    let mut grad = c * t;
    let mut kkt = Kkt {
        band: Band::zeros(nb, kb),
        u: Vec::new(),
        c: DMatrix::zeros(nb, k),
        d: DMatrix::zeros(k, k),
    };
    for e in p.evaluate(z) {
        let s = -e.value;
        for &(i, g) in &e.grad {
            grad[i] += g / s;
        }
        for b in &e.hess {
            for (a, &i) in b.idx.iter().enumerate() {
                for (bb, &j) in b.idx.iter().enumerate() {
                    if i >= j {
                        kkt.band.add(i, j, b.mat[(a, bb)] / s);
                    }
                }
            }
        }
        // rank-one term g g^T / s^2, merged over repeated indices
        let mut ga: Vec<(usize, f64)> = Vec::with_capacity(e.grad.len());
        let mut gb: Vec<(usize, f64)> = Vec::new();
        for &(i, g) in &e.grad {
            let v = g / s;
            let target = if i < nb { &mut ga } else { &mut gb };
            if target.len() < 16 {
                if let Some(entry) = target.iter_mut().find(|(j, _)| *j == i) {
                    entry.1 += v;
                    continue;
                }
            }
            target.push((i, v));
        }
        // long gradients are not de-duplicated; densifying sums repeats
        let dense_a = ga.len() >= 16;
        if dense_a {
            let mut u = DVector::zeros(nb);
            for &(i, v) in &ga {
                u[i] += v;
            }
            kkt.u.push(u.clone());
            for &(j, vb) in &gb {
                kkt.c.column_mut(j - nb).axpy(vb, &u, 1.0);
            }
        } else {
            let lo = ga.iter().map(|e| e.0).min().unwrap_or(0);
            let hi = ga.iter().map(|e| e.0).max().unwrap_or(0);
            if hi - lo <= kb {
                for &(i, vi) in &ga {
                    for &(j, vj) in &ga {
                        if i >= j {
                            kkt.band.add(i, j, vi * vj);
                        }
                    }
                }
            } else {
                let mut u = DVector::zeros(nb);
                for &(i, v) in &ga {
                    u[i] += v;
                }
                kkt.u.push(u);
            }
            for &(i, vi) in &ga {
                for &(j, vj) in &gb {
                    kkt.c[(i, j - nb)] += vi * vj;
                }
            }
        }
        for &(i, vi) in &gb {
            for &(j, vj) in &gb {
                kkt.d[(i - nb, j - nb)] += vi * vj;
            }
        }
    }
    (grad, kkt)
}

/// Early-exit test on the current iterate.
pub type StopTest<'a> = &'a dyn Fn(&DVector<f64>) -> bool;

/// Barrier method from a strictly feasible `z0`. `stop` is checked after
/// every Newton step and ends the solve early when it returns true.
pub fn minimize<P: ConvexProgram + ?Sized>(
    p: &P,
    z0: DVector<f64>,
    opts: &BarrierOptions,
    stop: Option<StopTest>,
) -> BarrierResult {
    let c = p.cost();
    let m = p.constraint_count().max(1) as f64;
    let mut z = z0;
    let mut t = opts.t0;
    let mut steps = 0;
    let mut stalled = false;
    'outer: loop {
        for _ in 0..MAX_STAGE_STEPS {
            if steps >= opts.max_newton {
                stalled = true;
                break 'outer;
            }
            let (grad, kkt) = assemble(p, &c, t, &z);
            let Some(solver) = kkt.solver() else {
                stalled = true;
                break 'outer;
            };
            let dz = -solver.solve(&grad);
            let decrement = -grad.dot(&dz);
            steps += 1;
            if !(decrement.is_finite()) {
                stalled = true;
                break 'outer;
            }
            if decrement / 2.0 <= opts.newton_tol {
                break;
            }
            // inside the quadratic region the barrier value is too flat to
            // resolve in floating point, so full steps are taken on feasibility alone
            let pure = decrement < PURE_NEWTON;
            let phi0 = barrier_value(p, &c, t, &z);
            let mut alpha = 1.0;
            loop {
                let trial = &z + &dz * alpha;
                let phi = barrier_value(p, &c, t, &trial);
                if phi.is_finite() && (pure || phi <= phi0 - 0.25 * alpha * decrement) {
                    z = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-16 {
                    break;
                }
            }
            if let Some(f) = stop {
                if f(&z) {
                    break 'outer;
                }
            }
            if alpha < 1e-16 {
                break;
            }
        }
        if m / t < opts.gap_tol {
            break;
        }
        t *= opts.mu;
    }
    BarrierResult {
        kkt_residual: kkt_residual(p, &c, t, &z),
        duality_gap: m / t,
        newton_steps: steps,
        stalled,
        z,
    }
}

const MAX_STAGE_STEPS: usize = 60;
const PURE_NEWTON: f64 = 1e-4;

/// Stationarity residual `|c + sum_i nu_i grad f_i|_inf` with the central-path
/// multipliers `nu_i = 1 / (t (-f_i))`, relative to the largest term.
fn kkt_residual<P: ConvexProgram + ?Sized>(p: &P, c: &DVector<f64>, t: f64, z: &DVector<f64>) -> f64 {
    let mut r = c.clone();
    let mut scale = c.amax();
    for e in p.evaluate(z) {
        let nu = 1.0 / (t * -e.value);
        let mut term = 0.0f64;
        for &(i, g) in &e.grad {
            r[i] += nu * g;
            term = term.max((nu * g).abs());
        }
        scale = scale.max(term);
    }
    r.amax() / scale.max(f64::MIN_POSITIVE)
}

/// Phase I problem: `min s  s.t.  f_i(z) <= s,  s >= floor`.
struct PhaseOne<'a, P: ConvexProgram + ?Sized> {
    inner: &'a P,
    floor: f64,
}

impl<P: ConvexProgram + ?Sized> PhaseOne<'_, P> {
    fn split(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.inner.dim()).into_owned()
    }
}

impl<P: ConvexProgram + ?Sized> ConvexProgram for PhaseOne<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }
    fn border(&self) -> usize {
        self.inner.border() + 1
    }
    fn bandwidth(&self) -> usize {
        self.inner.bandwidth()
    }
    fn cost(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim());
        c[self.inner.dim()] = 1.0;
        c
    }
    fn constraint_count(&self) -> usize {
        self.inner.constraint_count() + 1
    }
    fn constraint_name(&self, i: usize) -> String {
        if i < self.inner.constraint_count() {
            self.inner.constraint_name(i)
        } else {
            "phase-I floor".into()
        }
    }
    fn in_domain(&self, z: &DVector<f64>) -> bool {
        self.inner.in_domain(&self.split(z))
    }
    fn values(&self, z: &DVector<f64>) -> Vec<f64> {
        let s = z[self.inner.dim()];
        let mut v: Vec<f64> = self.inner.values(&self.split(z)).into_iter().map(|f| f - s).collect();
        v.push(self.floor - s);
        v
    }
    fn evaluate(&self, z: &DVector<f64>) -> Vec<ConstraintEval> {
        let n = self.inner.dim();
        let s = z[n];
        let mut out = self.inner.evaluate(&self.split(z));
        for e in &mut out {
            e.value -= s;
            e.grad.push((n, -1.0));
        }
        out.push(ConstraintEval {
            value: self.floor - s,
            grad: vec![(n, -1.0)],
            hess: vec![],
        });
        out
    }
}

#[derive(Clone, Debug)]
pub struct PhaseOneFailure {
    /// Phase I minimizer (original variables).
    pub z: DVector<f64>,
    /// Smallest achievable maximum constraint value.
    pub max_violation: f64,
    /// Indices of constraints active or violated at `z`.
    pub violated: Vec<usize>,
}

/// Strictly feasible point near `z0` (which must lie in the domain).
pub fn find_interior<P: ConvexProgram + ?Sized>(
    p: &P,
    z0: &DVector<f64>,
    opts: &BarrierOptions,
) -> std::result::Result<DVector<f64>, PhaseOneFailure> {
    let vals = p.values(z0);
    let worst = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if worst < 0.0 {
        return Ok(z0.clone());
    }
    let n = p.dim();
    let phase = PhaseOne { inner: p, floor: -1.0 };
    let mut start = DVector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(z0);
    start[n] = worst + 1.0;
    let accept = |z: &DVector<f64>| -> bool {
        z[n] < -1e-9 && {
            let zi = z.rows(0, n).into_owned();
            p.in_domain(&zi) && p.values(&zi).iter().all(|&f| f < 0.0)
        }
    };
    let res = minimize(&phase, start, opts, Some(&accept));
    let z = res.z.rows(0, n).into_owned();
    if accept(&res.z) {
        return Ok(z);
    }
    let vals = p.values(&z);
    let max_violation = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violated = vals
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > -1e-7)
        .map(|(i, _)| i)
        .collect();
    Err(PhaseOneFailure { z, max_violation, violated })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `min c^T z` over a box, a disk on all but the last coordinate, and a
    /// linear constraint coupling the first and last (border) coordinates.
    struct Toy {
        n: usize,
        c: DVector<f64>,
        radius: f64,
    }

    impl ConvexProgram for Toy {
        fn dim(&self) -> usize {
            self.n
        }
        fn border(&self) -> usize {
            1
        }
        fn bandwidth(&self) -> usize {
            1
        }
        fn cost(&self) -> DVector<f64> {
            self.c.clone()
        }
        fn constraint_count(&self) -> usize {
            2 * self.n + 2
        }
        fn constraint_name(&self, i: usize) -> String {
            format!("c{i}")
        }
        fn in_domain(&self, _: &DVector<f64>) -> bool {
            true
        }
        fn values(&self, z: &DVector<f64>) -> Vec<f64> {
            self.evaluate(z).into_iter().map(|e| e.value).collect()
        }
        fn evaluate(&self, z: &DVector<f64>) -> Vec<ConstraintEval> {
            let n = self.n;
            let mut out = Vec::new();
            for i in 0..n {
                out.push(ConstraintEval { value: z[i] - 2.0, grad: vec![(i, 1.0)], hess: vec![] });
                out.push(ConstraintEval { value: -2.0 - z[i], grad: vec![(i, -1.0)], hess: vec![] });
            }
            let head = z.rows(0, n - 1);
            out.push(ConstraintEval {
                value: head.norm_squared() - self.radius * self.radius,
                grad: (0..n - 1).map(|i| (i, 2.0 * z[i])).collect(),
                hess: (0..n - 1)
                    .map(|i| HessBlock { idx: vec![i], mat: DMatrix::from_element(1, 1, 2.0) })
                    .collect(),
            });
            out.push(ConstraintEval {
                value: z[0] + z[n - 1] - 3.0,
                grad: vec![(0, 1.0), (n - 1, 1.0)],
                hess: vec![],
            });
            out
        }
    }

    #[test]
    fn band_cholesky_matches_dense() {
        let n = 9;
        let kb = 2;
        let mut band = Band::zeros(n, kb);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kb)..=i {
                let v = if i == j { 4.0 + i as f64 } else { 0.3 * ((i + 2 * j) % 5) as f64 - 0.5 };
                band.add(i, j, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let expected = dense.clone().cholesky().unwrap().solve(&b);
        assert!((band.mul(&b) - &dense * &b).amax() < 1e-12);
        assert!(band.factor());
        assert!((band.solve(&b) - expected).amax() < 1e-12);
    }

    #[test]
    fn solves_linear_objective_on_disk() {
        let n = 6;
        let c = DVector::from_fn(n, |i, _| if i == n - 1 { -1.0 } else if i % 2 == 0 { 1.0 } else { -0.5 });
        let p = Toy { n, c: c.clone(), radius: 1.5 };
        let res = minimize(&p, DVector::zeros(n), &BarrierOptions::default(), None);
        // disk-constrained head sits at -r c/|c|; the border coordinate hits its box
        let head = c.rows(0, n - 1).into_owned();
        let expected = -&head * (1.5 / head.norm());
        assert!((res.z.rows(0, n - 1) - expected).amax() < 1e-6);
        assert!((res.z[n - 1] - 2.0).abs() < 1e-6);
        assert!(res.kkt_residual < 1e-6, "{res:?}");
        assert!(!res.stalled);
    }

    #[test]
    fn phase_one_finds_interior_or_reports() {
        let n = 4;
        let p = Toy { n, c: DVector::zeros(n), radius: 1.0 };
        let z0 = DVector::from_element(n, 1.9);
        let z = find_interior(&p, &z0, &BarrierOptions::default()).unwrap();
        assert!(p.values(&z).iter().all(|&f| f < 0.0));

        // radius 0: the disk has no interior
        let q = Toy { n, c: DVector::zeros(n), radius: 0.0 };
        let err = find_interior(&q, &z0, &BarrierOptions::default()).unwrap_err();
        assert!(err.violated.contains(&(2 * n)));
        assert!(err.max_violation > -1e-6);
    }
}
