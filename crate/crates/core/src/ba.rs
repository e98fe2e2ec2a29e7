//! Sparse bundle adjustment: Levenberg-Marquardt on pixel reprojection
//! error with the point blocks eliminated by Schur complement, a Huber loss
//! and optional camera-centre priors.
//!
//! Cameras are parameterised by a rotation tangent (left-multiplicative,
//! 3) and the centre (3). One set of intrinsics is shared by all cameras.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{project, project_with_jacobian, CameraModel, Pose, INTRINSIC_COUNT};
use crate::scalar::{lit, to_f64, Real};
use crate::sfm::Reconstruction;

/// Pose parameters per camera: rotation tangent then centre.
pub const POSE_PARAMS: usize = 6;
pub const DEFAULT_HUBER_SCALE: f64 = 2.0;
const MAX_REJECTIONS: usize = 10;
const STALL_ITERATIONS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BAError {
    #[error("reconstruction has too few registered images or no tracks")]
    EmptyReconstruction,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("non-finite residual at observation {0}")]
    NonFiniteResidual(usize),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustLoss {
    Squared,
    /// Huber on the pixel residual norm with the given scale in pixels.
    Huber(f64),
}

impl Default for RobustLoss {
    fn default() -> Self {
        RobustLoss::Huber(DEFAULT_HUBER_SCALE)
    }
}

impl RobustLoss {
    /// `rho(s)` for a squared residual norm `s`.
    fn rho<T: Real>(&self, s: T) -> T {
        match *self {
            RobustLoss::Squared => s,
            RobustLoss::Huber(d) => {
                let d = lit::<T>(d);
                if s <= d * d {
                    s
                } else {
                    lit::<T>(2.0) * d * s.sqrt() - d * d
                }
            }
        }
    }

    /// `rho'(s)`, the iteratively reweighted least-squares weight.
    fn weight<T: Real>(&self, s: T) -> T {
        match *self {
            RobustLoss::Squared => T::one(),
            RobustLoss::Huber(d) => {
                let d = lit::<T>(d);
                if s <= d * d {
                    T::one()
                } else {
                    d / s.sqrt()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BACamera<T: Real> {
    pub pose: Pose<T>,
    /// Fixed flags for `[wx, wy, wz, cx, cy, cz]`.
    pub fixed: [bool; POSE_PARAMS],
}

impl<T: Real> BACamera<T> {
    pub fn free(pose: Pose<T>) -> Self {
        Self {
            pose,
            fixed: [false; POSE_PARAMS],
        }
    }

    pub fn fixed(pose: Pose<T>) -> Self {
        Self {
            pose,
            fixed: [true; POSE_PARAMS],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BAObservation<T: Real> {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vector2<T>,
}

/// Prior on a camera centre: residual `(c - position) / sigma` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionPrior<T: Real> {
    pub camera: usize,
    pub position: Vector3<T>,
    pub sigma: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BAProblem<T: Real> {
    pub intrinsics: CameraModel<T>,
    /// Fixed flags for `fx, fy, cx, cy, k1, k2`.
    pub intrinsics_fixed: [bool; INTRINSIC_COUNT],
    pub cameras: Vec<BACamera<T>>,
    pub points: Vec<Vector3<T>>,
    pub observations: Vec<BAObservation<T>>,
    pub priors: Vec<PositionPrior<T>>,
    pub loss: RobustLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    TrustRegionFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BAResult<T: Real> {
    pub initial_cost: T,
    pub final_cost: T,
    pub iterations: usize,
    pub termination: Termination,
    pub rms_reprojection: T,
    pub mean_reprojection: T,
    /// Cost before the first iteration and after every accepted step.
    pub cost_history: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub cost_rel_tol: f64,
    pub initial_lambda: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tol: 1e-10,
            cost_rel_tol: 1e-9,
            initial_lambda: 1e-4,
        }
    }
}

/// Which factorisation computes a damped step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolver {
    /// Points eliminated in closed form, dense reduced camera system.
    Schur,
    /// Full dense normal equations. Only for small problems.
    Dense,
}

/// Index of every free parameter. Camera and intrinsic parameters form the
/// reduced system; point parameters follow them in the full ordering.
#[derive(Debug, Clone)]
struct Layout {
    camera: Vec<[Option<usize>; POSE_PARAMS]>,
    intrinsics: [Option<usize>; INTRINSIC_COUNT],
    reduced: usize,
    points: usize,
}

impl Layout {
    fn new<T: Real>(p: &BAProblem<T>) -> Self {
        let mut next = 0;
        let mut camera = Vec::with_capacity(p.cameras.len());
        for c in &p.cameras {
            let mut idx = [None; POSE_PARAMS];
            for k in 0..POSE_PARAMS {
                if !c.fixed[k] {
                    idx[k] = Some(next);
                    next += 1;
                }
            }
            camera.push(idx);
        }
        let mut intrinsics = [None; INTRINSIC_COUNT];
        for k in 0..INTRINSIC_COUNT {
            if !p.intrinsics_fixed[k] {
                intrinsics[k] = Some(next);
                next += 1;
            }
        }
        Self {
            camera,
            intrinsics,
            reduced: next,
            points: p.points.len(),
        }
    }

    fn total(&self) -> usize {
        self.reduced + 3 * self.points
    }

    fn point(&self, i: usize) -> usize {
        self.reduced + 3 * i
    }
}

/// One linearised reprojection residual.
struct Linearized<T: Real> {
    residual: Vector2<T>,
    weight: T,
    /// `(reduced index, 2-vector column)` for free camera/intrinsic params.
    reduced: Vec<(usize, Vector2<T>)>,
    point: nalgebra::Matrix2x3<T>,
}

impl<T: Real> BAProblem<T> {
    /// Checks index validity, the two-observation rule and prior sigmas.
    pub fn validate(&self) -> Result<(), BAError> {
        let mut counts = vec![0usize; self.points.len()];
        for (i, o) in self.observations.iter().enumerate() {
            if o.camera >= self.cameras.len() || o.point >= self.points.len() {
                return Err(BAError::InvalidProblem(format!(
                    "observation {i} references a missing camera or point"
                )));
            }
            counts[o.point] += 1;
        }
        if let Some(p) = counts.iter().position(|&c| c < 2) {
            return Err(BAError::InvalidProblem(format!(
                "point {p} has fewer than two observations"
            )));
        }
        for pr in &self.priors {
            if pr.camera >= self.cameras.len() {
                return Err(BAError::InvalidProblem("prior references a missing camera".into()));
            }
            if !(pr.sigma.x > T::zero() && pr.sigma.y > T::zero() && pr.sigma.z > T::zero()) {
                return Err(BAError::InvalidProblem("prior sigma must be positive".into()));
            }
        }
        Ok(())
    }

    /// Number of residual components: two per observation, three per prior.
    pub fn residual_count(&self) -> usize {
        2 * self.observations.len() + 3 * self.priors.len()
    }

    /// Number of free parameters.
    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total()
    }

    /// Whether the 7-dof similarity gauge is removed: either priors on at
    /// least three distinct cameras, or one fully fixed camera plus at least
    /// one fixed centre component on another.
    pub fn gauge_is_fixed(&self) -> bool {
        let with_priors: BTreeSet<usize> = self.priors.iter().map(|p| p.camera).collect();
        if with_priors.len() >= 3 {
            return true;
        }
        let full = self.cameras.iter().position(|c| c.fixed.iter().all(|&f| f));
        match full {
            Some(i) => {
                !with_priors.is_empty()
                    || self
                        .cameras
                        .iter()
                        .enumerate()
                        .any(|(j, c)| j != i && c.fixed[3..].iter().any(|&f| f))
            }
            None => false,
        }
    }

    /// Sum of squared prior residuals, `sum |(c - c_prior) / sigma|^2`.
    pub fn prior_cost(&self) -> T {
        self.priors
            .iter()
            .map(|p| {
                let d = (self.cameras[p.camera].pose.center - p.position).component_div(&p.sigma);
                d.norm_squared()
            })
            .fold(T::zero(), |a, b| a + b)
    }

    /// Robust reprojection cost plus prior cost, in squared pixels.
    pub fn cost(&self) -> Result<T, BAError> {
        let mut total = self.prior_cost();
        for (i, o) in self.observations.iter().enumerate() {
            let p = project(&self.cameras[o.camera].pose, &self.intrinsics, &self.points[o.point])
                .ok_or(BAError::NonFiniteResidual(i))?;
            let s = (p - o.pixel).norm_squared();
            if !s.is_finite() {
                return Err(BAError::NonFiniteResidual(i));
            }
            total += self.loss.rho(s);
        }
        Ok(total)
    }

    /// Plain (non-robust) reprojection errors in pixels, one per observation.
    pub fn reprojection_errors(&self) -> Result<Vec<T>, BAError> {
        self.observations
            .iter()
            .enumerate()
            .map(|(i, o)| {
                project(&self.cameras[o.camera].pose, &self.intrinsics, &self.points[o.point])
                    .map(|p| (p - o.pixel).norm())
                    .filter(|e| e.is_finite())
                    .ok_or(BAError::NonFiniteResidual(i))
            })
            .collect()
    }

    /// Raw residual vector: reprojection residuals then prior residuals.
    pub fn residuals(&self) -> Result<DVector<T>, BAError> {
        let mut r = DVector::zeros(self.residual_count());
        for (i, o) in self.observations.iter().enumerate() {
            let p = project(&self.cameras[o.camera].pose, &self.intrinsics, &self.points[o.point])
                .ok_or(BAError::NonFiniteResidual(i))?;
            let d = p - o.pixel;
            if !(d.x.is_finite() && d.y.is_finite()) {
                return Err(BAError::NonFiniteResidual(i));
            }
            r[2 * i] = d.x;
            r[2 * i + 1] = d.y;
        }
        let base = 2 * self.observations.len();
        for (k, p) in self.priors.iter().enumerate() {
            let d = (self.cameras[p.camera].pose.center - p.position).component_div(&p.sigma);
            for a in 0..3 {
                r[base + 3 * k + a] = d[a];
            }
        }
        Ok(r)
    }

    fn linearize(&self, layout: &Layout) -> Result<Vec<Linearized<T>>, BAError> {
        self.observations
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let pj = project_with_jacobian(&self.cameras[o.camera].pose, &self.intrinsics, &self.points[o.point])
                    .ok_or(BAError::NonFiniteResidual(i))?;
                let residual = pj.pixel - o.pixel;
                if !(residual.x.is_finite() && residual.y.is_finite()) {
                    return Err(BAError::NonFiniteResidual(i));
                }
                let mut reduced = Vec::with_capacity(POSE_PARAMS + INTRINSIC_COUNT);
                for (k, idx) in layout.camera[o.camera].iter().enumerate() {
                    if let Some(idx) = idx {
                        reduced.push((*idx, pj.pose.column(k).into_owned()));
                    }
                }
                for (k, idx) in layout.intrinsics.iter().enumerate() {
                    if let Some(idx) = idx {
                        reduced.push((*idx, pj.intrinsics.column(k).into_owned()));
                    }
                }
                Ok(Linearized {
                    weight: self.loss.weight(residual.norm_squared()),
                    residual,
                    reduced,
                    point: pj.point,
                })
            })
            .collect()
    }

    /// Applies a step in the full free-parameter ordering.
    fn apply_step(&self, layout: &Layout, step: &DVector<T>) -> BAProblem<T> {
        let mut out = self.clone();
        for (c, idx) in out.cameras.iter_mut().zip(&layout.camera) {
            let get = |k: usize| idx[k].map(|i| step[i]).unwrap_or(T::zero());
            if idx[..3].iter().any(|i| i.is_some()) {
                let dw = Vector3::new(get(0), get(1), get(2));
                c.pose.rotation = nalgebra::UnitQuaternion::from_scaled_axis(dw) * c.pose.rotation;
            }
            for k in 0..3 {
                if idx[3 + k].is_some() {
                    c.pose.center[k] += get(3 + k);
                }
            }
        }
        let mut params = out.intrinsics.params();
        for (k, idx) in layout.intrinsics.iter().enumerate() {
            if let Some(i) = idx {
                params[k] += step[*i];
            }
        }
        out.intrinsics = CameraModel::from_params(&params);
        for (j, p) in out.points.iter_mut().enumerate() {
            let b = layout.point(j);
            *p += Vector3::new(step[b], step[b + 1], step[b + 2]);
        }
        out
    }
}

/// Weighted normal equations split into blocks.
struct Normal<T: Real> {
    /// Reduced (camera + intrinsics) block.
    u: DMatrix<T>,
    /// Per-point 3x3 blocks.
    v: Vec<Matrix3<T>>,
    /// Per observation: `(reduced index, 1x3 row of J_c^T W J_p)`.
    w: Vec<Vec<(usize, nalgebra::RowVector3<T>)>>,
    g_reduced: DVector<T>,
    g_points: Vec<Vector3<T>>,
}

fn normal_equations<T: Real>(problem: &BAProblem<T>, layout: &Layout, lin: &[Linearized<T>]) -> Normal<T> {
    let mut u = DMatrix::zeros(layout.reduced, layout.reduced);
    let mut v = vec![Matrix3::zeros(); layout.points];
    let mut g_reduced = DVector::zeros(layout.reduced);
    let mut g_points = vec![Vector3::zeros(); layout.points];
    let mut w = Vec::with_capacity(lin.len());
    for (o, l) in problem.observations.iter().zip(lin) {
        let wr = l.residual * l.weight;
        for &(i, ci) in &l.reduced {
            g_reduced[i] += ci.dot(&wr);
            for &(j, cj) in &l.reduced {
                u[(i, j)] += ci.dot(&cj) * l.weight;
            }
        }
        v[o.point] += l.point.transpose() * l.point * l.weight;
        g_points[o.point] += l.point.transpose() * wr;
        w.push(
            l.reduced
                .iter()
                .map(|&(i, ci)| (i, ci.transpose() * l.point * l.weight))
                .collect(),
        );
    }
    for p in &problem.priors {
        let c = &problem.cameras[p.camera].pose.center;
        for a in 0..3 {
            if let Some(i) = layout.camera[p.camera][3 + a] {
                let inv = T::one() / (p.sigma[a] * p.sigma[a]);
                u[(i, i)] += inv;
                g_reduced[i] += (c[a] - p.position[a]) * inv;
            }
        }
    }
    Normal {
        u,
        v,
        w,
        g_reduced,
        g_points,
    }
}

fn damp<T: Real>(d: T, lambda: T) -> T {
    d + lambda * d.max(lit(1e-12))
}

fn schur_step<T: Real>(problem: &BAProblem<T>, layout: &Layout, n: &Normal<T>, lambda: T) -> Option<DVector<T>> {
    let mut by_point: Vec<Vec<usize>> = vec![Vec::new(); layout.points];
    for (k, o) in problem.observations.iter().enumerate() {
        by_point[o.point].push(k);
    }
    let mut s = n.u.clone();
    for i in 0..layout.reduced {
        s[(i, i)] = damp(n.u[(i, i)], lambda);
    }
    let mut rhs = -n.g_reduced.clone();
    let mut v_inv = Vec::with_capacity(layout.points);
    for (j, obs) in by_point.iter().enumerate() {
        let mut vj = n.v[j];
        for a in 0..3 {
            vj[(a, a)] = damp(vj[(a, a)], lambda);
        }
        let inv = vj.try_inverse()?;
        let gp = n.g_points[j];
        for &oa in obs {
            for &(ia, wa) in &n.w[oa] {
                let wa_inv = wa * inv;
                rhs[ia] += (wa_inv * gp)[(0, 0)];
                for &ob in obs {
                    for &(ib, wb) in &n.w[ob] {
                        s[(ia, ib)] -= (wa_inv * wb.transpose())[(0, 0)];
                    }
                }
            }
        }
        v_inv.push(inv);
    }
    let dc = if layout.reduced > 0 {
        s.cholesky()?.solve(&rhs)
    } else {
        DVector::zeros(0)
    };
    let mut step = DVector::zeros(layout.total());
    step.rows_mut(0, layout.reduced).copy_from(&dc);
    for (j, obs) in by_point.iter().enumerate() {
        let mut b = -n.g_points[j];
        for &o in obs {
            for &(i, wi) in &n.w[o] {
                b -= wi.transpose() * dc[i];
            }
        }
        let dp = v_inv[j] * b;
        let base = layout.point(j);
        for a in 0..3 {
            step[base + a] = dp[a];
        }
    }
    step.iter().all(|v| v.is_finite()).then_some(step)
}

fn dense_system<T: Real>(problem: &BAProblem<T>, layout: &Layout, n: &Normal<T>) -> (DMatrix<T>, DVector<T>) {
    let total = layout.total();
    let mut h = DMatrix::zeros(total, total);
    let mut g = DVector::zeros(total);
    h.view_mut((0, 0), (layout.reduced, layout.reduced)).copy_from(&n.u);
    g.rows_mut(0, layout.reduced).copy_from(&n.g_reduced);
    for j in 0..layout.points {
        let b = layout.point(j);
        h.fixed_view_mut::<3, 3>(b, b).copy_from(&n.v[j]);
        g.fixed_rows_mut::<3>(b).copy_from(&n.g_points[j]);
    }
    for (o, obs) in problem.observations.iter().zip(&n.w) {
        let b = layout.point(o.point);
        for &(i, wi) in obs {
            for a in 0..3 {
                h[(i, b + a)] += wi[a];
                h[(b + a, i)] += wi[a];
            }
        }
    }
    (h, g)
}

fn dense_step<T: Real>(problem: &BAProblem<T>, layout: &Layout, n: &Normal<T>, lambda: T) -> Option<DVector<T>> {
    let (mut h, g) = dense_system(problem, layout, n);
    for i in 0..h.nrows() {
        h[(i, i)] = damp(h[(i, i)], lambda);
    }
    let step = h.cholesky()?.solve(&(-g));
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// One damped Gauss-Newton step in the full free-parameter ordering
/// (reduced parameters first, then three per point). `None` if the damped
/// system is not positive definite.
pub fn damped_step<T: Real>(
    problem: &BAProblem<T>,
    lambda: T,
    solver: LinearSolver,
) -> Result<Option<DVector<T>>, BAError> {
    problem.validate()?;
    let layout = Layout::new(problem);
    let lin = problem.linearize(&layout)?;
    let n = normal_equations(problem, &layout, &lin);
    Ok(match solver {
        LinearSolver::Schur => schur_step(problem, &layout, &n, lambda),
        LinearSolver::Dense => dense_step(problem, &layout, &n, lambda),
    })
}

fn max_gradient<T: Real>(n: &Normal<T>) -> T {
    let mut m = n.g_reduced.amax();
    for g in &n.g_points {
        m = m.max(g.amax());
    }
    m
}

/// Runs Levenberg-Marquardt in place. Accepted steps strictly decrease the
/// cost; fixed parameters are never touched.
pub fn solve<T: Real>(problem: &mut BAProblem<T>, opts: &SolverOptions) -> Result<BAResult<T>, BAError> {
    problem.validate()?;
    if !problem.gauge_is_fixed() {
        return Err(BAError::NumericalFailure(
            "gauge is not fixed: need a fixed camera and a fixed centre component, or priors on three cameras"
                .into(),
        ));
    }
    let layout = Layout::new(problem);
    let initial_cost = problem.cost()?;
    let mut cost = initial_cost;
    let mut cost_history = vec![initial_cost];
    let mut lambda = lit::<T>(opts.initial_lambda);
    let gradient_tol = lit::<T>(opts.gradient_tol);
    let rel_tol = lit::<T>(opts.cost_rel_tol);
    let mut iterations = 0;
    let mut stalled = 0;
    let termination = loop {
        if cost == T::zero() {
            break Termination::Converged;
        }
        let lin = problem.linearize(&layout)?;
        let n = normal_equations(problem, &layout, &lin);
        if max_gradient(&n) < gradient_tol {
            break Termination::Converged;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        let mut accepted = false;
        let mut factor_failures = 0;
        let mut predicted = T::zero();
        for _ in 0..MAX_REJECTIONS {
            let Some(step) = schur_step(problem, &layout, &n, lambda) else {
                factor_failures += 1;
                lambda *= lit(2.0);
                continue;
            };
            let grad_dot = n
                .g_reduced
                .iter()
                .zip(step.rows(0, layout.reduced).iter())
                .map(|(g, s)| *g * *s)
                .fold(T::zero(), |a, b| a + b)
                + n.g_points
                    .iter()
                    .enumerate()
                    .map(|(j, g)| g.dot(&step.fixed_rows::<3>(layout.point(j)).into_owned()))
                    .fold(T::zero(), |a, b| a + b);
            predicted = -grad_dot;
            let candidate = problem.apply_step(&layout, &step);
            match candidate.cost() {
                Ok(c) if c.is_finite() && c < cost => {
                    let rel = (cost - c) / cost;
                    *problem = candidate;
                    cost = c;
                    cost_history.push(c);
                    lambda = (lambda / lit(3.0)).max(lit(1e-15));
                    stalled = if rel < rel_tol { stalled + 1 } else { 0 };
                    accepted = true;
                    break;
                }
                _ => lambda *= lit(2.0),
            }
        }
        if factor_failures == MAX_REJECTIONS {
            return Err(BAError::NumericalFailure(
                "reduced system not positive definite after 10 damping increases".into(),
            ));
        }
        if !accepted {
            // No decrease possible: converged if the model predicts none either.
            break if predicted <= rel_tol * cost {
                Termination::Converged
            } else {
                Termination::TrustRegionFailure
            };
        }
        if stalled >= STALL_ITERATIONS {
            break Termination::Converged;
        }
    };
    let errors = problem.reprojection_errors()?;
    let count = lit::<T>(errors.len().max(1) as f64);
    let rms = (errors.iter().map(|e| *e * *e).fold(T::zero(), |a, b| a + b) / count).sqrt();
    let mean = errors.iter().fold(T::zero(), |a, b| a + *b) / count;
    Ok(BAResult {
        initial_cost,
        final_cost: cost,
        iterations,
        termination,
        rms_reprojection: rms,
        mean_reprojection: mean,
        cost_history,
    })
}

/// Analytic Jacobian of the raw residuals over the free parameters, in the
/// full ordering.
pub fn jacobian<T: Real>(problem: &BAProblem<T>) -> Result<DMatrix<T>, BAError> {
    let layout = Layout::new(problem);
    let lin = problem.linearize(&layout)?;
    let mut j = DMatrix::zeros(problem.residual_count(), layout.total());
    for (k, (o, l)) in problem.observations.iter().zip(&lin).enumerate() {
        for &(i, c) in &l.reduced {
            j[(2 * k, i)] = c.x;
            j[(2 * k + 1, i)] = c.y;
        }
        let b = layout.point(o.point);
        for a in 0..3 {
            j[(2 * k, b + a)] = l.point[(0, a)];
            j[(2 * k + 1, b + a)] = l.point[(1, a)];
        }
    }
    let base = 2 * problem.observations.len();
    for (k, p) in problem.priors.iter().enumerate() {
        for a in 0..3 {
            if let Some(i) = layout.camera[p.camera][3 + a] {
                j[(base + 3 * k + a, i)] = T::one() / p.sigma[a];
            }
        }
    }
    Ok(j)
}

fn parameter_values<T: Real>(problem: &BAProblem<T>, layout: &Layout) -> DVector<T> {
    let mut v = DVector::zeros(layout.total());
    for (c, idx) in problem.cameras.iter().zip(&layout.camera) {
        for k in 0..3 {
            if let Some(i) = idx[3 + k] {
                v[i] = c.pose.center[k];
            }
        }
    }
    let params = problem.intrinsics.params();
    for (k, idx) in layout.intrinsics.iter().enumerate() {
        if let Some(i) = idx {
            v[*i] = params[k];
        }
    }
    for (j, p) in problem.points.iter().enumerate() {
        let b = layout.point(j);
        for a in 0..3 {
            v[b + a] = p[a];
        }
    }
    v
}

/// Largest discrepancy between the analytic Jacobian and central finite
/// differences. Each parameter is stepped by `eps * max(1, |value|)`
/// (rotation tangents have value 0); each column's discrepancy is its
/// max-norm difference divided by `max(1, |analytic column|_max)`.
pub fn check_jacobian<T: Real>(problem: &BAProblem<T>, eps: f64) -> Result<T, BAError> {
    let layout = Layout::new(problem);
    problem.residuals()?;
    let analytic = jacobian(problem)?;
    let values = parameter_values(problem, &layout);
    let mut worst = T::zero();
    for col in 0..layout.total() {
        let h = lit::<T>(eps) * values[col].abs().max(T::one());
        let mut step = DVector::zeros(layout.total());
        step[col] = h;
        let plus = problem.apply_step(&layout, &step).residuals()?;
        step[col] = -h;
        let minus = problem.apply_step(&layout, &step).residuals()?;
        let numeric = (plus - minus) / (h + h);
        let a = analytic.column(col);
        let diff = (&numeric - a).amax();
        let scale = a.amax().max(T::one());
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

/// How `build_problem` assembles a problem from a reconstruction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildOptions<T: Real> {
    /// Images whose poses are adjusted; `None` adjusts every registered one.
    /// Other registered images observing the same points enter as fixed.
    pub free_images: Option<Vec<usize>>,
    pub refine_intrinsics: bool,
    /// Centre priors keyed by image index.
    pub priors: Vec<(usize, Vector3<T>, Vector3<T>)>,
    pub loss: RobustLoss,
}

/// Problem indices back to reconstruction indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemMapping {
    /// Image index of each problem camera.
    pub images: Vec<usize>,
    /// Track id of each problem point.
    pub tracks: Vec<usize>,
}

/// Builds a problem from a reconstruction. Points with an observation in a
/// free image and at least two registered observations are included; the
/// gauge is held by the seed pair (first pose fully, the dominant centre
/// component of the second) unless priors cover three or more cameras.
pub fn build_problem<T: Real>(
    recon: &Reconstruction<T>,
    opts: &BuildOptions<T>,
) -> Result<(BAProblem<T>, ProblemMapping), BAError> {
    let registered = recon.registered();
    if registered.len() < 2 || recon.points.is_empty() {
        return Err(BAError::EmptyReconstruction);
    }
    let free: BTreeSet<usize> = match &opts.free_images {
        Some(list) => list.iter().copied().filter(|&i| recon.is_registered(i)).collect(),
        None => registered.iter().copied().collect(),
    };
    let mut camera_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut images = Vec::new();
    let mut points = Vec::new();
    let mut tracks = Vec::new();
    let mut observations = Vec::new();
    for (&track, point) in &recon.points {
        let obs: Vec<(usize, usize)> = point
            .observations
            .iter()
            .copied()
            .filter(|&(i, _)| recon.is_registered(i))
            .collect();
        if obs.len() < 2 || !obs.iter().any(|(i, _)| free.contains(i)) {
            continue;
        }
        let pi = points.len();
        points.push(point.position);
        tracks.push(track);
        for (image, kp) in obs {
            let ci = *camera_of.entry(image).or_insert_with(|| {
                images.push(image);
                images.len() - 1
            });
            observations.push(BAObservation {
                camera: ci,
                point: pi,
                pixel: recon.keypoints[image][kp],
            });
        }
    }
    if points.is_empty() {
        return Err(BAError::EmptyReconstruction);
    }
    let mut cameras: Vec<BACamera<T>> = images
        .iter()
        .map(|&i| {
            let pose = recon.poses[i].unwrap();
            if free.contains(&i) {
                BACamera::free(pose)
            } else {
                BACamera::fixed(pose)
            }
        })
        .collect();
    let priors: Vec<PositionPrior<T>> = opts
        .priors
        .iter()
        .filter_map(|&(image, position, sigma)| {
            camera_of.get(&image).map(|&camera| PositionPrior {
                camera,
                position,
                sigma,
            })
        })
        .collect();
    let prior_cameras: BTreeSet<usize> = priors.iter().map(|p| p.camera).collect();
    if prior_cameras.len() < 3 {
        if let Some((a, b)) = recon.gauge {
            if let Some(&ca) = camera_of.get(&a) {
                cameras[ca].fixed = [true; POSE_PARAMS];
                if let (Some(&cb), Some(pa), Some(pb)) = (camera_of.get(&b), recon.poses[a], recon.poses[b]) {
                    let d = pb.center - pa.center;
                    cameras[cb].fixed[3 + d.iamax()] = true;
                }
            }
        }
    }
    let intrinsics_fixed = [!opts.refine_intrinsics; INTRINSIC_COUNT];
    Ok((
        BAProblem {
            intrinsics: recon.camera,
            intrinsics_fixed,
            cameras,
            points,
            observations,
            priors,
            loss: opts.loss,
        },
        ProblemMapping { images, tracks },
    ))
}

/// Writes adjusted poses, points and intrinsics back into the reconstruction.
pub fn apply_solution<T: Real>(recon: &mut Reconstruction<T>, problem: &BAProblem<T>, map: &ProblemMapping) {
    for (c, &image) in problem.cameras.iter().zip(&map.images) {
        recon.poses[image] = Some(c.pose);
    }
    for (p, track) in problem.points.iter().zip(&map.tracks) {
        if let Some(sp) = recon.points.get_mut(track) {
            sp.position = *p;
        }
    }
    recon.camera = problem.intrinsics;
}

/// Cost summary for logging.
pub fn describe<T: Real>(r: &BAResult<T>) -> String {
    format!(
        "cost {:.6e} -> {:.6e} in {} iterations ({:?}), rms {:.4} px",
        to_f64(r.initial_cost),
        to_f64(r.final_cost),
        r.iterations,
        r.termination,
        to_f64(r.rms_reprojection)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nadir(x: f64, y: f64) -> Pose<f64> {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        Pose::new(UnitQuaternion::from_matrix(&r), Vector3::new(x, y, 100.0))
    }

    fn small_problem(seed: u64, cams: usize, pts: usize) -> BAProblem<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intrinsics = CameraModel {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 375.0,
            k1: -0.02,
            k2: 0.001,
        };
        let cameras: Vec<_> = (0..cams)
            .map(|i| BACamera::free(nadir(15.0 * i as f64, rng.random_range(-3.0..3.0))))
            .collect();
        let points: Vec<_> = (0..pts)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-10.0..30.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let mut observations = Vec::new();
        for (pi, x) in points.iter().enumerate() {
            for (ci, c) in cameras.iter().enumerate() {
                let p = project(&c.pose, &intrinsics, x).unwrap();
                observations.push(BAObservation {
                    camera: ci,
                    point: pi,
                    pixel: p + Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                });
            }
        }
        let mut p = BAProblem {
            intrinsics,
            intrinsics_fixed: [false; INTRINSIC_COUNT],
            cameras,
            points,
            observations,
            priors: Vec::new(),
            loss: RobustLoss::default(),
        };
        p.cameras[0].fixed = [true; POSE_PARAMS];
        p.cameras[1].fixed[3] = true;
        p
    }

    #[test]
    fn counting() {
        let mut p = small_problem(1, 2, 10);
        p.intrinsics_fixed = [true; INTRINSIC_COUNT];
        assert_eq!(p.residual_count(), 40);
        assert_eq!(p.parameter_count(), 5 + 30);
        p.priors = (0..2)
            .map(|c| PositionPrior {
                camera: c,
                position: p.cameras[c].pose.center,
                sigma: Vector3::new(0.01, 0.01, 0.03),
            })
            .collect();
        assert_eq!(p.residual_count(), 46);
    }

    #[test]
    fn huber_loss() {
        let l = RobustLoss::Huber(2.0);
        assert_eq!(l.rho(1.0f64), 1.0);
        assert_eq!(l.rho(9.0f64), 2.0 * 2.0 * 3.0 - 4.0);
        assert_eq!(l.weight(16.0f64), 0.5);
    }

    #[test]
    fn jacobian_against_finite_differences() {
        let mut p = small_problem(2, 3, 8);
        p.priors.push(PositionPrior {
            camera: 2,
            position: Vector3::new(30.0, 0.0, 100.0),
            sigma: Vector3::new(0.01, 0.02, 0.03),
        });
        assert!(check_jacobian(&p, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn all_fixed_has_no_discrepancy() {
        let mut p = small_problem(3, 2, 3);
        p.intrinsics_fixed = [true; INTRINSIC_COUNT];
        p.cameras.iter_mut().for_each(|c| c.fixed = [true; POSE_PARAMS]);
        let layout = Layout::new(&p);
        assert_eq!(layout.total(), 9);
        // remove point freedom by checking a problem with no points left
        let empty = BAProblem {
            points: vec![],
            observations: vec![],
            ..p
        };
        assert_eq!(check_jacobian(&empty, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn point_on_camera_center() {
        let mut p = small_problem(4, 2, 3);
        p.points[0] = p.cameras[0].pose.center;
        assert!(matches!(check_jacobian(&p, 1e-6), Err(BAError::NonFiniteResidual(_))));
    }

    #[test]
    fn schur_equals_dense() {
        let p = small_problem(5, 4, 12);
        for lambda in [1e-4, 1e-1, 10.0] {
            let a = damped_step(&p, lambda, LinearSolver::Schur).unwrap().unwrap();
            let b = damped_step(&p, lambda, LinearSolver::Dense).unwrap().unwrap();
            assert!((&a - &b).amax() <= 1e-8 * b.amax(), "lambda {lambda}");
        }
    }

    #[test]
    fn gauge_deficiency_is_reported() {
        let mut p = small_problem(6, 3, 10);
        p.cameras[1].fixed = [false; POSE_PARAMS];
        assert!(matches!(
            solve(&mut p, &SolverOptions::default()),
            Err(BAError::NumericalFailure(_))
        ));
    }

    #[test]
    fn cost_decreases_and_fixed_blocks_stay() {
        let mut p = small_problem(7, 4, 20);
        let before = p.cameras[0];
        let c1x = p.cameras[1].pose.center.x;
        let r = solve(&mut p, &SolverOptions::default()).unwrap();
        assert!(r.final_cost <= r.initial_cost);
        assert_eq!(p.cameras[0], before);
        assert_eq!(p.cameras[1].pose.center.x.to_bits(), c1x.to_bits());
    }

    #[test]
    fn prior_cost_matches_direct_sum() {
        let mut p = small_problem(8, 3, 5);
        let s = Vector3::new(0.01, 0.02, 0.03);
        let offset = Vector3::new(0.1, -0.2, 0.3);
        p.priors = (0..3)
            .map(|c| PositionPrior {
                camera: c,
                position: p.cameras[c].pose.center + offset,
                sigma: s,
            })
            .collect();
        let expected = 3.0 * ((0.1f64 / 0.01).powi(2) + (0.2f64 / 0.02).powi(2) + (0.3f64 / 0.03).powi(2));
        assert!((p.prior_cost() - expected).abs() < 1e-9);
    }
}
