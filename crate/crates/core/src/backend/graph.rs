//! Pose graph over submap and scan nodes, solved with Levenberg-Marquardt.
//!
//! Residual of a constraint `i -> j` with measurement `z`:
//! `e_t = R_iᵀ (t_j - t_i) - z_t`, `e_θ = wrap(θ_j - θ_i - z_θ)`; the cost is
//! `Σ eᵀ W e` with diagonal `W`. Scan nodes whose neighbours are all
//! non-scan nodes are eliminated with a Schur complement before the dense
//! solve, so the reduced system is sized by the submap count.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Submap(usize),
    Scan(usize),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Submap(i) => write!(f, "submap {i}"),
            NodeId::Scan(i) => write!(f, "scan {i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Intra,
    LoopClosure,
}

/// Information weights, `1 / σ²` per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Information {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Information {
    pub fn from_sigmas(sx: f64, sy: f64, stheta: f64) -> Self {
        Self {
            x: 1.0 / (sx * sx),
            y: 1.0 / (sy * sy),
            theta: 1.0 / (stheta * stheta),
        }
    }

    fn diag(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub from: NodeId,
    pub to: NodeId,
    /// Pose of `to` in the frame of `from`.
    pub measurement: Pose2,
    pub information: Information,
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this.
    pub min_decrease: f64,
    pub initial_lambda: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            min_decrease: 1e-6,
            initial_lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    ids: Vec<NodeId>,
    poses: Vec<Pose2>,
    index: HashMap<NodeId, usize>,
    constraints: Vec<Constraint>,
}

type Block = Matrix3<f64>;
type Jac = SMatrix<f64, 3, 3>;

/// Residual and Jacobians of one constraint with respect to `(x_i, x_j)`.
pub fn residual_and_jacobians(pi: &Pose2, pj: &Pose2, z: &Pose2) -> (Vector3<f64>, Jac, Jac) {
    let (s, c) = pi.theta.sin_cos();
    let dx = pj.x - pi.x;
    let dy = pj.y - pi.y;
    let e = Vector3::new(
        c * dx + s * dy - z.x,
        -s * dx + c * dy - z.y,
        normalize_angle(pj.theta - pi.theta - z.theta),
    );
    #[rustfmt::skip]
    let a = Jac::new(
        -c, -s, -s * dx + c * dy,
         s, -c, -c * dx - s * dy,
        0.0, 0.0, -1.0,
    );
    #[rustfmt::skip]
    let b = Jac::new(
         c,  s, 0.0,
        -s,  c, 0.0,
        0.0, 0.0, 1.0,
    );
    (e, a, b)
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node; the first node added is the fixed gauge.
    pub fn add_node(&mut self, id: NodeId, pose: Pose2) -> Result<()> {
        if self.index.contains_key(&id) {
            return Err(Error::State(format!("{id} already in the graph")));
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.poses.push(pose);
        Ok(())
    }

    pub fn add_constraint(&mut self, c: Constraint) -> Result<()> {
        for n in [c.from, c.to] {
            if !self.index.contains_key(&n) {
                return Err(Error::UnknownNode(n.to_string()));
            }
        }
        self.constraints.push(c);
        Ok(())
    }

    /// Constraint from `submap` to `scan` with measurement
    /// `submap_pose⁻¹ ∘ scan_pose`.
    pub fn add_intra_constraint(
        &mut self,
        submap: NodeId,
        scan: NodeId,
        submap_pose: &Pose2,
        scan_pose: &Pose2,
        information: Information,
    ) -> Result<()> {
        self.add_constraint(Constraint {
            from: submap,
            to: scan,
            measurement: submap_pose.between(scan_pose),
            information,
            kind: ConstraintKind::Intra,
        })
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn pose(&self, id: NodeId) -> Option<Pose2> {
        self.index.get(&id).map(|&k| self.poses[k])
    }

    pub fn set_pose(&mut self, id: NodeId, pose: Pose2) -> Result<()> {
        let k = *self.index.get(&id).ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        self.poses[k] = pose;
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, Pose2)> + '_ {
        self.ids.iter().copied().zip(self.poses.iter().copied())
    }

    pub fn cost(&self) -> f64 {
        self.cost_at(&self.poses)
    }

    fn cost_at(&self, poses: &[Pose2]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let (e, _, _) = residual_and_jacobians(&poses[self.index[&c.from]], &poses[self.index[&c.to]], &c.measurement);
                e.component_mul(&e).dot(&c.information.diag())
            })
            .sum()
    }

    /// Nodes not reachable from the gauge.
    pub fn disconnected(&self) -> Vec<NodeId> {
        let n = self.ids.len();
        if n == 0 {
            return Vec::new();
        }
        let mut adj = vec![Vec::new(); n];
        for c in &self.constraints {
            let (a, b) = (self.index[&c.from], self.index[&c.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(k) = queue.pop_front() {
            for &m in &adj[k] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        (0..n).filter(|&k| !seen[k]).map(|k| self.ids[k]).collect()
    }

    /// Minimizes the weighted squared residuals with the first node fixed.
    pub fn optimize(&mut self, params: &SolverParams) -> Result<SolveReport> {
        let missing = self.disconnected();
        if !missing.is_empty() {
            return Err(Error::Disconnected {
                component: missing.iter().map(|n| n.to_string()).collect(),
            });
        }
        let initial_cost = self.cost();
        let mut report = SolveReport {
            initial_cost,
            final_cost: initial_cost,
            iterations: 0,
        };
        if self.ids.len() < 2 || self.constraints.is_empty() {
            return Ok(report);
        }

        let layout = Layout::new(self);
        let mut cost = initial_cost;
        let mut lambda = params.initial_lambda;
        for it in 0..params.max_iterations {
            report.iterations = it + 1;
            let system = self.linearize(&layout);
            let mut accepted = false;
            while lambda < 1e12 {
                let Some(delta) = system.solve(&layout, lambda) else {
                    lambda *= 10.0;
                    continue;
                };
                let candidate: Vec<Pose2> = self
                    .poses
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let d = &delta[k];
                        Pose2::new(p.x + d.x, p.y + d.y, normalize_angle(p.theta + d.z))
                    })
                    .collect();
                let new_cost = self.cost_at(&candidate);
                if new_cost <= cost {
                    let decrease = cost - new_cost;
                    self.poses = candidate;
                    cost = new_cost;
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    if decrease < params.min_decrease {
                        report.final_cost = cost;
                        return Ok(report);
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        report.final_cost = cost;
        Ok(report)
    }

    fn linearize(&self, layout: &Layout) -> System {
        let nk = layout.kept.len();
        let mut a = DMatrix::<f64>::zeros(3 * nk, 3 * nk);
        let mut rk = DVector::<f64>::zeros(3 * nk);
        let ne = layout.eliminated.len();
        let mut d = vec![Block::zeros(); ne];
        let mut re = vec![Vector3::zeros(); ne];
        let mut coupling: Vec<Vec<(usize, Block)>> = vec![Vec::new(); ne];

        for c in &self.constraints {
            let (i, j) = (self.index[&c.from], self.index[&c.to]);
            let (e, ja, jb) = residual_and_jacobians(&self.poses[i], &self.poses[j], &c.measurement);
            let w = Block::from_diagonal(&c.information.diag());
            let parts = [(layout.slot[i], ja), (layout.slot[j], jb)];
            for (si, ji) in &parts {
                let g = ji.transpose() * w * e;
                match *si {
                    Slot::Fixed => {}
                    Slot::Kept(k) => {
                        let mut seg = rk.fixed_rows_mut::<3>(3 * k);
                        seg -= g;
                    }
                    Slot::Eliminated(k) => re[k] -= g,
                }
                for (sj, jj) in &parts {
                    let h = ji.transpose() * w * jj;
                    match (*si, *sj) {
                        (Slot::Kept(p), Slot::Kept(q)) => {
                            let mut blk = a.fixed_view_mut::<3, 3>(3 * p, 3 * q);
                            blk += h;
                        }
                        (Slot::Eliminated(p), Slot::Eliminated(q)) if p == q => d[p] += h,
                        (Slot::Kept(p), Slot::Eliminated(q)) => add_coupling(&mut coupling[q], p, h),
                        _ => {}
                    }
                }
            }
        }
        System { a, rk, d, re, coupling }
    }
}

fn add_coupling(list: &mut Vec<(usize, Block)>, k: usize, h: Block) {
    match list.iter_mut().find(|(m, _)| *m == k) {
        Some((_, b)) => *b += h,
        None => list.push((k, h)),
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Fixed,
    Kept(usize),
    Eliminated(usize),
}

struct Layout {
    slot: Vec<Slot>,
    kept: Vec<usize>,
    eliminated: Vec<usize>,
}

impl Layout {
    fn new(g: &PoseGraph) -> Self {
        let n = g.ids.len();
        let mut neighbours_all_submaps = vec![true; n];
        for c in &g.constraints {
            let (a, b) = (g.index[&c.from], g.index[&c.to]);
            if matches!(c.from, NodeId::Scan(_)) {
                neighbours_all_submaps[b] = false;
            }
            if matches!(c.to, NodeId::Scan(_)) {
                neighbours_all_submaps[a] = false;
            }
        }
        let mut slot = vec![Slot::Fixed; n];
        let mut kept = Vec::new();
        let mut eliminated = Vec::new();
        for k in 1..n {
            if matches!(g.ids[k], NodeId::Scan(_)) && neighbours_all_submaps[k] {
                slot[k] = Slot::Eliminated(eliminated.len());
                eliminated.push(k);
            } else {
                slot[k] = Slot::Kept(kept.len());
                kept.push(k);
            }
        }
        Self { slot, kept, eliminated }
    }
}

struct System {
    a: DMatrix<f64>,
    rk: DVector<f64>,
    d: Vec<Block>,
    re: Vec<Vector3<f64>>,
    coupling: Vec<Vec<(usize, Block)>>,
}

impl System {
    /// Per-node step (zero for the gauge), or `None` if the damped system
    /// is not positive definite.
    fn solve(&self, layout: &Layout, lambda: f64) -> Option<Vec<Vector3<f64>>> {
        let mut s = self.a.clone();
        for k in 0..s.nrows() {
            s[(k, k)] += lambda;
        }
        let mut r = self.rk.clone();
        let mut d_inv = Vec::with_capacity(self.d.len());
        for (e, d) in self.d.iter().enumerate() {
            let inv = (d + Block::identity() * lambda).try_inverse()?;
            let cpl = &self.coupling[e];
            for (p, bp) in cpl {
                let bp_dinv = bp * inv;
                let mut seg = r.fixed_rows_mut::<3>(3 * p);
                seg -= bp_dinv * self.re[e];
                for (q, bq) in cpl {
                    let mut blk = s.fixed_view_mut::<3, 3>(3 * p, 3 * q);
                    blk -= bp_dinv * bq.transpose();
                }
            }
            d_inv.push(inv);
        }
        let dk = if s.nrows() > 0 { s.cholesky()?.solve(&r) } else { r };

        let mut delta = vec![Vector3::zeros(); layout.slot.len()];
        for (k, &node) in layout.kept.iter().enumerate() {
            delta[node] = dk.fixed_rows::<3>(3 * k).into_owned();
        }
        for (e, &node) in layout.eliminated.iter().enumerate() {
            let mut rhs = self.re[e];
            for (p, bp) in &self.coupling[e] {
                rhs -= bp.transpose() * dk.fixed_rows::<3>(3 * p);
            }
            delta[node] = d_inv[e] * rhs;
        }
        Some(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn info() -> Information {
        Information::from_sigmas(0.05, 0.05, 1f64.to_radians())
    }

    #[test]
    fn intra_measurements() {
        let mut g = PoseGraph::new();
        g.add_node(NodeId::Submap(0), Pose2::origin()).unwrap();
        g.add_node(NodeId::Scan(0), Pose2::new(1.0, 0.0, 0.0)).unwrap();
        g.add_intra_constraint(NodeId::Submap(0), NodeId::Scan(0), &Pose2::origin(), &Pose2::new(1.0, 0.0, 0.0), info())
            .unwrap();
        assert_eq!(g.constraints()[0].measurement, Pose2::new(1.0, 0.0, 0.0));

        let sm = Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let sc = Pose2::new(0.0, 1.0, std::f64::consts::FRAC_PI_2);
        let z = sm.between(&sc);
        assert!((z.x - 1.0).abs() < 1e-12 && z.y.abs() < 1e-12 && z.theta.abs() < 1e-12);

        // multiset: duplicates are kept
        g.add_intra_constraint(NodeId::Submap(0), NodeId::Scan(0), &Pose2::origin(), &Pose2::new(1.0, 0.0, 0.0), info())
            .unwrap();
        assert_eq!(g.constraints().len(), 2);
    }

    #[test]
    fn unknown_node_rejected() {
        let mut g = PoseGraph::new();
        g.add_node(NodeId::Submap(0), Pose2::origin()).unwrap();
        let err = g
            .add_intra_constraint(NodeId::Submap(0), NodeId::Scan(7), &Pose2::origin(), &Pose2::origin(), info())
            .unwrap_err();
        assert!(matches!(err, Error::UnknownNode(ref s) if s == "scan 7"));
    }

    #[test]
    fn disconnected_graph_named() {
        let mut g = PoseGraph::new();
        g.add_node(NodeId::Submap(0), Pose2::origin()).unwrap();
        g.add_node(NodeId::Submap(1), Pose2::origin()).unwrap();
        let err = g.optimize(&SolverParams::default()).unwrap_err();
        match err {
            Error::Disconnected { component } => assert_eq!(component, vec!["submap 1".to_string()]),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn single_node_unchanged() {
        let mut g = PoseGraph::new();
        g.add_node(NodeId::Submap(0), Pose2::new(1.0, 2.0, 0.5)).unwrap();
        let r = g.optimize(&SolverParams::default()).unwrap();
        assert_eq!(r.final_cost, 0.0);
        assert_eq!(g.pose(NodeId::Submap(0)), Some(Pose2::new(1.0, 2.0, 0.5)));
    }

    #[test]
    fn consistent_graph_stays_put() {
        let poses = [Pose2::origin(), Pose2::new(1.0, 0.2, 0.3), Pose2::new(2.0, -0.5, -1.0)];
        let mut g = PoseGraph::new();
        g.add_node(NodeId::Submap(0), poses[0]).unwrap();
        g.add_node(NodeId::Submap(1), poses[1]).unwrap();
        g.add_node(NodeId::Scan(0), poses[2]).unwrap();
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            let ids = [NodeId::Submap(0), NodeId::Submap(1), NodeId::Scan(0)];
            g.add_intra_constraint(ids[a], ids[b], &poses[a], &poses[b], info()).unwrap();
        }
        let r = g.optimize(&SolverParams::default()).unwrap();
        assert!(r.final_cost < 1e-18);
        for (k, (_, p)) in g.nodes().enumerate() {
            assert!((p.x - poses[k].x).abs() < 1e-9);
            assert!((p.y - poses[k].y).abs() < 1e-9);
            assert!((p.theta - poses[k].theta).abs() < 1e-9);
        }
    }

    #[test]
    fn schur_and_dense_paths_agree() {
        // Same problem solved with scan nodes eliminated and with them kept
        // (by naming them as submaps).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let build = |as_scans: bool, rng: &mut ChaCha8Rng| {
            let mut g = PoseGraph::new();
            let sub: Vec<Pose2> = (0..4).map(|k| Pose2::new(k as f64, 0.1 * k as f64, 0.05 * k as f64)).collect();
            for (k, p) in sub.iter().enumerate() {
                g.add_node(NodeId::Submap(k), *p).unwrap();
            }
            for s in 0..12 {
                let id = if as_scans { NodeId::Scan(s) } else { NodeId::Submap(100 + s) };
                let truth = Pose2::new(s as f64 * 0.3, 0.2, 0.01 * s as f64);
                g.add_node(id, Pose2::new(truth.x + 0.05, truth.y - 0.03, truth.theta)).unwrap();
                for m in [s / 4, (s / 4 + 1).min(3)] {
                    let mut z = sub[m].between(&truth);
                    z.x += rng.random_range(-0.02..0.02);
                    z.theta += rng.random_range(-0.01..0.01);
                    g.add_constraint(Constraint {
                        from: NodeId::Submap(m),
                        to: id,
                        measurement: z,
                        information: info(),
                        kind: ConstraintKind::Intra,
                    })
                    .unwrap();
                }
            }
            g
        };
        let mut a = build(true, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = build(false, &mut rng);
        let params = SolverParams { min_decrease: 0.0, max_iterations: 100, ..SolverParams::default() };
        a.optimize(&params).unwrap();
        b.optimize(&params).unwrap();
        for ((_, p), (_, q)) in a.nodes().zip(b.nodes()) {
            assert!((p.x - q.x).abs() < 1e-8 && (p.y - q.y).abs() < 1e-8 && (p.theta - q.theta).abs() < 1e-8);
        }
    }

    fn noisy_chain(rng: &mut ChaCha8Rng, offset: &Pose2) -> PoseGraph {
        let mut g = PoseGraph::new();
        let truth: Vec<Pose2> = (0..6).map(|k| Pose2::new(k as f64, (k as f64 * 0.7).sin(), 0.2 * k as f64)).collect();
        for (k, p) in truth.iter().enumerate() {
            g.add_node(NodeId::Submap(k), offset.compose(&Pose2::new(p.x + 0.1, p.y - 0.1, p.theta + 0.05))).unwrap();
        }
        for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)] {
            let mut z = truth[a].between(&truth[b]);
            z.x += rng.random_range(-0.05..0.05);
            z.theta += rng.random_range(-0.02..0.02);
            g.add_constraint(Constraint {
                from: NodeId::Submap(a),
                to: NodeId::Submap(b),
                measurement: z,
                information: info(),
                kind: ConstraintKind::LoopClosure,
            })
            .unwrap();
        }
        g
    }

    #[test]
    fn moving_the_gauge_moves_the_solution_rigidly() {
        let offset = Pose2::new(-3.0, 7.0, 2.5);
        let mut a = noisy_chain(&mut ChaCha8Rng::seed_from_u64(9), &Pose2::origin());
        let mut b = noisy_chain(&mut ChaCha8Rng::seed_from_u64(9), &offset);
        let ra = a.optimize(&SolverParams::default()).unwrap();
        let rb = b.optimize(&SolverParams::default()).unwrap();
        assert!(ra.final_cost < ra.initial_cost);
        assert!((ra.final_cost - rb.final_cost).abs() < 1e-6 * ra.final_cost.max(1.0));
        for ((_, pa), (_, pb)) in a.nodes().zip(b.nodes()) {
            let moved = offset.compose(&pa);
            assert!((moved.x - pb.x).abs() < 1e-5 && (moved.y - pb.y).abs() < 1e-5, "{moved:?} {pb:?}");
            assert!(normalize_angle(moved.theta - pb.theta).abs() < 1e-6);
        }
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..200 {
            let mut p = || Pose2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0));
            let (pi, pj, z) = (p(), p(), p());
            let (e, a, b) = residual_and_jacobians(&pi, &pj, &z);
            if e.z.abs() > 3.1 {
                continue;
            }
            for (which, jac) in [(0, a), (1, b)] {
                for k in 0..3 {
                    let shift = |s: f64| {
                        let mut q = [pi, pj];
                        match k {
                            0 => q[which].x += s,
                            1 => q[which].y += s,
                            _ => q[which].theta += s,
                        }
                        residual_and_jacobians(&q[0], &q[1], &z).0
                    };
                    let fd = (shift(h) - shift(-h)) / (2.0 * h);
                    for r in 0..3 {
                        assert!((jac[(r, k)] - fd[r]).abs() <= 1e-4 * jac[(r, k)].abs().max(1.0));
                    }
                }
            }
        }
    }
}
