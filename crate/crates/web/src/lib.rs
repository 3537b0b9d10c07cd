//! Browser bindings for the `www/` demo page.

use nalgebra::Vector3;
use serde_json::json;
use wasm_bindgen::prelude::*;

use treefit::geometry::so3_exp;
use treefit::harness::bench::time_direction;
use treefit::harness::synth::{generate_model, generate_problem, jitter_state, SyntheticSpec, Topology};
use treefit::model::{forward_kinematics, keypoint_position, ModelState};
use treefit::optimizer::{optimize, Backend, SolveConfig};
use treefit::residuals::Problem;
use treefit::solver_dense::{self, DenseLayout};
use treefit::solver_sparse;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// A generated problem with its ground truth and a current state the page
/// can pose by hand or fit.
#[wasm_bindgen]
pub struct Demo {
    problem: Problem,
    truth: ModelState,
    state: ModelState,
}

#[wasm_bindgen]
impl Demo {
    /// `topology` is one of `smpl_like_23`, `smplh_like_51`, `chain`, `random_tree`.
    #[wasm_bindgen(constructor)]
    pub fn new(topology: &str, joints: usize, shape_params: usize, measurements: usize, noise_3d: f64, seed: u32) -> Result<Demo, JsError> {
        let topology: Topology = topology.parse().map_err(js_err)?;
        let joints = match topology {
            Topology::SmplLike23 => 23,
            Topology::SmplhLike51 => 51,
            _ => joints,
        };
        let spec = SyntheticSpec { joints, shape_params, measurements, noise_3d, seed: seed.into(), topology, ..Default::default() };
        let model = generate_model(&spec).map_err(js_err)?;
        let sp = generate_problem(&model.tree, &spec).map_err(js_err)?;
        let state = jitter_state(&sp.truth, 0.3, spec.seed);
        Ok(Demo { problem: sp.problem, truth: sp.truth, state })
    }

    #[wasm_bindgen(getter)]
    pub fn joints(&self) -> usize {
        self.problem.tree.num_joints()
    }

    /// Parent of every part, `-1` for the root.
    pub fn parents(&self) -> Vec<i32> {
        self.problem.tree.parents.iter().map(|p| p.map_or(-1, |q| q as i32)).collect()
    }

    /// Set joint `i` (1-based) to the rotation vector `(x, y, z)`.
    pub fn set_joint(&mut self, i: usize, x: f64, y: f64, z: f64) -> Result<(), JsError> {
        if i == 0 || i > self.state.joints.len() {
            return Err(JsError::new(&format!("no joint {i}")));
        }
        self.state.joints[i - 1] = so3_exp(&Vector3::new(x, y, z));
        Ok(())
    }

    /// Start over from the truth with every joint turned by up to `max_angle`.
    pub fn jitter(&mut self, max_angle: f64, seed: u32) {
        self.state = jitter_state(&self.truth, max_angle, seed.into());
    }

    /// Pixel coordinates `[u0, v0, u1, v1, …]` of the part origins of the
    /// current state (or of the truth).
    pub fn joint_pixels(&self, truth: bool) -> Vec<f64> {
        let s = if truth { &self.truth } else { &self.state };
        let view = forward_kinematics(s, &self.problem.tree);
        view.poses.iter().flat_map(|p| self.problem.camera.project(&p.translation).iter().copied().collect::<Vec<_>>()).collect()
    }

    /// Pixel coordinates of every keypoint, in the order of the model.
    pub fn keypoint_pixels(&self, truth: bool) -> Vec<f64> {
        let s = if truth { &self.truth } else { &self.state };
        let view = forward_kinematics(s, &self.problem.tree);
        let tree = &self.problem.tree;
        tree.keypoints
            .iter()
            .flat_map(|k| self.problem.camera.project(&keypoint_position(&view, k, &s.shape)).iter().copied().collect::<Vec<_>>())
            .collect()
    }

    /// Fit from the current state; returns the report as JSON.
    pub fn fit(&mut self, solver: &str, max_iters: usize) -> Result<String, JsError> {
        let backend: Backend = solver.parse().map_err(js_err)?;
        let config = SolveConfig { backend, max_iters, ..Default::default() };
        let (state, report) = optimize(&self.problem, &self.state, &config).map_err(js_err)?;
        self.state = state;
        let (truth_view, view) = (forward_kinematics(&self.truth, &self.problem.tree), forward_kinematics(&self.state, &self.problem.tree));
        let errors: Vec<f64> = self
            .problem
            .tree
            .keypoints
            .iter()
            .map(|k| (keypoint_position(&view, k, &self.state.shape) - keypoint_position(&truth_view, k, &self.truth.shape)).norm())
            .collect();
        Ok(json!({
            "solver": solver,
            "iterations": report.iterations,
            "objective_trace": report.objective_trace,
            "termination": report.termination.as_str(),
            "total_time_us": report.total_time_us,
            "mean_keypoint_error": errors.iter().sum::<f64>() / errors.len().max(1) as f64,
        })
        .to_string())
    }

    /// Median time of `repeats` direction computations per backend at the
    /// current state, and the largest relative difference between the two
    /// directions. JSON.
    pub fn compare(&self, repeats: usize) -> Result<String, JsError> {
        let repeats = repeats.max(1);
        let median = |backend| -> Result<f64, JsError> {
            let mut t = (0..repeats).map(|_| time_direction(&self.problem, &self.state, backend)).collect::<Result<Vec<_>, _>>().map_err(js_err)?;
            t.sort_by(f64::total_cmp);
            Ok(t[t.len() / 2])
        };
        let dense_us = median(Backend::Dense)?;
        let sparse_us = median(Backend::Sparse)?;
        let dense = solver_dense::gauss_newton_direction(&self.problem, &self.state, 0.0).map_err(js_err)?;
        let sparse = solver_sparse::gauss_newton_direction(&self.problem, &self.state, 0.0).map_err(js_err)?;
        let dx = sparse.to_dense(DenseLayout::of(&self.problem.tree));
        let diff = (&dx - &dense.dx).amax() / dense.dx.amax().max(f64::MIN_POSITIVE);
        Ok(json!({
            "dense_us": dense_us,
            "sparse_us": sparse_us,
            "speedup": dense_us / sparse_us,
            "relative_difference": diff,
            "unknowns": DenseLayout::of(&self.problem.tree).dim(),
        })
        .to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_the_truth() {
        let mut d = Demo::new("smpl_like_23", 0, 10, 300, 0.0, 3).unwrap();
        assert_eq!(d.joints(), 23);
        assert_eq!(d.keypoint_pixels(true).len(), 2 * d.problem.tree.keypoints.len());
        let report: serde_json::Value = serde_json::from_str(&d.fit("sparse", 50).unwrap()).unwrap();
        assert!(report["mean_keypoint_error"].as_f64().unwrap() <= 1e-6);
        let truth = d.joint_pixels(true);
        let fitted = d.joint_pixels(false);
        assert!(truth.iter().zip(&fitted).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn backends_agree() {
        let d = Demo::new("random_tree", 12, 3, 120, 0.01, 1).unwrap();
        let c: serde_json::Value = serde_json::from_str(&d.compare(3).unwrap()).unwrap();
        assert!(c["relative_difference"].as_f64().unwrap() <= 1e-8);
        assert_eq!(c["unknowns"].as_u64(), Some(6 + 36 + 3));
    }

    #[test]
    fn posing_moves_only_the_subtree() {
        let mut d = Demo::new("chain", 4, 0, 30, 0.0, 2).unwrap();
        let before = d.joint_pixels(false);
        d.set_joint(3, 0.4, 0.0, 0.0).unwrap();
        let after = d.joint_pixels(false);
        assert_eq!(before[..8], after[..8]);
        assert_ne!(before[8..], after[8..]);
        assert_eq!(d.parents()[0], -1);
    }
}
