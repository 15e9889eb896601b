//! Python bindings: scene simulation, geometry, dataset generation, and
//! prompted policy execution.

use icrt::geom;
use icrt::model::Model;
use icrt::runtime::PolicyState;
use icrt::sim::{
    self, evaluate_success, reset_scene, Camera, Dataset, Expert, ExpertOptions, SimScene,
    TaskSpec, IMG_SIZE,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyfunction]
fn rot6d_from_matrix(r: [[f64; 3]; 3]) -> PyResult<[f64; 6]> {
    geom::rot6d_from_matrix(&r).map_err(err)
}

#[pyfunction]
fn matrix_from_rot6d(v: [f64; 6]) -> PyResult<[[f64; 3]; 3]> {
    geom::matrix_from_rot6d(&v).map_err(err)
}

#[pyfunction]
fn lr_at(base_lr: f64, warmup_steps: usize, total_steps: usize, step: usize) -> PyResult<f64> {
    let s = icrt::optim::LrSchedule::new(base_lr, warmup_steps, total_steps, 0.0).map_err(err)?;
    Ok(s.lr_at(step))
}

/// A simulated tabletop episode for one task.
#[pyclass]
struct Scene {
    scene: SimScene,
    task: TaskSpec,
    expert: Expert,
}

#[pymethods]
impl Scene {
    #[new]
    fn new(task_label: &str, tier: u32, seed: u64) -> PyResult<Self> {
        let task = TaskSpec::parse(task_label).map_err(err)?;
        let scene = reset_scene(&task, tier, seed).map_err(err)?;
        let expert = Expert::new(&scene, &task, ExpertOptions::default()).map_err(err)?;
        Ok(Scene { scene, task, expert })
    }

    /// Step the simulator with a 10-d action; returns (proprio, done).
    fn step(&mut self, action: [f64; 10]) -> PyResult<([f64; 10], bool)> {
        let (s, obs, done) = sim::step(&self.scene, &geom::ActionVec(action)).map_err(err)?;
        self.scene = s;
        Ok((obs.proprio.0, done))
    }

    /// Scripted expert action for the current state.
    fn expert_action(&mut self) -> [f64; 10] {
        self.expert.next(&self.scene).0
    }

    fn expert_done(&self) -> bool {
        self.expert.is_done(&self.scene)
    }

    /// Render a camera ("side" or "wrist") to flat RGB bytes.
    fn render(&self, camera: &str) -> PyResult<Vec<u8>> {
        let cam = match camera {
            "side" => Camera::Side,
            "wrist" => Camera::Wrist,
            _ => return Err(PyValueError::new_err("camera must be 'side' or 'wrist'")),
        };
        Ok(sim::render(&self.scene, cam))
    }

    fn proprio(&self) -> PyResult<[f64; 10]> {
        Ok(self.scene.observe().proprio.0)
    }

    /// Partial-credit score of the episode so far.
    fn score(&self) -> f64 {
        evaluate_success(&self.scene, &self.task)
    }

    #[getter]
    fn image_size(&self) -> usize {
        IMG_SIZE
    }

    #[getter]
    fn step_count(&self) -> u32 {
        self.scene.step_count
    }
}

/// Generate a multi-task expert demonstration dataset; returns its sha256.
#[pyfunction]
#[pyo3(signature = (path, demos_per_task=8, seed=0))]
fn generate_dataset(path: PathBuf, demos_per_task: usize, seed: u64) -> PyResult<String> {
    let cfg = sim::GenerateConfig {
        tasks: sim::default_train_tasks(),
        demos_per_task,
        seed,
        ..Default::default()
    };
    let (_, report) = sim::generate_dataset(&cfg, &path).map_err(err)?;
    Ok(report.sha256)
}

/// Labels and per-task trajectory counts of a dataset file.
#[pyfunction]
fn dataset_info(path: PathBuf) -> PyResult<Vec<(String, usize)>> {
    let ds = Dataset::load(&path).map_err(err)?;
    Ok(ds
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), ds.trajectories.iter().filter(|t| t.task == i).count()))
        .collect())
}

/// A trained checkpoint driving a prompted policy.
#[pyclass]
struct Policy {
    model: Model,
    dataset: Dataset,
}

#[pymethods]
impl Policy {
    #[new]
    fn new(checkpoint: PathBuf, dataset: PathBuf) -> PyResult<Self> {
        Ok(Policy {
            model: Model::load(&checkpoint).map_err(err)?,
            dataset: Dataset::load(&dataset).map_err(err)?,
        })
    }

    /// Prompt with `n_demos` demonstrations of a task and roll out on a
    /// fresh tiered scene; returns the partial-credit score.
    #[pyo3(signature = (task_label, tier, scene_seed, n_demos=1))]
    fn rollout(&self, task_label: &str, tier: u32, scene_seed: u64, n_demos: usize) -> PyResult<f64> {
        let task = TaskSpec::parse(task_label).map_err(err)?;
        let idx = self
            .dataset
            .task_index(task_label)
            .ok_or_else(|| PyValueError::new_err(format!("task '{task_label}' not in dataset")))?;
        let demos: Vec<&sim::Trajectory> = self
            .dataset
            .trajectories
            .iter()
            .filter(|t| t.task == idx)
            .take(n_demos.max(1))
            .collect();
        let mut policy = PolicyState::new(&self.model);
        policy.prompt_ingest(&demos).map_err(err)?;
        let scene = reset_scene(&task, tier, scene_seed).map_err(err)?;
        let result =
            icrt::runtime::rollout(scene, &task, &mut policy, sim::EPISODE_BUDGET as usize)
                .map_err(err)?;
        Ok(result.score)
    }

    fn param_count(&self) -> usize {
        self.model.param_count()
    }
}

#[pymodule]
fn icrt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(rot6d_from_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_from_rot6d, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_info, m)?)?;
    m.add_class::<Scene>()?;
    m.add_class::<Policy>()?;
    m.add("IMG_SIZE", IMG_SIZE)?;
    Ok(())
}
