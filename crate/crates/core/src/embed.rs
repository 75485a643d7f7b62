//! Numerical substrate: embedding tables, Xavier initialization, a sparse
//! row-wise Adam optimizer, and a finite-difference gradient checker.

use std::collections::BTreeMap;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{add_scaled, l2_norm, Matrix};

/// Addressable parameter block. Entity/relation rows are sparse (per-row
/// keys); the transform, encoder, and classifier blocks are dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Param {
    Ent1(usize),
    Ent2(usize),
    Rel1(usize),
    Rel2(usize),
    Transform,
    AggSelf,
    AggNbr,
    NncW1,
    NncB1,
    NncW2,
    NncB2,
}

/// Sparse gradient accumulator keyed by [`Param`].
///
/// A `BTreeMap` keeps application order deterministic, which the trainer's
/// reproducibility contract relies on.
#[derive(Debug, Default, Clone)]
pub struct GradStore {
    grads: BTreeMap<Param, Vec<f64>>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Param, grad: &[f64]) {
        self.add_scaled(param, grad, 1.0);
    }

    pub fn add_scaled(&mut self, param: Param, grad: &[f64], scale: f64) {
        let entry = self
            .grads
            .entry(param)
            .or_insert_with(|| vec![0.0; grad.len()]);
        debug_assert_eq!(entry.len(), grad.len());
        add_scaled(entry, grad, scale);
    }

    pub fn entry_mut(&mut self, param: Param, len: usize) -> &mut [f64] {
        self.grads.entry(param).or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, param: Param) -> Option<&[f64]> {
        self.grads.get(&param).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Param, &Vec<f64>)> {
        self.grads.iter()
    }

    pub fn merge(&mut self, other: GradStore) {
        for (p, g) in other.grads {
            self.add(p, &g);
        }
    }

    pub fn params(&self) -> impl Iterator<Item = Param> + '_ {
        self.grads.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }
}

/// Loss value with the gradients of every parameter it touched.
#[derive(Debug, Default)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: GradStore,
}

impl LossOutput {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Resolves a [`Param`] key to its mutable storage.
pub trait ParamTable {
    fn param_mut(&mut self, param: Param) -> Option<&mut [f64]>;
}

/// Per-KG entity and relation embedding tables plus the cross-KG transform M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub ent1: Matrix,
    pub ent2: Matrix,
    pub rel1: Matrix,
    pub rel2: Matrix,
    pub transform: Matrix,
}

impl EmbeddingSpace {
    /// Xavier-initializes every table; each table draws from its own stream
    /// derived from `seed`.
    pub fn init(
        dim: usize,
        n_ent1: usize,
        n_rel1: usize,
        n_ent2: usize,
        n_rel2: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(EmbeddingSpace {
            ent1: xavier_init(n_ent1, dim, subseed(seed, "ent1"))?,
            ent2: xavier_init(n_ent2, dim, subseed(seed, "ent2"))?,
            rel1: xavier_init(n_rel1, dim, subseed(seed, "rel1"))?,
            rel2: xavier_init(n_rel2, dim, subseed(seed, "rel2"))?,
            transform: xavier_init(dim, dim, subseed(seed, "transform"))?,
        })
    }

    pub fn dim(&self) -> usize {
        self.ent1.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.ent1.is_finite()
            && self.ent2.is_finite()
            && self.rel1.is_finite()
            && self.rel2.is_finite()
            && self.transform.is_finite()
    }
}

impl ParamTable for EmbeddingSpace {
    fn param_mut(&mut self, param: Param) -> Option<&mut [f64]> {
        match param {
            Param::Ent1(r) => Some(self.ent1.row_mut(r)),
            Param::Ent2(r) => Some(self.ent2.row_mut(r)),
            Param::Rel1(r) => Some(self.rel1.row_mut(r)),
            Param::Rel2(r) => Some(self.rel2.row_mut(r)),
            Param::Transform => Some(self.transform.data_mut()),
            _ => None,
        }
    }
}

/// Derives an independent stream seed from a master seed and a tag (FNV-1a).
pub fn subseed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Returns a seeded stream for a named purpose.
pub fn seeded_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, tag))
}

/// Xavier uniform initialization: i.i.d. samples in `[−b, b]` with
/// `b = sqrt(6 / (rows + cols))`.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid(format!(
            "xavier_init: zero dimension ({rows}x{cols})"
        )));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound)
        .map_err(|e| Error::Invalid(format!("xavier_init: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Sparse Adam: moments live per parameter block and are bias-corrected by
/// that block's own step counter, so rows touched rarely are not penalized
/// by the global step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    slots: BTreeMap<ParamKey, AdamSlot>,
}

/// Dense mirror of [`Param`] used as the Adam slot key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct ParamKey(u8, usize);

fn key_of(p: Param) -> ParamKey {
    match p {
        Param::Ent1(r) => ParamKey(0, r),
        Param::Ent2(r) => ParamKey(1, r),
        Param::Rel1(r) => ParamKey(2, r),
        Param::Rel2(r) => ParamKey(3, r),
        Param::Transform => ParamKey(4, 0),
        Param::AggSelf => ParamKey(5, 0),
        Param::AggNbr => ParamKey(6, 0),
        Param::NncW1 => ParamKey(7, 0),
        Param::NncB1 => ParamKey(8, 0),
        Param::NncW2 => ParamKey(9, 0),
        Param::NncB2 => ParamKey(10, 0),
    }
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            slots: BTreeMap::new(),
        }
    }

    /// Applies one bias-corrected Adam update for every gradient entry.
    ///
    /// Rejects non-finite gradients so divergence surfaces at the step that
    /// produced it rather than epochs later.
    pub fn apply(&mut self, table: &mut dyn ParamTable, grads: &GradStore) -> Result<()> {
        for (&param, grad) in grads.iter() {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {param:?}")));
            }
            let row = table
                .param_mut(param)
                .ok_or_else(|| Error::Invalid(format!("no storage for {param:?}")))?;
            let slot = self.slots.entry(key_of(param)).or_default();
            if slot.m.is_empty() {
                slot.m = vec![0.0; grad.len()];
                slot.v = vec![0.0; grad.len()];
            }
            adam_update_row(row, grad, slot, &self.config);
        }
        Ok(())
    }
}

fn adam_update_row(row: &mut [f64], grad: &[f64], slot: &mut AdamSlot, cfg: &AdamConfig) {
    debug_assert_eq!(row.len(), grad.len());
    slot.step += 1;
    let t = slot.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, &g), (m, v)) in row
        .iter_mut()
        .zip(grad)
        .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// L2-normalizes the listed rows in place; zero rows are left untouched.
pub fn normalize_rows(matrix: &mut Matrix, rows: impl IntoIterator<Item = usize>) {
    for r in rows {
        let row = matrix.row_mut(r);
        let n = l2_norm(row);
        if n > 0.0 {
            for x in row {
                *x /= n;
            }
        }
    }
}

/// Central-difference gradient check.
///
/// Returns the maximum over coordinates of
/// `|fd − analytic| / max(1e-12, |fd| + |analytic|)`.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    assert!(h > 0.0, "step must be positive");
    let mut work = params.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = loss(&work);
        work[i] = orig - h;
        let down = loss(&work);
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {i}")));
        }
        let fd = (up - down) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / f64::max(1e-12, fd.abs() + analytic[i].abs());
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::dot;
    use approx::assert_relative_eq;

    #[test]
    fn xavier_bound_and_determinism() {
        let m = xavier_init(2, 3, 7).unwrap();
        let b = (6.0f64 / 5.0).sqrt();
        assert_relative_eq!(b, 1.095_445, epsilon = 1e-5);
        assert!(m.data().iter().all(|&x| x.abs() <= b));
        assert_eq!(m, xavier_init(2, 3, 7).unwrap());
        assert_ne!(m, xavier_init(2, 3, 8).unwrap());

        let single = xavier_init(1, 1, 3).unwrap();
        assert!(single.data()[0].abs() <= 3.0f64.sqrt());

        assert!(xavier_init(0, 3, 1).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut row = vec![1.0, -2.0];
        let mut slot = AdamSlot {
            m: vec![0.0; 2],
            v: vec![0.0; 2],
            step: 0,
        };
        adam_update_row(&mut row, &[0.0, 0.0], &mut slot, &AdamConfig::with_lr(0.001));
        assert_eq!(row, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_matches_hand_evaluation() {
        // g = 1, fresh state, lr = 0.001: Δ = −lr·g/(|g| + ε)
        let mut row = vec![0.0];
        let mut slot = AdamSlot {
            m: vec![0.0],
            v: vec![0.0],
            step: 0,
        };
        adam_update_row(&mut row, &[1.0], &mut slot, &AdamConfig::with_lr(0.001));
        assert_relative_eq!(row[0], -0.001 / (1.0 + 1e-8), epsilon = 1e-12);
    }

    #[test]
    fn adam_repeated_steps_decrease() {
        let mut row = vec![0.0];
        let mut slot = AdamSlot {
            m: vec![0.0],
            v: vec![0.0],
            step: 0,
        };
        let cfg = AdamConfig::with_lr(0.001);
        adam_update_row(&mut row, &[1.0], &mut slot, &cfg);
        let after_one = row[0];
        adam_update_row(&mut row, &[1.0], &mut slot, &cfg);
        assert!(row[0] < after_one && after_one < 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut space = EmbeddingSpace::init(2, 2, 1, 2, 1, 0).unwrap();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.001));
        let mut grads = GradStore::new();
        grads.add(Param::Ent1(0), &[f64::NAN, 0.0]);
        assert!(matches!(
            adam.apply(&mut space, &grads),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn finite_diff_quadratic() {
        let p = vec![0.3, -1.2, 2.0];
        let grad = p.clone();
        let err = finite_diff_check(|x| 0.5 * dot(x, x), &p, &grad, 1e-5).unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn finite_diff_flags_wrong_gradient() {
        let p = vec![0.7, -0.4];
        let wrong: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let err = finite_diff_check(|x| 0.5 * dot(x, x), &p, &wrong, 1e-5).unwrap();
        assert_relative_eq!(err, 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn finite_diff_constant_loss() {
        let p = vec![1.0, 2.0];
        let err = finite_diff_check(|_| 3.5, &p, &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn normalize_rows_unit_norm() {
        let mut m = Matrix::from_vec(2, 2, vec![3.0, 4.0, 0.0, 0.0]);
        normalize_rows(&mut m, [0, 1]);
        assert_relative_eq!(l2_norm(m.row(0)), 1.0);
        assert_eq!(m.row(1), &[0.0, 0.0]);
    }
}
