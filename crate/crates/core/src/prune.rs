//! Iterative magnitude pruning.
//!
//! Every weight tensor carries a binary mask. Masks only ever lose ones: each
//! pruning event ranks the still-unmasked prunable weights by magnitude and
//! masks the smallest until the requested fraction of all prunable weights
//! is zero.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::PruneError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Embedding,
    Dense,
    /// Biases and other 1-D parameters; never pruned.
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneStrategy {
    /// Dense weights only; embeddings are left intact.
    Partial,
    /// Dense weights and embeddings.
    InclEmbeddings,
}

impl PruneStrategy {
    pub const ALL: [PruneStrategy; 2] = [PruneStrategy::Partial, PruneStrategy::InclEmbeddings];

    pub fn prunes(self, role: TensorRole) -> bool {
        match (self, role) {
            (_, TensorRole::Excluded) => false,
            (_, TensorRole::Dense) => true,
            (PruneStrategy::Partial, TensorRole::Embedding) => false,
            (PruneStrategy::InclEmbeddings, TensorRole::Embedding) => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PruneStrategy::Partial => "partial",
            PruneStrategy::InclEmbeddings => "incl-embeddings",
        }
    }
}

impl fmt::Display for PruneStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PruneStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PruneStrategy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown pruning strategy `{s}`"))
    }
}

/// A named weight tensor with its pruning mask. `values` is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    name: String,
    shape: Vec<usize>,
    role: TensorRole,
    pub values: Vec<f64>,
    mask: Vec<bool>,
}

impl ParamTensor {
    pub fn new(
        name: impl Into<String>,
        shape: Vec<usize>,
        role: TensorRole,
        values: Vec<f64>,
    ) -> Result<Self, PruneError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(PruneError::Tensor {
                name,
                message: format!("shape {shape:?} needs {expected} values, got {}", values.len()),
            });
        }
        let mask = vec![true; values.len()];
        Ok(Self {
            name,
            shape,
            role,
            values,
            mask,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>, role: TensorRole) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, role, vec![0.0; n]).expect("size matches shape")
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self, PruneError> {
        if mask.len() != self.values.len() {
            return Err(PruneError::Tensor {
                name: self.name,
                message: "mask length differs from value count".into(),
            });
        }
        self.mask = mask;
        self.apply_mask();
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn role(&self) -> TensorRole {
        self.role
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    fn apply_mask(&mut self) {
        for (v, keep) in self.values.iter_mut().zip(&self.mask) {
            if !keep {
                *v = 0.0;
            }
        }
    }
}

/// Shape of the sparsity ramp between the first and last pruning event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ramp {
    #[default]
    Cubic,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub start_step: u64,
    pub end_step: u64,
    pub frequency: u64,
    pub target_sparsity: f64,
    #[serde(default)]
    pub ramp: Ramp,
}

impl PruneSchedule {
    pub fn new(
        start_step: u64,
        end_step: u64,
        frequency: u64,
        target_sparsity: f64,
    ) -> Result<Self, PruneError> {
        let s = Self {
            start_step,
            end_step,
            frequency,
            target_sparsity,
            ramp: Ramp::Cubic,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_ramp(mut self, ramp: Ramp) -> Self {
        self.ramp = ramp;
        self
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(PruneError::Target(self.target_sparsity));
        }
        if self.start_step > self.end_step {
            return Err(PruneError::Schedule(format!(
                "start step {} after end step {}",
                self.start_step, self.end_step
            )));
        }
        if self.frequency == 0 {
            return Err(PruneError::Schedule("frequency must be at least 1".into()));
        }
        Ok(())
    }

    /// Sparsity scheduled for `step`: 0 before the start, the target from
    /// the end on, and the ramp in between.
    pub fn sparsity_at(&self, step: u64) -> f64 {
        if step < self.start_step {
            return 0.0;
        }
        if step >= self.end_step {
            return self.target_sparsity;
        }
        let progress = (step - self.start_step) as f64 / (self.end_step - self.start_step) as f64;
        let remaining = 1.0 - progress;
        match self.ramp {
            Ramp::Cubic => self.target_sparsity * (1.0 - remaining * remaining * remaining),
            Ramp::Linear => self.target_sparsity * progress,
        }
    }

    /// Events fall every `frequency` steps from the start; the end step is
    /// always an event, even when the span is not a multiple of the
    /// frequency.
    pub fn is_event(&self, step: u64) -> bool {
        step >= self.start_step
            && step <= self.end_step
            && ((step - self.start_step) % self.frequency == 0 || step == self.end_step)
    }

    /// Pruning events `(step, sparsity)` from start to end inclusive.
    pub fn events(&self) -> Result<Vec<(u64, f64)>, PruneError> {
        self.validate()?;
        let mut steps: Vec<u64> = (self.start_step..=self.end_step)
            .step_by(self.frequency as usize)
            .collect();
        if steps.last() != Some(&self.end_step) {
            steps.push(self.end_step);
        }
        Ok(steps.into_iter().map(|t| (t, self.sparsity_at(t))).collect())
    }
}

/// Whether the magnitude threshold is shared across tensors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdScope {
    #[default]
    Global,
    PerTensor,
}

/// `floor(fraction * n)`, tolerant of the rounding error in products such
/// as `0.29 * 100`.
pub fn masked_target(fraction: f64, n: usize) -> usize {
    let exact = fraction * n as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() <= 1e-9 * exact.abs().max(1.0) {
        rounded as usize
    } else {
        exact.floor() as usize
    }
}

fn prunable_totals(params: &[ParamTensor], strategy: PruneStrategy) -> (usize, usize) {
    params
        .iter()
        .filter(|p| strategy.prunes(p.role))
        .fold((0, 0), |(n, m), p| (n + p.len(), m + p.masked_count()))
}

/// Fraction of prunable weights that are masked.
pub fn measure_sparsity(params: &[ParamTensor], strategy: PruneStrategy) -> Result<f64, PruneError> {
    let (n, masked) = prunable_totals(params, strategy);
    if n == 0 {
        return Err(PruneError::NothingPrunable);
    }
    Ok(masked as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskUpdate {
    pub prunable: usize,
    pub masked: usize,
    pub newly_masked: usize,
}

/// Masks the smallest-magnitude unmasked weights until `floor(sparsity * N)`
/// of the `N` prunable weights are masked. Magnitude ties go to the tensor
/// whose name sorts first, then to the lower flat index.
pub fn compute_masks(
    params: &mut [ParamTensor],
    sparsity: f64,
    strategy: PruneStrategy,
    scope: ThresholdScope,
) -> Result<MaskUpdate, PruneError> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(PruneError::Target(sparsity));
    }
    let (n, already) = prunable_totals(params, strategy);
    if n == 0 {
        return Err(PruneError::NothingPrunable);
    }
    let achieved = already as f64 / n as f64;
    if sparsity + 1e-12 < achieved {
        return Err(PruneError::NotMonotone {
            requested: sparsity,
            achieved,
        });
    }

    let mut order: Vec<usize> = (0..params.len())
        .filter(|&i| strategy.prunes(params[i].role))
        .collect();
    order.sort_by(|&a, &b| params[a].name.cmp(&params[b].name));

    let newly_masked = match scope {
        ThresholdScope::Global => {
            let want = masked_target(sparsity, n).saturating_sub(already);
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for (rank, &t) in order.iter().enumerate() {
                let p = &params[t];
                candidates.extend(
                    p.values
                        .iter()
                        .zip(&p.mask)
                        .enumerate()
                        .filter(|(_, (_, keep))| **keep)
                        .map(|(i, (v, _))| (v.abs(), rank, i)),
                );
            }
            select_smallest(&mut candidates, want);
            for &(_, rank, i) in &candidates[..want] {
                params[order[rank]].mask[i] = false;
            }
            want
        }
        ThresholdScope::PerTensor => {
            let mut total = 0;
            for &t in &order {
                let p = &mut params[t];
                let want = masked_target(sparsity, p.len()).saturating_sub(p.masked_count());
                let mut candidates: Vec<(f64, usize, usize)> = p
                    .values
                    .iter()
                    .zip(&p.mask)
                    .enumerate()
                    .filter(|(_, (_, keep))| **keep)
                    .map(|(i, (v, _))| (v.abs(), 0, i))
                    .collect();
                select_smallest(&mut candidates, want);
                for &(_, _, i) in &candidates[..want] {
                    p.mask[i] = false;
                }
                total += want;
            }
            total
        }
    };
    apply_masks(params);
    let (_, masked) = prunable_totals(params, strategy);
    Ok(MaskUpdate {
        prunable: n,
        masked,
        newly_masked,
    })
}

fn by_magnitude(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Moves the `k` smallest entries to the front (in no particular order).
fn select_smallest(candidates: &mut [(f64, usize, usize)], k: usize) {
    if k == 0 || k >= candidates.len() {
        return;
    }
    candidates.select_nth_unstable_by(k - 1, by_magnitude);
}

/// Zeroes every masked weight. Idempotent.
pub fn apply_masks(params: &mut [ParamTensor]) {
    for p in params {
        p.apply_mask();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
    pub values_file: String,
    pub mask_file: String,
}

/// `manifest.json` of a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub strategy: PruneStrategy,
    pub achieved_sparsity: f64,
    pub tensors: Vec<TensorEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `manifest.json`, one little-endian f64 file (`<name>.f64`) and one
/// byte-per-element mask file (`<name>.mask`) per tensor.
pub fn save_checkpoint(
    dir: &Path,
    params: &[ParamTensor],
    strategy: PruneStrategy,
) -> Result<CheckpointManifest, PruneError> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(params.len());
    for p in params {
        if p.name.is_empty() || p.name.contains(['/', '\\']) || p.name.starts_with('.') {
            return Err(PruneError::Tensor {
                name: p.name.clone(),
                message: "name is not usable as a file name".into(),
            });
        }
        let values_file = format!("{}.f64", p.name);
        let mask_file = format!("{}.mask", p.name);
        let bytes: Vec<u8> = p.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&values_file), bytes)?;
        let mask: Vec<u8> = p.mask.iter().map(|&k| u8::from(k)).collect();
        fs::write(dir.join(&mask_file), mask)?;
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            role: p.role,
            values_file,
            mask_file,
        });
    }
    let manifest = CheckpointManifest {
        format_version: 1,
        strategy,
        achieved_sparsity: measure_sparsity(params, strategy).unwrap_or(0.0),
        tensors,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Vec<ParamTensor>), PruneError> {
    let bad = |message: String| PruneError::Checkpoint {
        path: dir.to_path_buf(),
        message,
    };
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != 1 {
        return Err(bad(format!("unsupported format version {}", manifest.format_version)));
    }
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let bytes = fs::read(dir.join(&entry.values_file))?;
        if bytes.len() != n * 8 {
            return Err(bad(format!("{}: expected {} bytes", entry.values_file, n * 8)));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mask_bytes = fs::read(dir.join(&entry.mask_file))?;
        if mask_bytes.len() != n {
            return Err(bad(format!("{}: expected {n} bytes", entry.mask_file)));
        }
        let mask = mask_bytes
            .iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(bad(format!("{}: mask byte {other}", entry.mask_file))),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        if values.iter().zip(&mask).any(|(v, keep)| !keep && *v != 0.0) {
            return Err(bad(format!("{}: masked weight is non-zero", entry.name)));
        }
        params.push(
            ParamTensor::new(entry.name.clone(), entry.shape.clone(), entry.role, values)?
                .with_mask(mask)?,
        );
    }
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(name: &str, values: Vec<f64>) -> ParamTensor {
        let n = values.len();
        ParamTensor::new(name, vec![n], TensorRole::Dense, values).unwrap()
    }

    #[test]
    fn events_for_smallest_bucket() {
        let s = PruneSchedule::new(10, 60, 10, 0.9).unwrap();
        let steps: Vec<u64> = s.events().unwrap().iter().map(|e| e.0).collect();
        assert_eq!(steps, vec![10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn zero_target_is_noop() {
        let s = PruneSchedule::new(10, 60, 10, 0.0).unwrap();
        assert!(s.events().unwrap().iter().all(|e| e.1 == 0.0));
    }

    #[test]
    fn cubic_ramp_values() {
        let s = PruneSchedule::new(0, 100, 50, 0.98).unwrap();
        let ev = s.events().unwrap();
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[0], (0, 0.0));
        assert!((ev[1].1 - 0.8575).abs() < 1e-12);
        assert_eq!(ev[2].1, 0.98);
        let lin = s.with_ramp(Ramp::Linear);
        assert!((lin.sparsity_at(50) - 0.49).abs() < 1e-12);
    }

    #[test]
    fn degenerate_single_event() {
        let s = PruneSchedule::new(5, 5, 1, 0.5).unwrap();
        assert_eq!(s.events().unwrap(), vec![(5, 0.5)]);
    }

    #[test]
    fn bad_schedules() {
        assert!(matches!(PruneSchedule::new(0, 10, 5, 1.0), Err(PruneError::Target(_))));
        assert!(PruneSchedule::new(10, 0, 5, 0.5).is_err());
        assert!(PruneSchedule::new(0, 10, 0, 0.5).is_err());
        let uneven = PruneSchedule::new(700, 1800, 150, 0.9).unwrap();
        let steps: Vec<u64> = uneven.events().unwrap().iter().map(|e| e.0).collect();
        assert_eq!(steps, vec![700, 850, 1000, 1150, 1300, 1450, 1600, 1750, 1800]);
        assert!(uneven.is_event(1800) && !uneven.is_event(1790));
        assert_eq!(uneven.sparsity_at(1800), 0.9);
    }

    #[test]
    fn four_weight_example() {
        let mut params = vec![dense("w", vec![0.1, -0.5, 0.3, 0.05])];
        let up = compute_masks(&mut params, 0.5, PruneStrategy::Partial, ThresholdScope::Global)
            .unwrap();
        assert_eq!(up.masked, 2);
        assert_eq!(params[0].mask(), &[false, true, true, false]);
        assert_eq!(params[0].values, vec![0.0, -0.5, 0.3, 0.0]);
    }

    #[test]
    fn zero_sparsity_masks_nothing() {
        let mut params = vec![dense("w", vec![0.1, 0.0, 0.3])];
        compute_masks(&mut params, 0.0, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        assert_eq!(params[0].masked_count(), 0);
    }

    #[test]
    fn ties_break_by_name_then_index() {
        let mut params = vec![dense("b", vec![1.0, 1.0]), dense("a", vec![1.0, 1.0])];
        compute_masks(&mut params, 0.5, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        assert_eq!(params[1].mask(), &[false, false]);
        assert_eq!(params[0].mask(), &[true, true]);
        compute_masks(&mut params, 0.75, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        assert_eq!(params[0].mask(), &[false, true]);
    }

    #[test]
    fn monotonicity_error() {
        let mut params = vec![dense("w", vec![1.0, 2.0, 3.0, 4.0])];
        compute_masks(&mut params, 0.5, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        let err = compute_masks(&mut params, 0.25, PruneStrategy::Partial, ThresholdScope::Global)
            .unwrap_err();
        assert!(matches!(err, PruneError::NotMonotone { .. }));
    }

    #[test]
    fn masks_never_regrow() {
        // After masking, the survivors shrink below the masked ones.
        let mut params = vec![dense("w", vec![0.1, 0.2, 5.0, 6.0])];
        compute_masks(&mut params, 0.5, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        params[0].values[2] = 0.01;
        params[0].values[3] = 0.02;
        compute_masks(&mut params, 0.75, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        assert_eq!(params[0].mask(), &[false, false, false, true]);
    }

    #[test]
    fn strategy_changes_prunable_set() {
        let emb = ParamTensor::new("emb", vec![2, 2], TensorRole::Embedding, vec![0.01; 4]).unwrap();
        let bias = ParamTensor::new("bias", vec![2], TensorRole::Excluded, vec![0.0, 0.0]).unwrap();
        let mut params = vec![emb, dense("w", vec![1.0, 2.0, 3.0, 4.0]), bias];
        compute_masks(&mut params, 0.5, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        assert!(params[0].mask().iter().all(|k| *k));
        assert_eq!(params[1].masked_count(), 2);
        assert_eq!(measure_sparsity(&params, PruneStrategy::Partial).unwrap(), 0.5);
        assert_eq!(measure_sparsity(&params, PruneStrategy::InclEmbeddings).unwrap(), 0.25);

        let emb = ParamTensor::new("emb", vec![2, 2], TensorRole::Embedding, vec![0.01; 4]).unwrap();
        let bias = ParamTensor::new("bias", vec![2], TensorRole::Excluded, vec![0.0, 0.0]).unwrap();
        let mut fresh = vec![emb, dense("w", vec![1.0, 2.0, 3.0, 4.0]), bias];
        compute_masks(&mut fresh, 0.5, PruneStrategy::InclEmbeddings, ThresholdScope::Global)
            .unwrap();
        assert_eq!(fresh[0].masked_count(), 4);
        assert_eq!(fresh[2].masked_count(), 0);
    }

    #[test]
    fn per_tensor_scope() {
        let mut params = vec![dense("a", vec![0.1, 0.2]), dense("b", vec![5.0, 6.0])];
        compute_masks(&mut params, 0.5, PruneStrategy::Partial, ThresholdScope::PerTensor)
            .unwrap();
        assert_eq!(params[0].mask(), &[false, true]);
        assert_eq!(params[1].mask(), &[false, true]);
    }

    #[test]
    fn apply_masks_cases() {
        let mut p = vec![dense("w", vec![1.0, -2.0])];
        apply_masks(&mut p);
        assert_eq!(p[0].values, vec![1.0, -2.0]);
        let mut z = vec![dense("w", vec![1.0, -2.0]).with_mask(vec![false, false]).unwrap()];
        apply_masks(&mut z);
        assert_eq!(z[0].values, vec![0.0, 0.0]);
    }

    #[test]
    fn measure_errors_without_prunables() {
        let bias = ParamTensor::new("b", vec![2], TensorRole::Excluded, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            measure_sparsity(&[bias], PruneStrategy::InclEmbeddings),
            Err(PruneError::NothingPrunable)
        ));
        assert_eq!(measure_sparsity(&[dense("w", vec![1.0])], PruneStrategy::Partial).unwrap(), 0.0);
    }

    #[test]
    fn floor_target() {
        assert_eq!(masked_target(0.29, 100), 29);
        assert_eq!(masked_target(0.5, 3), 1);
        assert_eq!(masked_target(0.98, 7), 6);
        assert_eq!(masked_target(0.0, 0), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let emb = ParamTensor::new("emb", vec![2, 2], TensorRole::Embedding, vec![1.5, -2.0, 3.0, 0.25])
            .unwrap();
        let mut params = vec![emb, dense("w", vec![0.1, -0.5, 0.3, 0.05])];
        compute_masks(&mut params, 0.5, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        let manifest = save_checkpoint(dir.path(), &params, PruneStrategy::Partial).unwrap();
        assert_eq!(manifest.achieved_sparsity, 0.5);
        let mask = fs::read(dir.path().join("w.mask")).unwrap();
        assert_eq!(mask, vec![0, 1, 1, 0]);
        assert_eq!(fs::metadata(dir.path().join("emb.f64")).unwrap().len(), 32);
        let (m2, loaded) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(loaded, params);

        fs::write(dir.path().join("w.mask"), [1u8, 1, 1, 1]).unwrap();
        fs::write(dir.path().join("w.mask"), [2u8, 1, 1, 1]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
