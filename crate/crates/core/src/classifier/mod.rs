//! The patch classifier contract and reference implementations.

mod oracle;
mod toy;

use std::path::Path;

use crate::error::{Error, Result};
use crate::patch_pipeline::{Magnification, PatchGroup};

pub use oracle::{OracleClassifier, ORACLE_GAMMA};
pub use toy::{
    examples, histogram_features, log_loss_and_grad, train_toy, Example, RmsProp, ToyModelFile, ToyTrainableClassifier,
    TrainConfig, TrainReport, HIST_BINS,
};

/// Maps a patch group in model range `[-1, 1]` to a tumor probability.
///
/// Implementations are immutable once built and may be called from many
/// threads at once. Output is always within `[0, 1]`.
pub trait PatchClassifier: Send + Sync {
    /// Magnifications the group passed to [`PatchClassifier::predict`] must contain.
    fn magnifications(&self) -> &[Magnification];

    fn predict(&self, group: &PatchGroup) -> Result<f32>;
}

impl<C: PatchClassifier + ?Sized> PatchClassifier for Box<C> {
    fn magnifications(&self) -> &[Magnification] {
        (**self).magnifications()
    }

    fn predict(&self, group: &PatchGroup) -> Result<f32> {
        (**self).predict(group)
    }
}

impl<C: PatchClassifier + ?Sized> PatchClassifier for std::sync::Arc<C> {
    fn magnifications(&self) -> &[Magnification] {
        (**self).magnifications()
    }

    fn predict(&self, group: &PatchGroup) -> Result<f32> {
        (**self).predict(group)
    }
}

/// Same probability everywhere.
#[derive(Clone, Debug)]
pub struct ConstantClassifier {
    value: f32,
    mags: Vec<Magnification>,
}

impl ConstantClassifier {
    pub fn new(value: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Argument(format!("constant probability {value} is outside [0, 1]")));
        }
        Ok(Self {
            value,
            mags: vec![Magnification::X40],
        })
    }

    pub fn with_magnifications(mut self, mags: Vec<Magnification>) -> Self {
        self.mags = mags;
        self
    }
}

impl PatchClassifier for ConstantClassifier {
    fn magnifications(&self) -> &[Magnification] {
        &self.mags
    }

    fn predict(&self, _group: &PatchGroup) -> Result<f32> {
        Ok(self.value)
    }
}

/// Arithmetic mean of member predictions, summed in member order.
pub struct EnsembleClassifier {
    members: Vec<Box<dyn PatchClassifier>>,
}

impl EnsembleClassifier {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn ensemble_average(members: Vec<Box<dyn PatchClassifier>>) -> Result<EnsembleClassifier> {
    let Some(first) = members.first() else {
        return Err(Error::Argument("an ensemble needs at least one member".into()));
    };
    let mags = first.magnifications().to_vec();
    if let Some(i) = members.iter().position(|m| m.magnifications() != mags.as_slice()) {
        return Err(Error::Argument(format!(
            "ensemble member {i} needs magnifications {:?}, member 0 needs {mags:?}",
            members[i].magnifications()
        )));
    }
    Ok(EnsembleClassifier { members })
}

impl PatchClassifier for EnsembleClassifier {
    fn magnifications(&self) -> &[Magnification] {
        self.members[0].magnifications()
    }

    fn predict(&self, group: &PatchGroup) -> Result<f32> {
        let mut sum = 0.0f64;
        for m in &self.members {
            sum += m.predict(group)? as f64;
        }
        Ok((sum / self.members.len() as f64) as f32)
    }
}

/// Loads a trained model file.
pub fn load_model(path: &Path) -> Result<ToyTrainableClassifier> {
    ToyTrainableClassifier::load(path)
}
