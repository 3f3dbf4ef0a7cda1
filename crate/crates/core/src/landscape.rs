//! Closed-form toy fitness landscapes for comparing search strategies
//! without training any model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::global_search::{Fitness, HistoryRow};
use crate::search_space::{random_structure, DilationStructure, GlobalSearchSpace};

/// `100 * (1 - hamming(C, target) / L)` against a hidden target structure.
#[derive(Debug, Clone)]
pub struct HammingLandscape {
    target: DilationStructure,
}

impl HammingLandscape {
    pub fn new(target: DilationStructure) -> Self {
        Self { target }
    }

    pub fn random<R: Rng + ?Sized>(
        space: &GlobalSearchSpace,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self::new(random_structure(space, shape, rng)?))
    }

    pub fn target(&self) -> &DilationStructure {
        &self.target
    }

    pub fn score(&self, s: &DilationStructure) -> Result<f64> {
        if !s.same_shape(&self.target) {
            return Err(Error::shape(format!("{s} vs target shape {:?}", self.target.shape())));
        }
        let target = self.target.flat();
        let mismatches = s.flat().iter().zip(&target).filter(|(a, b)| a != b).count();
        Ok(100.0 * (1.0 - mismatches as f64 / target.len() as f64))
    }
}

impl Fitness for HammingLandscape {
    fn evaluate(&self, structure: &DilationStructure, _epochs: usize, _seed: u64) -> Result<f64> {
        self.score(structure)
    }
}

/// Offspring evaluations spent before the best fitness first reached
/// `threshold`, or `None` if it never did.
pub fn evaluations_to_reach(history: &[HistoryRow], threshold: f64) -> Option<usize> {
    history
        .iter()
        .find(|row| row.best_fitness >= threshold)
        .map(|row| row.evaluations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::build_global_space;

    #[test]
    fn hamming_scores() {
        let t = DilationStructure::new(vec![vec![1, 2, 4, 8]]).unwrap();
        let land = HammingLandscape::new(t.clone());
        assert_eq!(land.score(&t).unwrap(), 100.0);
        let one_off = DilationStructure::new(vec![vec![1, 2, 4, 16]]).unwrap();
        assert_eq!(land.score(&one_off).unwrap(), 75.0);
        let other = DilationStructure::new(vec![vec![1, 2], vec![4, 8]]).unwrap();
        assert!(land.score(&other).is_err());
        let _ = build_global_space(2, 3).unwrap();
    }
}
