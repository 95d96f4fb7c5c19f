use nalgebra::{DMatrix, DVector};

use super::scheme::{System, SystemInput};
use crate::error::Result;
use crate::geometry::PatternSource;
use crate::net::RunOptions;
use crate::tensor::Features;

/// Activation fingerprints of an aggregated system. Bootstrap branch inputs
/// are formed as `Mₙ z` from explicit mask operators.
#[derive(Clone, Debug)]
pub struct SystemPatterns<'a> {
    pub system: &'a System,
    pub params: &'a [f64],
    pub extents: [usize; 2],
    pub masks: &'a [DMatrix<f64>],
    /// Restrict the fingerprint to one base-network application.
    pub branch: Option<usize>,
}

impl SystemPatterns<'_> {
    fn input(&self, z: &Features) -> SystemInput {
        let branches = self
            .masks
            .iter()
            .map(|m| {
                let v = m * DVector::from_column_slice(&z.data);
                Features {
                    data: v.data.into(),
                    ..z.clone()
                }
            })
            .collect();
        SystemInput { z: z.clone(), branches }
    }

    fn bits(&self, z: &Features) -> Result<Vec<bool>> {
        let pass = self.system.forward(self.params, &self.input(z), RunOptions::default())?;
        Ok(match self.branch {
            Some(b) => pass.base_passes[b]
                .trace
                .records
                .iter()
                .flat_map(|r| r.active.iter().copied())
                .collect(),
            None => pass.pattern(),
        })
    }
}

impl PatternSource for SystemPatterns<'_> {
    fn input_shape(&self) -> [usize; 3] {
        [self.system.channels(), self.extents[0], self.extents[1]]
    }

    fn n_neurons(&self) -> Result<usize> {
        let shape = self.input_shape();
        let z = Features::zeros(shape[0], shape[1], shape[2]);
        Ok(self.bits(&z)?.len())
    }

    fn fingerprint(&self, z: &Features) -> Result<Vec<u64>> {
        let bits = self.bits(z)?;
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(words)
    }
}
