//! Ground-truth models written next to simulated data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use varorder_core::reparam::{a_to_pacf, check_stationary, pacf_to_a, var_to_pacf};
use varorder_core::sim::Start;
use varorder_core::{Matrix, VarModel};

use crate::config::{read_json, to_json};
use crate::csvio::{matrix_from_rows, matrix_rows};
use crate::error::{CliError, Result};

type Rows = Vec<Vec<f64>>;

/// Everything needed to score a fit against the generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    pub start: Start,
    pub spectral_radius: f64,
    pub sigma: Rows,
    pub phi: Vec<Rows>,
    /// Partial autocorrelations `P_1..P_p`.
    pub pacf: Vec<Rows>,
    /// Unconstrained `A_1..A_p`.
    pub a: Vec<Rows>,
    /// `Γ_0..Γ_{p-1}`.
    pub gamma: Vec<Rows>,
}

impl GroundTruth {
    /// `a` may be passed when known exactly; otherwise it is recovered
    /// from the model.
    pub fn new(model: &VarModel<f64>, a: Option<&[Matrix<f64>]>, n: usize, seed: u64, start: Start) -> Result<Self> {
        let (pacf, a) = match a {
            Some(a) => (a_to_pacf(a)?, a.to_vec()),
            None => {
                let (_, pacf) = var_to_pacf(model)?;
                let a = pacf_to_a(&pacf)?;
                (pacf, a)
            }
        };
        let rows = |v: &[Matrix<f64>]| v.iter().map(matrix_rows).collect::<Vec<_>>();
        Ok(Self {
            m: model.dim(),
            p: model.order(),
            n,
            seed,
            start,
            spectral_radius: check_stationary(&model.phi).1,
            sigma: matrix_rows(&model.sigma),
            phi: rows(&model.phi),
            pacf: rows(&pacf),
            a: rows(&a),
            gamma: rows(&model.gamma),
        })
    }

    pub fn model(&self) -> Result<VarModel<f64>> {
        let phi = self
            .phi
            .iter()
            .map(|f| matrix_from_rows(f, "phi"))
            .collect::<Result<Vec<_>>>()?;
        Ok(VarModel::from_coefficients(matrix_from_rows(&self.sigma, "sigma")?, phi)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, to_json(self)).map_err(CliError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use varorder_core::sim::random_model;

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let (a, model) = random_model(3, 2, 9).unwrap();
        let truth = GroundTruth::new(&model, Some(&a), 500, 9, Start::Exact).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        truth.write(&path).unwrap();
        let back = GroundTruth::read(&path).unwrap();
        let bits = |t: &GroundTruth| {
            let mut v: Vec<u64> = t.sigma.iter().flatten().map(|x| x.to_bits()).collect();
            for group in [&t.phi, &t.pacf, &t.a, &t.gamma] {
                v.extend(group.iter().flatten().flatten().map(|x| x.to_bits()));
            }
            v.push(t.spectral_radius.to_bits());
            v
        };
        assert_eq!(bits(&truth), bits(&back));
        assert_eq!(truth, back);
    }

    #[test]
    fn recovered_a_matches_the_generating_a() {
        let (a, model) = random_model(2, 3, 4).unwrap();
        let recovered = GroundTruth::new(&model, None, 10, 0, Start::Exact).unwrap();
        let known = GroundTruth::new(&model, Some(&a), 10, 0, Start::Exact).unwrap();
        for (x, y) in recovered.a.iter().flatten().flatten().zip(known.a.iter().flatten().flatten()) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
