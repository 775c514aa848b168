//! Spectral discretization of phase space: Hermite functions in momentum
//! tensored with real Fourier modes on the torus. Operators assembled here
//! are exact on the truncated space up to Galerkin projection.

pub mod field;
pub mod fourier;
pub mod hermite;
pub mod ops;
pub mod quad;

pub use field::SpectralField;
pub use fourier::{canon, FourierBasis, FourierMode};
pub use hermite::HermiteBasis;
pub use quad::{gauss_hermite, Profiles, Quadrature, TriplePlan, WeightTable};

use crate::error::{Error, Result};

/// Truncated tensor basis φ_n(p)·e_k(r), Hermite-major flattening:
/// global index = hermite_position · F + fourier_position.
#[derive(Debug, Clone)]
pub struct Basis {
    pub d: usize,
    /// Hermite degrees per momentum axis run 0..n_hermite−1.
    pub n_hermite: usize,
    /// Fourier wave numbers satisfy ‖k‖_∞ ≤ k_fourier.
    pub k_fourier: usize,
    pub beta: f64,
    pub hermite: HermiteBasis,
    pub fourier: FourierBasis,
}

impl Basis {
    pub fn dim(&self) -> usize {
        self.hermite.len() * self.fourier.len()
    }

    pub fn index(&self, hermite_pos: usize, fourier_pos: usize) -> usize {
        hermite_pos * self.fourier.len() + fourier_pos
    }

    /// Number of total-degree blocks (0..=d(N−1)).
    pub fn degree_blocks(&self) -> usize {
        self.hermite.max_degree() + 1
    }

    /// Global index range of the Hermite-degree-g block.
    pub fn degree_range(&self, g: usize) -> std::ops::Range<usize> {
        let f = self.fourier.len();
        self.hermite.degree_offsets[g] * f..self.hermite.degree_offsets[g + 1] * f
    }
}

/// Construct the truncated basis, validating the box sizes.
pub fn build_basis(d: usize, n_hermite: usize, k_fourier: usize, beta: f64) -> Result<Basis> {
    if d == 0 || d > 2 {
        return Err(Error::InvalidParameter(format!(
            "spatial dimension must be 1 or 2, got {d}"
        )));
    }
    if n_hermite < 4 {
        return Err(Error::InvalidParameter(format!(
            "need at least 4 Hermite degrees per axis, got {n_hermite}"
        )));
    }
    if k_fourier < 2 {
        return Err(Error::InvalidParameter(format!(
            "need Fourier cutoff at least 2, got {k_fourier}"
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {beta}"
        )));
    }
    Ok(Basis {
        d,
        n_hermite,
        k_fourier,
        beta,
        hermite: HermiteBasis::new(d, n_hermite, beta),
        fourier: FourierBasis::new(d, k_fourier),
    })
}

/// Squared-coefficient mass per Hermite total degree, plus the fraction
/// of mass above a cut degree; used to confirm the momentum truncation
/// actually resolves a computed field.
#[derive(Debug, Clone)]
pub struct DecayReport {
    pub energy_by_degree: Vec<f64>,
    pub cut_degree: usize,
    pub tail_fraction: f64,
}

pub fn hermite_decay_report(basis: &Basis, field: &SpectralField, cut_degree: usize) -> DecayReport {
    let f = basis.fourier.len();
    let mut energy_by_degree = vec![0.0; basis.degree_blocks()];
    for (hpos, _) in basis.hermite.indices.iter().enumerate() {
        let g = basis.hermite.total_degree(hpos);
        for fi in 0..f {
            energy_by_degree[g] += field.coeffs[hpos * f + fi].powi(2);
        }
    }
    let total: f64 = energy_by_degree.iter().sum();
    let tail: f64 = energy_by_degree
        .iter()
        .enumerate()
        .filter(|&(g, _)| g > cut_degree)
        .map(|(_, e)| e)
        .sum();
    DecayReport {
        energy_by_degree,
        cut_degree,
        tail_fraction: if total > 0.0 { tail / total } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_matches_box_counts() {
        assert_eq!(build_basis(1, 4, 2, 1.0).unwrap().dim(), 20);
        assert_eq!(build_basis(2, 6, 3, 1.0).unwrap().dim(), 1764);
        assert_eq!(build_basis(1, 40, 16, 1.0).unwrap().dim(), 1320);
    }

    #[test]
    fn rejects_undersized_boxes() {
        assert!(build_basis(3, 8, 4, 1.0).is_err());
        assert!(build_basis(1, 3, 4, 1.0).is_err());
        assert!(build_basis(1, 8, 1, 1.0).is_err());
        assert!(build_basis(1, 8, 4, -1.0).is_err());
    }

    #[test]
    fn degree_ranges_partition_the_index_space() {
        let b = build_basis(2, 5, 2, 1.0).unwrap();
        let mut covered = 0;
        for g in 0..b.degree_blocks() {
            let r = b.degree_range(g);
            assert_eq!(r.start, covered);
            covered = r.end;
        }
        assert_eq!(covered, b.dim());
    }
}
