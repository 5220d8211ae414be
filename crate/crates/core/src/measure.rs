//! Discrete probability measures on the 1D grid or the k-fold product
//! grid, and sparse coupling tables.

use crate::error::{Error, Result};
use crate::grid::MultiIndex;

/// Nonnegative mass vector on `{j/n_x}` (k = 1) or on the product grid.
///
/// Masses, not densities: constructors normalize to total mass 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub k: usize,
    pub n_x: usize,
    pub mass: Vec<f64>,
}

impl DiscreteMeasure {
    /// Wrap a raw mass vector, validating shape and nonnegativity.
    pub fn new(k: usize, n_x: usize, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != n_x.pow(k as u32) {
            return Err(Error::Dimension(format!(
                "mass vector has {} entries, expected n_x^k = {}",
                mass.len(),
                n_x.pow(k as u32)
            )));
        }
        if mass.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Validation(
                "mass entries must be finite and nonnegative".into(),
            ));
        }
        Ok(DiscreteMeasure { k, n_x, mass })
    }

    /// Normalize in place so the total mass is exactly 1.
    pub fn normalized(mut self) -> Result<Self> {
        let total: f64 = self.mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::Validation("total mass must be positive".into()));
        }
        for v in &mut self.mass {
            *v /= total;
        }
        Ok(self)
    }

    pub fn uniform(k: usize, n_x: usize) -> Self {
        let n = n_x.pow(k as u32);
        DiscreteMeasure {
            k,
            n_x,
            mass: vec![1.0 / n as f64; n],
        }
    }

    /// Unit atom at a single grid cell.
    pub fn delta(k: usize, n_x: usize, at: &MultiIndex) -> Result<Self> {
        if at.coords.len() != k || at.coords.iter().any(|&c| c >= n_x) {
            return Err(Error::Validation("delta point is off-grid".into()));
        }
        let mut mass = vec![0.0; n_x.pow(k as u32)];
        mass[at.flat] = 1.0;
        Ok(DiscreteMeasure { k, n_x, mass })
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Sum out every axis except `axis`, preserving total mass exactly.
    pub fn marginalize(&self, axis: usize) -> Result<DiscreteMeasure> {
        if axis >= self.k {
            return Err(Error::Validation(format!(
                "axis {} out of range for k = {}",
                axis, self.k
            )));
        }
        let stride = self.n_x.pow((self.k - 1 - axis) as u32);
        let mut out = vec![0.0; self.n_x];
        for (flat, &w) in self.mass.iter().enumerate() {
            out[(flat / stride) % self.n_x] += w;
        }
        DiscreteMeasure::new(1, self.n_x, out)
    }

    /// Product measure of 1D factors, axis order preserved.
    pub fn product(factors: &[DiscreteMeasure]) -> Result<DiscreteMeasure> {
        let k = factors.len();
        if k == 0 {
            return Err(Error::Validation("empty factor list".into()));
        }
        let n_x = factors[0].n_x;
        if factors.iter().any(|f| f.k != 1 || f.n_x != n_x) {
            return Err(Error::Dimension(
                "product requires 1D factors on a common grid".into(),
            ));
        }
        let n = n_x.pow(k as u32);
        let mut mass = vec![1.0; n];
        for (flat, w) in mass.iter_mut().enumerate() {
            let mut rest = flat;
            for l in (0..k).rev() {
                *w *= factors[l].mass[rest % n_x];
                rest /= n_x;
            }
        }
        DiscreteMeasure::new(k, n_x, mass)
    }

    /// Total-variation distance to another measure on the same grid.
    pub fn tv_distance(&self, other: &DiscreteMeasure) -> f64 {
        0.5 * self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Sparse list of `(multi-index, mass)` atoms representing a k-marginal
/// coupling on the product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTable {
    pub k: usize,
    pub n_x: usize,
    pub atoms: Vec<(MultiIndex, f64)>,
}

impl CouplingTable {
    pub fn new(k: usize, n_x: usize, atoms: Vec<(MultiIndex, f64)>) -> Result<Self> {
        for (mi, w) in &atoms {
            if mi.coords.len() != k || mi.coords.iter().any(|&c| c >= n_x) {
                return Err(Error::Validation("atom is off-grid".into()));
            }
            if *w < 0.0 || !w.is_finite() {
                return Err(Error::Validation("atom mass must be nonnegative".into()));
            }
        }
        Ok(CouplingTable { k, n_x, atoms })
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    /// Densify into a [`DiscreteMeasure`], accumulating coincident atoms.
    pub fn to_measure(&self) -> Result<DiscreteMeasure> {
        let mut mass = vec![0.0; self.n_x.pow(self.k as u32)];
        for (mi, w) in &self.atoms {
            mass[mi.flat] += w;
        }
        DiscreteMeasure::new(self.k, self.n_x, mass)
    }

    /// Sparse atoms of a dense measure, in flat-index order.
    pub fn from_measure(m: &DiscreteMeasure) -> Self {
        let atoms = m
            .mass
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(flat, &w)| (MultiIndex::from_flat(flat, m.k, m.n_x), w))
            .collect();
        CouplingTable {
            k: m.k,
            n_x: m.n_x,
            atoms,
        }
    }

    /// Axis marginal as a 1D measure.
    pub fn marginal(&self, axis: usize) -> Result<DiscreteMeasure> {
        if axis >= self.k {
            return Err(Error::Validation(format!(
                "axis {} out of range for k = {}",
                axis, self.k
            )));
        }
        let mut out = vec![0.0; self.n_x];
        for (mi, w) in &self.atoms {
            out[mi.coords[axis]] += w;
        }
        DiscreteMeasure::new(1, self.n_x, out)
    }
}
