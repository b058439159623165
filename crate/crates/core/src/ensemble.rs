use crate::error::{param, Error, Result};

/// Positions of `N` particles in `R^d` for one replica, stored row-major (`N × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    n: usize,
    d: usize,
    /// Number of `κ`-intervals elapsed on this ensemble's own clock.
    pub intervals: usize,
    /// Time on the ensemble's own clock (physical for IPS/RBM-1, pseudo for RBM-r).
    pub time: f64,
    pub replica: u64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, d: usize, replica: u64) -> Result<Self> {
        if d == 0 {
            return Err(param("d", "must be at least 1"));
        }
        if !positions.len().is_multiple_of(d) {
            return Err(param("positions", "length is not a multiple of d"));
        }
        let n = positions.len() / d;
        if n < 2 {
            return Err(param("N", "an ensemble needs at least two particles"));
        }
        if let Some(k) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite initial coordinate at particle {}",
                k / d
            )));
        }
        Ok(Self {
            positions,
            n,
            d,
            intervals: 0,
            time: 0.0,
            replica,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn particle_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn squared_norm(&self, i: usize) -> f64 {
        self.particle(i).iter().map(|v| v * v).sum()
    }

    /// Same positions with particle labels permuted: particle `i` of the result is
    /// particle `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut positions = Vec::with_capacity(self.positions.len());
        for &src in perm {
            positions.extend_from_slice(self.particle(src));
        }
        Self {
            positions,
            ..self.clone()
        }
    }
}
