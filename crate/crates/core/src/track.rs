use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::gcm::ObservationRay;
use crate::scalar::Real;

/// Left/right base observations of a track (indices into its observation list).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasePair {
    pub left: usize,
    pub right: usize,
}

impl BasePair {
    pub fn new(left: usize, right: usize) -> Result<Self> {
        if left == right {
            return Err(Error::InvalidInput(format!("base pair uses observation {left} twice")));
        }
        Ok(Self { left, right })
    }

    pub fn swapped(&self) -> Self {
        Self { left: self.right, right: self.left }
    }
}

/// Observations of one scene point.
#[derive(Debug, Clone, PartialEq)]
pub struct Track<T: Real> {
    pub observations: Vec<ObservationRay<T>>,
    pub base: Option<BasePair>,
    /// Ground-truth position, used by synthesis and metrics only.
    pub world_hint: Option<Vector3<T>>,
}

impl<T: Real> Track<T> {
    pub fn new(observations: Vec<ObservationRay<T>>) -> Result<Self> {
        if observations.len() < 2 {
            return Err(Error::InvalidInput("a track needs at least two observations".into()));
        }
        Ok(Self { observations, base: None, world_hint: None })
    }

    pub fn with_base(mut self, base: BasePair) -> Result<Self> {
        self.set_base(base)?;
        Ok(self)
    }

    pub fn set_base(&mut self, base: BasePair) -> Result<()> {
        let n = self.observations.len();
        if base.left >= n || base.right >= n || base.left == base.right {
            return Err(Error::InvalidInput(format!("base pair {base:?} invalid for {n} observations")));
        }
        self.base = Some(base);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}
