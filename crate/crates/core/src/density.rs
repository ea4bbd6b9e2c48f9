//! The pointwise density interface shared by every model.

use crate::geom::HalfOpenBox;

/// A realized sequence of densities `mu_0, mu_1, ..., mu_depth`.
///
/// Implementations are immutable after sampling, so a single realization can
/// be queried from many threads at once.
pub trait Density: Sync {
    fn dim(&self) -> usize;

    /// Deepest level `n` for which `evaluate(_, n)` is defined.
    fn max_level(&self) -> usize;

    /// `mu_n(x)`, nonnegative, zero outside the seed domain.
    fn evaluate(&self, x: &[f64], n: usize) -> f64;

    /// `C` in `mu_{n+1}(x) <= C mu_n(x)`.
    fn growth_constant(&self) -> f64;

    /// Codimension exponent: `P(x in A_n) = 2^{-alpha n}` for interior points.
    fn alpha(&self) -> f64;

    /// A box containing the support of `mu_0`.
    fn support(&self) -> HalfOpenBox;

    fn at_level(&self, level: usize) -> LevelView<'_, Self>
    where
        Self: Sized,
    {
        LevelView { density: self, level }
    }
}

/// `mu_n` for one fixed `n`.
pub struct LevelView<'a, D: ?Sized> {
    density: &'a D,
    level: usize,
}

impl<D: Density + ?Sized> LevelView<'_, D> {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.density.evaluate(x, self.level)
    }
}

impl<D: Density + ?Sized> Density for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn max_level(&self) -> usize {
        (**self).max_level()
    }
    fn evaluate(&self, x: &[f64], n: usize) -> f64 {
        (**self).evaluate(x, n)
    }
    fn growth_constant(&self) -> f64 {
        (**self).growth_constant()
    }
    fn alpha(&self) -> f64 {
        (**self).alpha()
    }
    fn support(&self) -> HalfOpenBox {
        (**self).support()
    }
}
