//! Numerical tolerances shared by the library, its tests and the `verify` report.

/// One record holding every threshold the library relies on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Row sums of a constructed generator.
    pub generator_row_sum: f64,
    /// Row-sum slack accepted on generator input before the diagonal is rebuilt
    /// (relative to the largest entry of the row).
    pub generator_input_row_sum: f64,
    /// Row sums of an event kernel.
    pub kernel_row_sum: f64,
    /// Probability vectors produced by kernel or exponential applications.
    pub probability_sum: f64,
    /// Poisson tail mass dropped when truncating a mixture over event counts.
    pub poisson_tail: f64,
    /// Hard cap on the truncation index is `poisson_cap_factor * (mean + 10)`.
    pub poisson_cap_factor: f64,
    /// `|p^T L|_inf` of a stationary distribution, relative to the event rate.
    pub stationary_residual: f64,
    pub power_iteration_cap: usize,
    /// Detailed-balance slack for using the symmetrised spectral path.
    pub reversibility: f64,
    /// Smallest stationary mass accepted on the spectral path.
    pub spectral_min_mass: f64,
    /// Largest dense kernel that gets an eigendecomposition.
    pub spectral_max_size: usize,
    /// Symmetry of pair-probability tables.
    pub symmetry: f64,
    /// Newton solves on the mutual-information curve.
    pub newton_residual: f64,
    pub newton_max_iterations: usize,
    /// Mutual information below which the per-event curve is treated as zero.
    pub mi_floor: f64,
    /// Largest configuration count any brute-force enumeration may visit.
    pub enumeration_cap: u128,
}

pub const TOLERANCES: Tolerances = Tolerances {
    generator_row_sum: 1e-12,
    generator_input_row_sum: 1e-9,
    kernel_row_sum: 1e-12,
    probability_sum: 1e-10,
    poisson_tail: 1e-12,
    poisson_cap_factor: 10.0,
    stationary_residual: 1e-9,
    power_iteration_cap: 200_000,
    reversibility: 1e-12,
    spectral_min_mass: 1e-8,
    spectral_max_size: 1024,
    symmetry: 1e-9,
    newton_residual: 1e-14,
    newton_max_iterations: 50,
    mi_floor: 1e-14,
    enumeration_cap: 1_000_000,
};
