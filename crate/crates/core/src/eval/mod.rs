//! Image quality metrics, robustness grids, adversarial perturbations,
//! the discrete GAN value function, PCA subspaces and the synthetic
//! manifold experiment.

pub mod fgsm;
pub mod grid;
pub mod linear;
pub mod ssim;
pub mod synthetic;
pub mod theory;

pub use fgsm::{fgsm_attack, fgsm_eval, random_sign_perturbation, Attack, FgsmReport};
pub use grid::{eval_grid, restore_images, write_rows, EvalReport, GridCell, Histogram, MetricRow, Restorer};
pub use linear::{linear_analogy_demo, pca_fit, AnalogyReport, LinearPathway, Pca, PcaDim};
pub use ssim::{batch_ssim, ssim};
pub use synthetic::{run_synthetic_experiment, SyntheticConfig, SyntheticResult};
pub use theory::{gan_value, grid_search_discriminator, jsd, optimal_discriminator, DiscreteJointDist};
