//! Loss-landscape toolkit for fully connected regression networks with
//! sigmoid-like activations.
//!
//! The crate builds suboptimal local minima by splitting hidden neurons
//! ([`embed`]), certifies them and walks them into saddles ([`certify`]),
//! constructs non-increasing paths to a global minimum in extremely wide
//! networks ([`pathfinder`]) and witnesses minima at infinity ([`infinity`]).

pub mod activation;
pub mod certify;
pub mod diff;
pub mod embed;
pub mod error;
pub mod infinity;
pub mod linalg;
pub mod network;
pub mod pathfinder;
pub mod trainer;

pub use activation::{act_eval, act_inverse, ActivationKind};
pub use diff::{gradient, gradient_fd, hessian_eigs, hessian_fd, neuron_sensitivities, ParamVector};
pub use error::{Error, Result};
pub use network::{forward, generate_teacher_dataset, loss, Dataset, ForwardCache, InputSampler, Network};
pub use trainer::{init_random, is_critical, train_to_critical, TrainOptions, TrainReport};
pub use embed::{
    classify_embedding, compute_b, compute_bd, compute_d, escape_direction, gamma_embed, transformed_hessian,
    BDMatrices, EmbeddingPlan, EmbeddingVerdict, Tolerances, VerdictKind,
};
pub use certify::{
    classify_critical_point, probe_random_directions, region_demo, walk_lambda, CriticalKind, CriticalPointReport,
    NonAttractingEvidence, ProbeReport, RegionConfig,
};
pub use pathfinder::{monotone_descent_to_global, perturb_full_rank, DescentPath, PathOptions, WideLayerInfo};
pub use infinity::{build_infinity_family, constant_fit, verify_infinity_minimum, InfinityFamily, InfinityReport};
