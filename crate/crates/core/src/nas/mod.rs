//! Differentiable architecture search: a weight-sharing search network with
//! softmax-mixed candidate ops, two-level optimisation of weights and
//! architecture logits, and discretization into concrete genotypes that
//! materialize as ordinary trainable networks.

pub mod bilevel;
pub mod discretize;
pub mod genotype;
pub mod materialize;
pub mod mixed;
pub mod supernet;

pub use bilevel::{
    accumulate_arch_grads, backward_loss, sgd_arch_step, sgd_weight_step, ArchGrad, BilevelModel,
};
pub use discretize::discretize;
pub use genotype::{Genotype, GenotypeCell, GenotypeEdge, GenotypeMeta};
pub use materialize::{copy_matching_params, DiscreteNet, NetConfig};
pub use mixed::{mixed_op_forward, MixedOp};
pub use supernet::{head_scores, Alpha, Batch, Supernet, SupernetConfig};
