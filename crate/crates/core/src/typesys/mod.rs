//! Type and value universe for black-box inputs and outputs, together with
//! the clone / compare / mutate predicates used by dependency generation.

mod ops;
mod random;
mod types;
mod value;

pub use ops::{clone_value, cmp, diff_paths, Chain};
pub use random::{can_mutate, construct_random, mutate, GenConfig, Mutation, Rng};
pub use types::{
    resolve_concrete, AbstractDef, FieldDef, PrimKind, RecordDef, TypeDef, TypeDesc, TypeError, TypeRegistry,
};
pub use value::{conforms, Value};
