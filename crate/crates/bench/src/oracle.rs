//! Replay oracle for claimed dependency edges: re-mutate only the claimed
//! input leaf and watch the claimed output leaf.

use std::time::Duration;

use mudep_core::depgen::{Edge, Slot};
use mudep_core::executor::{ExecError, ExecResponse, ExecutorHandle, FunctionSig};
use mudep_core::typesys::{construct_random, diff_paths, GenConfig, Rng, TypeDesc, TypeError, TypeRegistry, Value};
use thiserror::Error;

/// Replays used per edge.
pub const REPLAYS: u64 = 64;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("bad edge: {0}")]
    BadEdge(String),
}

fn redraw(reg: &TypeRegistry, t: &TypeDesc, old: &Value, rng: &mut Rng, cfg: &GenConfig) -> Result<Value, TypeError> {
    for _ in 0..256 {
        let v = construct_random(reg, t, rng, cfg)?;
        if &v != old {
            return Ok(v);
        }
    }
    Ok(old.clone())
}

/// Replaces the leaf at `chain` (choosing a random element at every array
/// level) with a different random value. Returns false when there is no
/// such leaf.
fn replace_at(
    reg: &TypeRegistry,
    t: &TypeDesc,
    v: &mut Value,
    chain: &[String],
    rng: &mut Rng,
    cfg: &GenConfig,
) -> Result<bool, TypeError> {
    match (t, v) {
        (TypeDesc::Array(elem), Value::Arr { elems, .. }) => {
            if elems.is_empty() {
                return Ok(false);
            }
            let i = rng.below(elems.len());
            replace_at(reg, elem, &mut elems[i], chain, rng, cfg)
        }
        (TypeDesc::Record(name), v @ Value::Rec { .. }) if !chain.is_empty() => {
            let Some(ft) = reg.record(name)?.field(&chain[0]).map(|f| f.ty.clone()) else {
                return Ok(false);
            };
            match v.field_mut(&chain[0]) {
                Some(inner) => replace_at(reg, &ft, inner, &chain[1..], rng, cfg),
                None => Ok(false),
            }
        }
        (t, v) if chain.is_empty() => {
            *v = redraw(reg, t, v, rng, cfg)?;
            Ok(true)
        }
        _ => Ok(false),
    }
}

/// Whether mutating only `edge.in` changes `edge.out` in at least one of
/// [`REPLAYS`] randomized replays.
pub fn witness(
    h: &mut ExecutorHandle,
    sig: &FunctionSig,
    edge: &Edge,
    depth: usize,
    seed: u64,
) -> Result<bool, OracleError> {
    let reg = h.types().clone();
    let cfg = GenConfig::default();
    let slots = sig.slot_types();
    let Slot::Arg(i) = edge.inp.slot else {
        return Err(OracleError::BadEdge(format!("input {} is not an argument", edge.inp)));
    };
    let in_ty = slots
        .get(i)
        .ok_or_else(|| OracleError::BadEdge(format!("no slot {i}")))?;
    let (out_ty, k) = match edge.out.slot {
        Slot::Arg(k) => (slots.get(k).cloned(), Some(k)),
        Slot::Return => (sig.returns.clone(), None),
    };
    let out_ty = out_ty.ok_or_else(|| OracleError::BadEdge(format!("no output slot for {}", edge.out)))?;
    let budget = Duration::from_secs(2);
    for r in 0..REPLAYS {
        let mut rng = Rng::derive(seed, &[r]);
        let args = slots
            .iter()
            .map(|t| construct_random(&reg, t, &mut rng, &cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let mut changed = args.clone();
        if !replace_at(&reg, in_ty, &mut changed[i], &edge.inp.chain, &mut rng, &cfg)? || changed == args {
            continue;
        }
        let (a, b) = (h.invoke(sig, &args, budget)?, h.invoke(sig, &changed, budget)?);
        if !(a.is_ok() && b.is_ok()) {
            continue;
        }
        let pick = |resp: &ExecResponse| match k {
            Some(k) => resp.args_post[k].clone(),
            None => resp.ret.clone().unwrap_or(Value::Null),
        };
        if diff_paths(&reg, &out_ty, &pick(&a), &pick(&b), depth)?.contains(&edge.out.chain) {
            return Ok(true);
        }
    }
    Ok(false)
}
