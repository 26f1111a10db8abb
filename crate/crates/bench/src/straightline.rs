//! Random straight-line functions over small records, with their exact
//! dependency edges known by construction.

use std::collections::{BTreeMap, BTreeSet};

use mudep_core::depgen::{Edge, FieldPath, Slot};
use mudep_core::executor::{ExecutorHandle, FunctionSig, LocalTransport, Manifest};
use mudep_core::typesys::{FieldDef, PrimKind, RecordDef, Rng, TypeDesc, TypeRegistry, Value};

pub fn registry() -> TypeRegistry {
    TypeRegistry::new()
        .with_record(RecordDef::new(
            "Pair",
            vec![FieldDef::new("x", TypeDesc::Str), FieldDef::new("y", TypeDesc::Str)],
        ))
        .with_record(RecordDef::new(
            "Cell",
            vec![
                FieldDef::new("n", TypeDesc::Prim(PrimKind::Int32)),
                FieldDef::new("t", TypeDesc::Str),
            ],
        ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Leaf {
    pub slot: Slot,
    pub field: Option<String>,
}

#[derive(Debug, Clone)]
pub enum Op {
    Copy {
        dst: Leaf,
        src: Leaf,
    },
    /// Wrapping addition for ints, concatenation for strings.
    Combine {
        dst: Leaf,
        a: Leaf,
        b: Leaf,
    },
}

#[derive(Debug, Clone)]
pub struct Program {
    pub sig: FunctionSig,
    pub ops: Vec<Op>,
}

fn slot_type(sig: &FunctionSig, slot: Slot) -> &TypeDesc {
    match slot {
        Slot::Arg(i) => &sig.params[i],
        Slot::Return => sig.returns.as_ref().expect("return leaf of a void function"),
    }
}

fn leaves_of(slot: Slot, t: &TypeDesc) -> Vec<(Leaf, Kind)> {
    let leaf = |field: Option<&str>| Leaf {
        slot,
        field: field.map(str::to_string),
    };
    match t {
        TypeDesc::Record(n) if n == "Pair" => vec![(leaf(Some("x")), Kind::Text), (leaf(Some("y")), Kind::Text)],
        TypeDesc::Record(_) => vec![(leaf(Some("n")), Kind::Int), (leaf(Some("t")), Kind::Text)],
        TypeDesc::Prim(_) => vec![(leaf(None), Kind::Int)],
        _ => vec![(leaf(None), Kind::Text)],
    }
}

fn pick<T: Clone>(rng: &mut Rng, items: &[T]) -> T {
    items[rng.below(items.len())].clone()
}

impl Program {
    pub fn generate(seed: u64) -> Program {
        let mut rng = Rng::derive(seed, &[0x5eed]);
        let choices = [
            TypeDesc::record("Pair"),
            TypeDesc::record("Cell"),
            TypeDesc::Prim(PrimKind::Int32),
            TypeDesc::Str,
        ];
        let n = 1 + rng.below(4);
        let params: Vec<TypeDesc> = (0..n).map(|_| pick(&mut rng, &choices)).collect();
        let returns = match rng.below(5) {
            4 => None,
            i => Some(choices[i].clone()),
        };
        let sig = FunctionSig::new_static(format!("gen.F{seed}"), params, returns);

        let mut readable = Vec::new();
        let mut writable = Vec::new();
        let mut add = |slot: Slot, t: &TypeDesc| {
            for (leaf, kind) in leaves_of(slot, t) {
                if leaf.field.is_some() || slot == Slot::Return {
                    writable.push((leaf.clone(), kind));
                }
                readable.push((leaf, kind));
            }
        };
        for (i, t) in sig.params.iter().enumerate() {
            add(Slot::Arg(i), t);
        }
        if let Some(t) = &sig.returns {
            add(Slot::Return, t);
        }
        let mut ops = Vec::new();
        if !writable.is_empty() {
            for _ in 0..1 + rng.below(6) {
                let (dst, kind) = pick(&mut rng, &writable);
                let same: Vec<Leaf> = readable
                    .iter()
                    .filter(|(_, k)| *k == kind)
                    .map(|(l, _)| l.clone())
                    .collect();
                ops.push(if rng.below(2) == 0 {
                    Op::Copy {
                        dst,
                        src: pick(&mut rng, &same),
                    }
                } else {
                    Op::Combine {
                        dst,
                        a: pick(&mut rng, &same),
                        b: pick(&mut rng, &same),
                    }
                });
            }
        }
        Program { sig, ops }
    }

    fn initial_return(&self) -> Option<Value> {
        self.sig.returns.as_ref().map(|t| match t {
            TypeDesc::Prim(_) => Value::Int32(0),
            TypeDesc::Str => Value::str(""),
            TypeDesc::Record(n) if n == "Pair" => {
                Value::record("Pair", vec![("x", Value::str("")), ("y", Value::str(""))])
            }
            _ => Value::record("Cell", vec![("n", Value::Int32(0)), ("t", Value::str(""))]),
        })
    }

    /// Runs the program on `args`, returning the return value.
    pub fn run(&self, args: &mut [Value]) -> Result<Option<Value>, String> {
        let mut ret = self.initial_return();
        fn get(args: &[Value], ret: &Option<Value>, l: &Leaf) -> Result<Value, String> {
            let root = match l.slot {
                Slot::Arg(i) => args.get(i),
                Slot::Return => ret.as_ref(),
            }
            .ok_or("missing slot")?;
            match &l.field {
                Some(f) => root
                    .field(f)
                    .cloned()
                    .ok_or_else(|| format!("null dereference reading `{f}`")),
                None => Ok(root.clone()),
            }
        }
        for op in &self.ops {
            let (dst, v) = match op {
                Op::Copy { dst, src } => (dst, get(args, &ret, src)?),
                Op::Combine { dst, a, b } => {
                    let v = match (get(args, &ret, a)?, get(args, &ret, b)?) {
                        (Value::Int32(x), Value::Int32(y)) => Value::Int32(x.wrapping_add(y)),
                        (Value::Str(x), Value::Str(y)) => Value::Str(x + &y),
                        _ => return Err("ill-typed operands".into()),
                    };
                    (dst, v)
                }
            };
            let root = match dst.slot {
                Slot::Arg(i) => &mut args[i],
                Slot::Return => ret.as_mut().ok_or("void return written")?,
            };
            match &dst.field {
                Some(f) => {
                    *root
                        .field_mut(f)
                        .ok_or_else(|| format!("null dereference writing `{f}`"))? = v
                }
                None => *root = v,
            }
        }
        Ok(ret)
    }

    fn path(&self, l: &Leaf) -> FieldPath {
        let t = slot_type(&self.sig, l.slot);
        FieldPath {
            slot: l.slot,
            type_name: t.display_name(),
            chain: l.field.iter().cloned().collect(),
        }
    }

    /// Exact dependency edges between distinct slots.
    pub fn truth(&self) -> BTreeSet<Edge> {
        let mut deps: BTreeMap<Leaf, BTreeSet<Leaf>> = BTreeMap::new();
        let current = |deps: &BTreeMap<Leaf, BTreeSet<Leaf>>, l: &Leaf| match deps.get(l) {
            Some(d) => d.clone(),
            None if l.slot == Slot::Return => BTreeSet::new(),
            None => BTreeSet::from([l.clone()]),
        };
        for op in &self.ops {
            let (dst, d) = match op {
                Op::Copy { dst, src } => (dst, current(&deps, src)),
                Op::Combine { dst, a, b } => (dst, &current(&deps, a) | &current(&deps, b)),
            };
            deps.insert(dst.clone(), d);
        }
        let mut out = BTreeSet::new();
        for (leaf, ins) in &deps {
            for i in ins.iter().filter(|i| i.slot != leaf.slot) {
                out.insert(Edge::new(self.path(leaf), self.path(i)));
            }
        }
        out
    }
}

/// Executor running `programs` in the calling thread.
pub fn executor(programs: &[Program]) -> ExecutorHandle {
    let manifest = Manifest {
        types: registry(),
        functions: programs.iter().map(|p| p.sig.clone()).collect(),
    };
    let by_name: BTreeMap<String, Program> = programs.iter().map(|p| (p.sig.name.clone(), p.clone())).collect();
    let names: Vec<String> = by_name.keys().cloned().collect();
    let t = LocalTransport::new(names, move |name, args| by_name[name].run(args));
    ExecutorHandle::new(Box::new(t), &manifest).expect("generated manifest is valid")
}
