use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use super::update::{Triple, Tuple, UpdateSet, Value};
use super::BecError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttrType {
    Int,
    Str,
    Bytes,
}

impl AttrType {
    fn admits(self, v: &Value) -> bool {
        matches!(
            (self, v),
            (AttrType::Int, Value::Int(_))
                | (AttrType::Str, Value::Str(_) | Value::MessageHash)
                | (AttrType::Bytes, Value::Bytes(_))
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            _ => return None,
        })
    }

    fn holds(self, a: &Value, b: &Value) -> bool {
        if std::mem::discriminant(a) != std::mem::discriminant(b) {
            return false;
        }
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViewQuery {
    /// One row: the number of tuples in the relation.
    Count { rel: String },
    /// One row: the sum of an integer attribute.
    Sum { rel: String, attr: usize },
    /// One row per distinct attribute value with its tuple count.
    GroupCount { rel: String, attr: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Invariant {
    RowCheck { rel: String, attr: usize, op: CmpOp, value: Value },
    NonNegative { rel: String, attr: usize },
    ForeignKey { src: String, src_attr: usize, target: String, target_attr: usize },
    Unique { rel: String, attr: usize, hash_derived: bool },
    MaterializedView { rel: String, query: ViewQuery },
}

/// Why an update was judged unsafe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Unsafe {
    RowCheck { rel: String },
    Subtraction { rel: String },
    NegativeInsert { rel: String },
    ForeignKeyTargetDelete { rel: String },
    UserChosenUnique { rel: String },
    DuplicateDerivedValue { rel: String },
}

impl fmt::Display for Unsafe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unsafe::RowCheck { rel } => write!(f, "insert into {rel} violates a check constraint"),
            Unsafe::Subtraction { rel } => write!(f, "update subtracts from a non-negative attribute of {rel}"),
            Unsafe::NegativeInsert { rel } => write!(f, "insert into {rel} has a negative non-negative attribute"),
            Unsafe::ForeignKeyTargetDelete { rel } => write!(f, "delete from foreign key target {rel}"),
            Unsafe::UserChosenUnique { rel } => write!(f, "insert into {rel} chooses a unique value"),
            Unsafe::DuplicateDerivedValue { rel } => write!(f, "several hash-derived inserts into {rel}"),
        }
    }
}

/// Relations with typed attributes, plus the invariants over them.
#[derive(Clone, Debug, Default)]
pub struct Schema {
    relations: BTreeMap<String, Vec<(String, AttrType)>>,
    views: BTreeSet<String>,
    invariants: Vec<Invariant>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses one declaration per line; `#` starts a comment.
    ///
    /// ```text
    /// relation accounts owner:str balance:int
    /// invariant check accounts.balance <= 1000000
    /// invariant non-negative accounts.balance
    /// invariant foreign-key transfers.from -> accounts.owner
    /// invariant unique users.id hash-derived
    /// invariant view total = sum accounts.balance
    /// ```
    pub fn parse(text: &str) -> Result<Self, BecError> {
        let mut schema = Schema::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| BecError::Parse { line: i + 1, msg };
            let words: Vec<&str> = line.split_whitespace().collect();
            match words[0] {
                "relation" => {
                    let name = words.get(1).ok_or_else(|| err("missing relation name".into()))?;
                    let mut attrs = Vec::new();
                    for a in &words[2..] {
                        let (n, t) = a.split_once(':').ok_or_else(|| err(format!("attribute `{a}` needs a type")))?;
                        let t = match t {
                            "int" => AttrType::Int,
                            "str" => AttrType::Str,
                            "bytes" => AttrType::Bytes,
                            other => return Err(err(format!("unknown type `{other}`"))),
                        };
                        attrs.push((n.to_owned(), t));
                    }
                    schema.add_relation(name, attrs).map_err(|e| err(e.to_string()))?;
                }
                "invariant" => {
                    let inv = schema.parse_invariant(&words[1..]).map_err(err)?;
                    schema.add_invariant(inv).map_err(|e| err(e.to_string()))?;
                }
                other => return Err(err(format!("unknown declaration `{other}`"))),
            }
        }
        Ok(schema)
    }

    fn parse_invariant(&self, w: &[&str]) -> Result<Invariant, String> {
        let attr = |s: &str| -> Result<(String, usize), String> {
            let (rel, a) = s.split_once('.').ok_or_else(|| format!("expected relation.attribute, got `{s}`"))?;
            let idx = self.attr_index(rel, a).ok_or_else(|| format!("unknown attribute `{s}`"))?;
            Ok((rel.to_owned(), idx))
        };
        match w {
            ["check", ra, op, lit] => {
                let (rel, attr) = attr(ra)?;
                let op = CmpOp::parse(op).ok_or_else(|| format!("unknown operator `{op}`"))?;
                let value = match lit.parse::<i64>() {
                    Ok(v) => Value::Int(v),
                    Err(_) => Value::Str(lit.trim_matches('"').to_owned()),
                };
                Ok(Invariant::RowCheck { rel, attr, op, value })
            }
            ["non-negative", ra] => {
                let (rel, attr) = attr(ra)?;
                Ok(Invariant::NonNegative { rel, attr })
            }
            ["foreign-key", s, "->", t] => {
                let (src, src_attr) = attr(s)?;
                let (target, target_attr) = attr(t)?;
                Ok(Invariant::ForeignKey { src, src_attr, target, target_attr })
            }
            ["unique", ra] => {
                let (rel, attr) = attr(ra)?;
                Ok(Invariant::Unique { rel, attr, hash_derived: false })
            }
            ["unique", ra, "hash-derived"] => {
                let (rel, attr) = attr(ra)?;
                Ok(Invariant::Unique { rel, attr, hash_derived: true })
            }
            ["view", name, "=", "count", src] => Ok(Invariant::MaterializedView {
                rel: (*name).to_owned(),
                query: ViewQuery::Count { rel: (*src).to_owned() },
            }),
            ["view", name, "=", "sum", ra] => {
                let (rel, attr) = attr(ra)?;
                Ok(Invariant::MaterializedView { rel: (*name).to_owned(), query: ViewQuery::Sum { rel, attr } })
            }
            ["view", name, "=", "group-count", ra] => {
                let (rel, attr) = attr(ra)?;
                Ok(Invariant::MaterializedView { rel: (*name).to_owned(), query: ViewQuery::GroupCount { rel, attr } })
            }
            _ => Err(format!("cannot parse invariant `{}`", w.join(" "))),
        }
    }

    pub fn add_relation(&mut self, name: &str, attrs: Vec<(String, AttrType)>) -> Result<(), BecError> {
        if self.relations.contains_key(name) || self.views.contains(name) {
            return Err(BecError::Duplicate(name.to_owned()));
        }
        self.relations.insert(name.to_owned(), attrs);
        Ok(())
    }

    pub fn add_invariant(&mut self, inv: Invariant) -> Result<(), BecError> {
        let known = |rel: &String, attr: usize| match self.relations.get(rel) {
            None => Err(BecError::UnknownRelation(rel.clone())),
            Some(attrs) if attr >= attrs.len() => Err(BecError::Type { rel: rel.clone(), attr }),
            Some(attrs) => Ok(attrs[attr].1),
        };
        match &inv {
            Invariant::RowCheck { rel, attr, .. } | Invariant::Unique { rel, attr, .. } => {
                known(rel, *attr)?;
            }
            Invariant::NonNegative { rel, attr } => {
                if known(rel, *attr)? != AttrType::Int {
                    return Err(BecError::Type { rel: rel.clone(), attr: *attr });
                }
            }
            Invariant::ForeignKey { src, src_attr, target, target_attr } => {
                known(src, *src_attr)?;
                known(target, *target_attr)?;
            }
            Invariant::MaterializedView { rel, query } => {
                if self.relations.contains_key(rel) || self.views.contains(rel) {
                    return Err(BecError::Duplicate(rel.clone()));
                }
                let src = match query {
                    ViewQuery::Count { rel } | ViewQuery::Sum { rel, .. } | ViewQuery::GroupCount { rel, .. } => rel,
                };
                if !self.relations.contains_key(src) {
                    return Err(BecError::UnknownRelation(src.clone()));
                }
                self.views.insert(rel.clone());
            }
        }
        self.invariants.push(inv);
        Ok(())
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(|s| s.as_str())
    }

    pub fn views(&self) -> impl Iterator<Item = &str> {
        self.views.iter().map(|s| s.as_str())
    }

    pub fn invariants(&self) -> &[Invariant] {
        &self.invariants
    }

    pub fn attr_index(&self, rel: &str, attr: &str) -> Option<usize> {
        self.relations.get(rel)?.iter().position(|(n, _)| n == attr)
    }

    pub fn has_relation(&self, rel: &str) -> bool {
        self.relations.contains_key(rel)
    }

    /// Checks that every relation exists and every tuple has the declared
    /// arity and types.
    pub fn validate(&self, u: &UpdateSet) -> Result<(), BecError> {
        let check = |rel: &str, tuple: &Tuple| -> Result<(), BecError> {
            let attrs = self.relations.get(rel).ok_or_else(|| BecError::UnknownRelation(rel.to_owned()))?;
            if attrs.len() != tuple.len() {
                return Err(BecError::Arity { rel: rel.to_owned(), expected: attrs.len(), got: tuple.len() });
            }
            for (i, ((_, t), v)) in attrs.iter().zip(tuple).enumerate() {
                if !t.admits(v) {
                    return Err(BecError::Type { rel: rel.to_owned(), attr: i });
                }
            }
            Ok(())
        };
        for (rel, tuple) in &u.ins {
            check(rel, tuple)?;
        }
        for t in &u.del {
            check(&t.rel, &t.tuple)?;
        }
        Ok(())
    }

    /// Applies the safety rules to `u`. Depends only on `u` and the
    /// invariants, never on replicated state.
    pub fn safety(&self, u: &UpdateSet) -> Result<(), Unsafe> {
        for inv in &self.invariants {
            match inv {
                Invariant::RowCheck { rel, attr, op, value } => {
                    for (r, t) in &u.ins {
                        if r == rel && !op.holds(&t[*attr], value) {
                            return Err(Unsafe::RowCheck { rel: rel.clone() });
                        }
                    }
                }
                Invariant::NonNegative { rel, attr } => {
                    for (r, t) in &u.ins {
                        if r == rel && t[*attr].as_int().is_some_and(|v| v < 0) {
                            return Err(Unsafe::NegativeInsert { rel: rel.clone() });
                        }
                    }
                    for d in u.del.iter().filter(|d| &d.rel == rel) {
                        let old = d.tuple[*attr].as_int().unwrap_or(0);
                        let replaced = u.ins.iter().any(|(r, t)| {
                            r == rel
                                && t.iter().zip(&d.tuple).enumerate().all(|(i, (a, b))| i == *attr || a == b)
                                && t[*attr].as_int().is_some_and(|new| new >= old)
                        });
                        if !replaced {
                            return Err(Unsafe::Subtraction { rel: rel.clone() });
                        }
                    }
                }
                Invariant::ForeignKey { target, .. } => {
                    if u.del.iter().any(|d| &d.rel == target) {
                        return Err(Unsafe::ForeignKeyTargetDelete { rel: target.clone() });
                    }
                }
                Invariant::Unique { rel, attr, hash_derived } => {
                    let inserts = u.ins.iter().filter(|(r, _)| r == rel);
                    if !hash_derived {
                        if inserts.count() > 0 {
                            return Err(Unsafe::UserChosenUnique { rel: rel.clone() });
                        }
                        continue;
                    }
                    let mut n = 0;
                    for (_, t) in inserts {
                        if t[*attr] != Value::MessageHash {
                            return Err(Unsafe::UserChosenUnique { rel: rel.clone() });
                        }
                        n += 1;
                    }
                    if n > 1 {
                        return Err(Unsafe::DuplicateDerivedValue { rel: rel.clone() });
                    }
                }
                Invariant::MaterializedView { .. } => {}
            }
        }
        Ok(())
    }

    /// True iff `u` is well-formed and safe with respect to every invariant.
    pub fn is_safe(&self, u: &UpdateSet) -> Result<bool, BecError> {
        self.validate(u)?;
        Ok(self.safety(u).is_ok())
    }

    /// Evaluates a view query from scratch.
    pub fn evaluate(query: &ViewQuery, s: &im::OrdSet<Arc<Triple>>) -> Vec<Tuple> {
        match query {
            ViewQuery::Count { rel } => vec![vec![Value::Int(rows_of(s, rel).count() as i64)]],
            ViewQuery::Sum { rel, attr } => {
                let sum = rows_of(s, rel).filter_map(|t| t.tuple[*attr].as_int()).fold(0i64, |a, b| a.wrapping_add(b));
                vec![vec![Value::Int(sum)]]
            }
            ViewQuery::GroupCount { rel, attr } => {
                let mut groups: BTreeMap<&Value, i64> = BTreeMap::new();
                for t in rows_of(s, rel) {
                    *groups.entry(&t.tuple[*attr]).or_default() += 1;
                }
                groups.into_iter().map(|(v, n)| vec![v.clone(), Value::Int(n)]).collect()
            }
        }
    }

    /// Every invariant that does not hold on `s` with the given views.
    pub fn violations(&self, s: &im::OrdSet<Arc<Triple>>, views: &BTreeMap<String, Vec<Tuple>>) -> Vec<String> {
        let mut out = Vec::new();
        for inv in &self.invariants {
            match inv {
                Invariant::RowCheck { rel, attr, op, value } => {
                    for t in rows_of(s, rel) {
                        if !op.holds(&t.tuple[*attr], value) {
                            out.push(format!("check on {rel} fails for {t:?}"));
                        }
                    }
                }
                Invariant::NonNegative { rel, attr } => {
                    for t in rows_of(s, rel) {
                        if t.tuple[*attr].as_int().is_some_and(|v| v < 0) {
                            out.push(format!("negative value in {rel}: {t:?}"));
                        }
                    }
                }
                Invariant::ForeignKey { src, src_attr, target, target_attr } => {
                    let targets: BTreeSet<&Value> = rows_of(s, target).map(|t| &t.tuple[*target_attr]).collect();
                    for t in rows_of(s, src) {
                        if !targets.contains(&t.tuple[*src_attr]) {
                            out.push(format!("dangling reference {src} -> {target}: {t:?}"));
                        }
                    }
                }
                Invariant::Unique { rel, attr, .. } => {
                    let mut seen = BTreeSet::new();
                    for t in rows_of(s, rel) {
                        if !seen.insert(&t.tuple[*attr]) {
                            out.push(format!("duplicate value in {rel}: {t:?}"));
                        }
                    }
                }
                Invariant::MaterializedView { rel, query } => {
                    if views.get(rel) != Some(&Self::evaluate(query, s)) {
                        out.push(format!("view {rel} is stale"));
                    }
                }
            }
        }
        out
    }
}

fn rows_of<'a>(s: &'a im::OrdSet<Arc<Triple>>, rel: &'a str) -> impl Iterator<Item = &'a Triple> + 'a {
    s.iter().map(|t| &**t).filter(move |t| t.rel == rel)
}
