//! Named-axis dense tensors and categorical distributions.
//!
//! Every conditional probability table in a model is a [`NamedTensor`] whose
//! axes are labelled with variable names, so contractions are expressed by
//! name rather than by position.

use std::borrow::Borrow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operands of `ln` are clamped to this value.
pub const LOG_FLOOR: f64 = 1e-32;

/// A distribution is valid if its mass is within this distance of one.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// What a variable denotes, read from its name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    State,
    Observation,
    Action,
}

/// Variable identifier. Names start with `S_` (latent state), `O_`
/// (observation) or `A_` (action).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VarName(Arc<str>);

impl VarName {
    pub fn new(name: impl AsRef<str>) -> Result<Self> {
        let name = name.as_ref();
        match Self::kind_of(name) {
            Some(_) => Ok(Self(Arc::from(name))),
            None => Err(Error::BadPrefix(name.to_string())),
        }
    }

    fn kind_of(name: &str) -> Option<VarKind> {
        let kind = if name.starts_with("S_") {
            VarKind::State
        } else if name.starts_with("O_") {
            VarKind::Observation
        } else if name.starts_with("A_") {
            VarKind::Action
        } else {
            return None;
        };
        (name.len() > 2).then_some(kind)
    }

    pub fn kind(&self) -> VarKind {
        Self::kind_of(&self.0).expect("validated at construction")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Name of the same variable one time step later (`S_x` -> `S_x'`).
    /// Used for the child axis of transition tensors.
    pub fn successor(&self) -> VarName {
        Self(Arc::from(format!("{}'", self.0)))
    }
}

impl TryFrom<String> for VarName {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<VarName> for String {
    fn from(value: VarName) -> Self {
        value.0.to_string()
    }
}

impl Borrow<str> for VarName {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

/// Rescales a nonnegative vector so that it sums to one.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if values.is_empty() || total <= 0.0 || !total.is_finite() {
        return Err(Error::ZeroMass);
    }
    Ok(values.iter().map(|v| v / total).collect())
}

/// A categorical distribution over a single variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    var: VarName,
    probs: Vec<f64>,
}

impl Categorical {
    /// Checks that `probs` is a distribution (entries in `[0, 1]`, mass 1).
    pub fn new(var: VarName, probs: Vec<f64>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidDistribution {
            var: var.to_string(),
            reason,
        };
        if probs.is_empty() {
            return Err(invalid("no entries".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("entry {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(invalid(format!("mass {total}")));
        }
        Ok(Self { var, probs })
    }

    /// Normalizes arbitrary nonnegative weights into a distribution.
    pub fn from_weights(var: VarName, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidDistribution {
                var: var.to_string(),
                reason: "negative or non-finite weight".into(),
            });
        }
        Ok(Self {
            var,
            probs: normalize(weights)?,
        })
    }

    pub fn uniform(var: VarName, cardinality: usize) -> Self {
        assert!(cardinality > 0, "uniform over an empty domain");
        Self {
            var,
            probs: vec![1.0 / cardinality as f64; cardinality],
        }
    }

    pub fn one_hot(var: VarName, cardinality: usize, index: usize) -> Self {
        assert!(index < cardinality, "one-hot index out of range");
        let mut probs = vec![0.0; cardinality];
        probs[index] = 1.0;
        Self { var, probs }
    }

    pub fn var(&self) -> &VarName {
        &self.var
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cardinality(&self) -> usize {
        self.probs.len()
    }

    /// Index of the most probable value, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn with_var(mut self, var: VarName) -> Self {
        self.var = var;
        self
    }
}

/// `KL[p || q]` with natural logarithms; `0 ln 0 = 0` and `q` is floored
/// at [`LOG_FLOOR`].
pub fn kl_divergence(p: &Categorical, q: &Categorical) -> Result<f64> {
    kl_divergence_raw(p.probs(), q.probs())
}

pub(crate) fn kl_divergence_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.max(LOG_FLOOR).ln() - qi.max(LOG_FLOOR).ln()))
        .sum();
    Ok(kl.max(0.0))
}

/// Shannon entropy in nats.
pub fn entropy(p: &Categorical) -> f64 {
    entropy_raw(p.probs())
}

pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|pi| **pi > 0.0)
        .map(|pi| -pi * pi.max(LOG_FLOOR).ln())
        .sum();
    h.max(0.0)
}

/// A positional dense array (row-major), the raw form in which model
/// parameters are supplied before the builder names their axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Table {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(vec![n, n], |idx| if idx[0] == idx[1] { 1.0 } else { 0.0 })
    }

    /// Builds a table by evaluating `f` at every multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f64>) {
        (self.shape, self.data)
    }
}

/// One labelled axis of a [`NamedTensor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: VarName,
    #[serde(rename = "card")]
    pub cardinality: usize,
}

/// Dense nonnegative array with axes labelled by variable names, stored
/// row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    axes: Vec<Axis>,
    values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = axes.iter().map(|a| a.cardinality).product();
        if expected != values.len() {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(a) = axes.iter().find(|a| a.cardinality == 0) {
            return Err(Error::InvalidTensor(format!("axis `{}` is empty", a.name)));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::InvalidTensor(format!("axis `{}` repeated", a.name)));
            }
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidTensor("entries must be finite and nonnegative".into()));
        }
        Ok(Self { axes, values })
    }

    /// Attaches names to a positional table. `names` must match its rank.
    pub fn from_table(names: Vec<VarName>, table: Table) -> Result<Self> {
        let (shape, data) = table.into_parts();
        if names.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                actual: shape.len(),
            });
        }
        let axes = names
            .into_iter()
            .zip(shape)
            .map(|(name, cardinality)| Axis { name, cardinality })
            .collect();
        Self::new(axes, data)
    }

    pub fn from_categorical(c: &Categorical) -> Self {
        Self {
            axes: vec![Axis {
                name: c.var().clone(),
                cardinality: c.cardinality(),
            }],
            values: c.probs().to_vec(),
        }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.cardinality).collect()
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name.as_str() == name)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Entry at a full assignment of the axes, given by name.
    pub fn get(&self, assignment: &[(&str, usize)]) -> Result<f64> {
        let mut offset = 0;
        for (k, axis) in self.axes.iter().enumerate() {
            let &(_, idx) = assignment
                .iter()
                .find(|(n, _)| *n == axis.name.as_str())
                .ok_or_else(|| Error::UnknownAxis(axis.name.to_string()))?;
            if idx >= axis.cardinality {
                return Err(Error::IndexOutOfRange {
                    var: axis.name.to_string(),
                    index: idx,
                    cardinality: axis.cardinality,
                });
            }
            offset = offset * self.axes[k].cardinality + idx;
        }
        Ok(self.values[offset])
    }

    fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        let card = self.axes[axis].cardinality;
        let post: usize = self.axes[axis + 1..].iter().map(|a| a.cardinality).product();
        (self.values.len() / (card * post), card, post)
    }

    fn without_axis(&self, axis: usize) -> Vec<Axis> {
        let mut axes = self.axes.clone();
        axes.remove(axis);
        axes
    }

    fn locate(&self, name: &str) -> Result<usize> {
        self.axis_index(name)
            .ok_or_else(|| Error::UnknownAxis(name.to_string()))
    }

    /// Fixes `name` at `index`, dropping that axis.
    pub fn select(&self, name: &str, index: usize) -> Result<NamedTensor> {
        let axis = self.locate(name)?;
        let (pre, card, post) = self.split_at_axis(axis);
        if index >= card {
            return Err(Error::IndexOutOfRange {
                var: name.to_string(),
                index,
                cardinality: card,
            });
        }
        let mut values = Vec::with_capacity(pre * post);
        for p in 0..pre {
            let start = (p * card + index) * post;
            values.extend_from_slice(&self.values[start..start + post]);
        }
        Ok(Self {
            axes: self.without_axis(axis),
            values,
        })
    }

    fn eliminate(&self, axis: usize, weights: &[f64]) -> NamedTensor {
        let (pre, card, post) = self.split_at_axis(axis);
        let mut values = vec![0.0; pre * post];
        for p in 0..pre {
            let dst = &mut values[p * post..(p + 1) * post];
            for (c, &w) in weights.iter().enumerate().take(card) {
                if w == 0.0 {
                    continue;
                }
                let start = (p * card + c) * post;
                for (d, s) in dst.iter_mut().zip(&self.values[start..start + post]) {
                    *d += w * s;
                }
            }
        }
        Self {
            axes: self.without_axis(axis),
            values,
        }
    }

    /// Sums out every named axis against its weight vector:
    /// `out[kept] = Σ_eliminated t[kept, eliminated] · Π w_k[eliminated_k]`.
    pub fn contract_with(&self, weights: &[(&str, &[f64])]) -> Result<NamedTensor> {
        let mut out: Option<NamedTensor> = None;
        for (name, w) in weights {
            let current = out.as_ref().unwrap_or(self);
            let axis = current.locate(name)?;
            let card = current.axes[axis].cardinality;
            if w.len() != card {
                return Err(Error::DimensionMismatch {
                    expected: card,
                    actual: w.len(),
                });
            }
            out = Some(current.eliminate(axis, w));
        }
        Ok(out.unwrap_or_else(|| self.clone()))
    }

    /// Contracts the tensor against categorical beliefs over some of its
    /// axes; the result keeps the remaining axes in their original order.
    pub fn contract(&self, beliefs: &[&Categorical]) -> Result<NamedTensor> {
        let weights: Vec<(&str, &[f64])> = beliefs.iter().map(|b| (b.var().as_str(), b.probs())).collect();
        self.contract_with(&weights)
    }

    /// Applies `f` entrywise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> NamedTensor {
        Self {
            axes: self.axes.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn rename_axis(mut self, from: &str, to: VarName) -> Result<NamedTensor> {
        let axis = self.locate(from)?;
        self.axes[axis].name = to;
        Ok(self)
    }

    /// Interprets a rank-1 tensor as an (unnormalized) distribution.
    pub fn into_categorical(self) -> Result<Categorical> {
        if self.axes.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: self.axes.len(),
            });
        }
        let var = self.axes[0].name.clone();
        Categorical::from_weights(var, &self.values)
    }
}

/// Free-function form of [`NamedTensor::contract`].
pub fn contract(t: &NamedTensor, beliefs: &[&Categorical]) -> Result<NamedTensor> {
    t.contract(beliefs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(name: &str) -> VarName {
        VarName::new(name).unwrap()
    }

    fn cat(name: &str, p: &[f64]) -> Categorical {
        Categorical::new(v(name), p.to_vec()).unwrap()
    }

    #[test]
    fn var_name_prefixes() {
        assert_eq!(v("S_shape").kind(), VarKind::State);
        assert_eq!(v("O_x").kind(), VarKind::Observation);
        assert_eq!(v("A_1").kind(), VarKind::Action);
        assert!(matches!(VarName::new("X_1"), Err(Error::BadPrefix(_))));
        assert!(matches!(VarName::new(""), Err(Error::BadPrefix(_))));
        assert!(matches!(VarName::new("S_"), Err(Error::BadPrefix(_))));
        assert_eq!(v("S_x").successor().as_str(), "S_x'");
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(
            normalize(&[0.3, 0.7, 1.0]).unwrap(),
            vec![0.3 / 2.0, 0.7 / 2.0, 1.0 / 2.0]
        );
        assert_eq!(normalize(&[0.0, 0.0]), Err(Error::ZeroMass));
        assert_eq!(normalize(&[]), Err(Error::ZeroMass));
    }

    #[test]
    fn categorical_validation() {
        assert!(Categorical::new(v("S_a"), vec![0.5, 0.6]).is_err());
        assert!(Categorical::new(v("S_a"), vec![-0.5, 1.5]).is_err());
        assert!(Categorical::new(v("S_a"), vec![]).is_err());
        assert_eq!(cat("S_a", &[0.2, 0.8]).argmax(), 1);
        assert_eq!(cat("S_a", &[0.5, 0.5]).argmax(), 0);
    }

    #[test]
    fn kl_examples() {
        let p = cat("O_a", &[0.4, 0.6]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        // 0.8 ln 1.6 + 0.2 ln 0.4
        let kl = kl_divergence(&cat("O_a", &[0.8, 0.2]), &cat("O_a", &[0.5, 0.5])).unwrap();
        assert!((kl - 0.192_744_757_021_757_5).abs() < 1e-9, "{kl}");
        let d = cat("O_a", &[1.0, 0.0]);
        assert_eq!(kl_divergence(&d, &d).unwrap(), 0.0);
        assert!(matches!(
            kl_divergence(&d, &cat("O_a", &[0.2, 0.3, 0.5])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kl_uses_log_floor_for_zero_q() {
        let kl = kl_divergence(&cat("O_a", &[0.5, 0.5]), &cat("O_a", &[1.0, 0.0])).unwrap();
        let expected = 0.5 * (0.5f64.ln() - 1.0f64.ln()) + 0.5 * (0.5f64.ln() - LOG_FLOOR.ln());
        assert!((kl - expected).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&cat("S_a", &[0.0, 1.0, 0.0])), 0.0);
        let h = entropy(&Categorical::uniform(v("S_a"), 7));
        assert!((h - 7f64.ln()).abs() < 1e-12);
        assert!((entropy(&cat("S_a", &[0.5, 0.5])) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn table_from_fn_is_row_major() {
        let t = Table::from_fn(vec![2, 3], |i| (i[0] * 10 + i[1]) as f64);
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(Table::eye(2).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn tensor_rejects_bad_input() {
        let ax = |n: &str, c| Axis {
            name: v(n),
            cardinality: c,
        };
        assert!(NamedTensor::new(vec![ax("S_a", 2)], vec![1.0]).is_err());
        assert!(NamedTensor::new(vec![ax("S_a", 2), ax("S_a", 1)], vec![1.0, 1.0]).is_err());
        assert!(NamedTensor::new(vec![ax("S_a", 2)], vec![1.0, -1.0]).is_err());
        assert!(NamedTensor::new(vec![ax("S_a", 2)], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn contract_identity_returns_belief() {
        let t = NamedTensor::from_table(vec![v("S_c"), v("S_p")], Table::eye(3)).unwrap();
        let b = cat("S_p", &[0.2, 0.3, 0.5]);
        let out = contract(&t, &[&b]).unwrap();
        assert_eq!(out.axes()[0].name.as_str(), "S_c");
        assert_eq!(out.values(), b.probs());
    }

    #[test]
    fn contract_one_hot_is_a_slice() {
        let t = NamedTensor::from_table(
            vec![v("S_c"), v("S_p")],
            Table::from_fn(vec![2, 3], |i| (1 + i[0] * 3 + i[1]) as f64),
        )
        .unwrap();
        let b = Categorical::one_hot(v("S_p"), 3, 2);
        let out = t.contract(&[&b]).unwrap();
        assert_eq!(out.values(), t.select("S_p", 2).unwrap().values());
        assert_eq!(out.values(), &[3.0, 6.0]);
    }

    #[test]
    fn contract_errors() {
        let t = NamedTensor::from_table(vec![v("S_c"), v("S_p")], Table::eye(2)).unwrap();
        let b = cat("S_q", &[0.5, 0.5]);
        assert!(matches!(t.contract(&[&b]), Err(Error::UnknownAxis(_))));
        let b = cat("S_p", &[0.2, 0.3, 0.5]);
        assert!(matches!(t.contract(&[&b]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn get_by_assignment() {
        let t = NamedTensor::from_table(
            vec![v("S_a"), v("S_b")],
            Table::from_fn(vec![2, 3], |i| (i[0] * 3 + i[1]) as f64),
        )
        .unwrap();
        assert_eq!(t.get(&[("S_b", 2), ("S_a", 1)]).unwrap(), 5.0);
        assert!(t.get(&[("S_a", 1)]).is_err());
    }
}
