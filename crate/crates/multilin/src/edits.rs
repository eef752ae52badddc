//! Edit tensors assembled from sparse selector terms.
//!
//! An edit is a weighted sum of terms, each picking basis columns on one,
//! two, or all three modes:
//!
//! * order 1: `α·u⁽ⁿ⁾ᵢ` broadcast along the other two modes (ones fill),
//! * order 2: `α` times the outer product of two basis columns, the absent
//!   mode filled with ones,
//! * order 3: `α·u⁽ᶜ⁾ᵢ ∘ u⁽ᴴ⁾ⱼ ∘ u⁽ᵂ⁾ₖ`.
//!
//! Selector coefficient tensors are never materialised; terms are built
//! straight from basis columns, and every output entry is a single product
//! `α·(basis entries)` so weight scaling and fiber structure hold exactly.
//!
//! The text form, one term per line, is `order:modes:indices:alpha`,
//! e.g. `1:C:3:2.5` or `3:CHW:0,1,2:-1.0`.

use crate::mpca::MultilinearBasis;
use crate::tensor::{Mode, Tensor, TensorShape3};
use crate::{Error, Result};

/// One weighted term of an edit: which modes participate, which basis
/// column on each, and the weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorTerm {
    modes: Vec<Mode>,
    indices: Vec<usize>,
    weight: f64,
}

impl SelectorTerm {
    /// Modes must be distinct and in channel < height < width order, with
    /// one basis index per mode.
    pub fn new(modes: Vec<Mode>, indices: Vec<usize>, weight: f64) -> Result<Self> {
        if modes.is_empty() || modes.len() > 3 {
            return Err(Error::Contract(format!(
                "selector term must list 1 to 3 modes, got {}",
                modes.len()
            )));
        }
        if indices.len() != modes.len() {
            return Err(Error::Contract(format!(
                "{} indices for {} modes",
                indices.len(),
                modes.len()
            )));
        }
        for pair in modes.windows(2) {
            if pair[0].index() >= pair[1].index() {
                return Err(Error::Contract(
                    "selector modes must be distinct and ordered C < H < W".into(),
                ));
            }
        }
        Ok(Self {
            modes,
            indices,
            weight,
        })
    }

    pub fn order(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Basis index for `mode` if the term lists it.
    pub fn index_for(&self, mode: Mode) -> Option<usize> {
        self.modes
            .iter()
            .position(|&m| m == mode)
            .map(|p| self.indices[p])
    }

    /// Parses the canonical text form `order:modes:indices:alpha`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::Contract(format!(
                "expected `order:modes:indices:alpha`, got `{s}`"
            )));
        }
        let order: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Contract(format!("invalid order `{}`", parts[0])))?;
        if !(1..=3).contains(&order) {
            return Err(Error::Contract(format!("order must be 1, 2, or 3, got {order}")));
        }
        let modes: Vec<Mode> = parts[1]
            .trim()
            .chars()
            .map(|c| {
                Mode::from_letter(c)
                    .ok_or_else(|| Error::Contract(format!("unknown mode letter `{c}`")))
            })
            .collect::<Result<_>>()?;
        if modes.len() != order {
            return Err(Error::Contract(format!(
                "order {order} term lists {} modes",
                modes.len()
            )));
        }
        let indices: Vec<usize> = parts[2]
            .trim()
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Contract(format!("invalid index `{p}`")))
            })
            .collect::<Result<_>>()?;
        let weight: f64 = parts[3]
            .trim()
            .parse()
            .map_err(|_| Error::Contract(format!("invalid weight `{}`", parts[3])))?;
        SelectorTerm::new(modes, indices, weight)
    }

    fn key(&self) -> (Vec<Mode>, Vec<usize>) {
        (self.modes.clone(), self.indices.clone())
    }
}

impl std::fmt::Display for SelectorTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let letters: String = self.modes.iter().map(|m| m.letter()).collect();
        let indices: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        write!(
            f,
            "{}:{}:{}:{}",
            self.order(),
            letters,
            indices.join(","),
            self.weight
        )
    }
}

/// A full edit: a list of terms. Duplicate (modes, indices) combinations
/// are merged by summing their weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectorSpec {
    terms: Vec<SelectorTerm>,
}

impl SelectorSpec {
    pub fn new(terms: Vec<SelectorTerm>) -> Self {
        let mut merged: Vec<SelectorTerm> = Vec::with_capacity(terms.len());
        for term in terms {
            match merged.iter_mut().find(|t| t.key() == term.key()) {
                Some(existing) => existing.weight += term.weight,
                None => merged.push(term),
            }
        }
        Self { terms: merged }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn terms(&self) -> &[SelectorTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Uniform weight rescale of every term.
    pub fn scaled(&self, factor: f64) -> SelectorSpec {
        SelectorSpec {
            terms: self
                .terms
                .iter()
                .map(|t| SelectorTerm {
                    modes: t.modes.clone(),
                    indices: t.indices.clone(),
                    weight: t.weight * factor,
                })
                .collect(),
        }
    }
}

impl std::fmt::Display for SelectorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Parses selector text, one term per line. Blank lines and lines starting
/// with `#` are skipped; errors carry the 1-based line number.
pub fn parse_selector_lines(text: &str) -> Result<Vec<SelectorTerm>> {
    let mut terms = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let term = SelectorTerm::parse(line).map_err(|e| Error::SelectorParse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        terms.push(term);
    }
    Ok(terms)
}

fn check_term(term: &SelectorTerm, basis: &MultilinearBasis, shape: TensorShape3) -> Result<()> {
    if basis.shape() != shape {
        return Err(Error::Dimension(format!(
            "basis shape {} does not match requested shape {shape}",
            basis.shape()
        )));
    }
    for (&mode, &idx) in term.modes().iter().zip(term.indices()) {
        let extent = shape.extent(mode);
        if idx >= extent {
            return Err(Error::Contract(format!(
                "basis index {idx} out of range for mode {mode} with extent {extent}"
            )));
        }
    }
    Ok(())
}

/// Per-mode factor of a term: the selected basis column scaled by `scale`,
/// or a ones vector if the term does not list the mode.
fn term_factor(
    term: &SelectorTerm,
    basis: &MultilinearBasis,
    mode: Mode,
    scale: f64,
) -> Result<Vec<f64>> {
    match term.index_for(mode) {
        Some(idx) => {
            let col = basis.factor(mode).component(idx)?;
            Ok(col.into_iter().map(|x| scale * x).collect())
        }
        None => Ok(vec![scale; basis.shape().extent(mode)]),
    }
}

fn build_term(
    term: &SelectorTerm,
    basis: &MultilinearBasis,
    shape: TensorShape3,
) -> Result<Tensor> {
    check_term(term, basis, shape)?;
    // fold the weight into the first listed mode's factor so each output
    // entry is a plain product of the three factor entries; fibers along a
    // listed mode are then exact scalar copies of alpha times that column
    let first = term.modes()[0];
    let u = term_factor(term, basis, Mode::Channel, if first == Mode::Channel { term.weight() } else { 1.0 })?;
    let v = term_factor(term, basis, Mode::Height, if first == Mode::Height { term.weight() } else { 1.0 })?;
    let w = term_factor(term, basis, Mode::Width, if first == Mode::Width { term.weight() } else { 1.0 })?;
    crate::tensor::outer3(&u, &v, &w)
}

/// Builds a single first-order term: the selected basis column, scaled by
/// the weight, broadcast along the two unlisted modes.
pub fn build_first_order(
    term: &SelectorTerm,
    basis: &MultilinearBasis,
    shape: TensorShape3,
) -> Result<Tensor> {
    if term.order() != 1 {
        return Err(Error::Contract(format!(
            "build_first_order needs an order-1 term, got order {}",
            term.order()
        )));
    }
    build_term(term, basis, shape)
}

/// Builds a single interaction term: the outer product of the selected
/// basis columns (two or three modes), any absent mode filled with ones,
/// scaled by the weight.
pub fn build_interaction(
    term: &SelectorTerm,
    basis: &MultilinearBasis,
    shape: TensorShape3,
) -> Result<Tensor> {
    if term.order() == 1 {
        return Err(Error::Contract(
            "build_interaction needs an order-2 or order-3 term".into(),
        ));
    }
    build_term(term, basis, shape)
}

/// Sums all terms of a spec into one edit tensor. Linear in every weight;
/// an empty spec gives the zero tensor.
pub fn assemble_edit_tensor(
    spec: &SelectorSpec,
    basis: &MultilinearBasis,
    shape: TensorShape3,
) -> Result<Tensor> {
    let mut out = Tensor::zeros(&shape.dims())?;
    for term in spec.terms() {
        let t = build_term(term, basis, shape)?;
        out.add_assign(&t)?;
    }
    Ok(out)
}
