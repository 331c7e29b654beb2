//! Brute-force references: exact multi-step transition distributions over
//! tiny token spaces, exact model likelihoods, and central-difference
//! gradients.
//!
//! Nothing here reuses the model's numerical kernels. Models are consulted
//! only for raw logits; normalization and summation happen in f64 below.

use std::fmt::Write as _;

use crate::codec::TokenGrid;
use crate::error::{Error, Result};
use crate::float::Scalar;
use crate::model::{HourglassModel, HourglassParams};

pub const MAX_VOCAB: usize = 4;
pub const MAX_POSITIONS: usize = 6;
pub const MAX_STEPS: usize = 3;
pub const MAX_STATES: usize = 4096;

/// Anything that maps a full state to per-position logits (`positions x vocab`,
/// row-major).
pub trait LogitModel {
    fn vocab(&self) -> usize;
    fn positions(&self) -> usize;
    fn logits(&self, state: &[u16]) -> Result<Vec<f64>>;
}

impl<F: Scalar> LogitModel for HourglassModel<F> {
    fn vocab(&self) -> usize {
        self.config().vocab
    }

    fn positions(&self) -> usize {
        self.config().positions()
    }

    fn logits(&self, state: &[u16]) -> Result<Vec<f64>> {
        let (h, w) = self.config().grid_shape;
        let z = TokenGrid::new(h, w, state.to_vec())?;
        Ok(self.forward(&z, None)?.iter().map(|v| v.to_f64c()).collect())
    }
}

/// A class-conditional model pinned to one label.
pub struct Conditioned<'a, F> {
    pub model: &'a HourglassModel<F>,
    pub class: usize,
}

impl<F: Scalar> LogitModel for Conditioned<'_, F> {
    fn vocab(&self) -> usize {
        self.model.config().vocab
    }

    fn positions(&self) -> usize {
        self.model.config().positions()
    }

    fn logits(&self, state: &[u16]) -> Result<Vec<f64>> {
        let (h, w) = self.model.config().grid_shape;
        let z = TokenGrid::new(h, w, state.to_vec())?;
        Ok(self.model.forward(&z, Some(self.class))?.iter().map(|v| v.to_f64c()).collect())
    }
}

/// Bounds under which full enumeration is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerableSpec {
    pub vocab: usize,
    pub positions: usize,
    pub steps: usize,
}

impl EnumerableSpec {
    pub fn check(&self) -> Result<usize> {
        let states = (self.vocab as u64).checked_pow(self.positions as u32).unwrap_or(u64::MAX);
        if self.vocab == 0
            || self.vocab > MAX_VOCAB
            || self.positions == 0
            || self.positions > MAX_POSITIONS
            || self.steps > MAX_STEPS
            || states > MAX_STATES as u64
        {
            return Err(Error::Size(format!(
                "v={}, N={}, T={} exceeds enumeration limits (v<={MAX_VOCAB}, N<={MAX_POSITIONS}, T<={MAX_STEPS}, v^N<={MAX_STATES})",
                self.vocab, self.positions, self.steps
            )));
        }
        Ok(states as usize)
    }
}

/// State index <-> tokens. Position 0 is the most significant digit.
pub fn state_index(state: &[u16], vocab: usize) -> usize {
    state.iter().fold(0, |acc, &t| acc * vocab + t as usize)
}

pub fn state_tokens(mut index: usize, vocab: usize, positions: usize) -> Vec<u16> {
    let mut out = vec![0u16; positions];
    for slot in out.iter_mut().rev() {
        *slot = (index % vocab) as u16;
        index /= vocab;
    }
    out
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One-step log transition table: `table[s][p * v + t] = ln f(z_p = t | s)`.
fn log_table<M: LogitModel + ?Sized>(model: &M, states: usize) -> Result<Vec<Vec<f64>>> {
    let (v, n) = (model.vocab(), model.positions());
    (0..states)
        .map(|s| {
            let logits = model.logits(&state_tokens(s, v, n))?;
            if logits.len() != n * v {
                return Err(Error::Shape(format!("model returned {} logits, expected {}", logits.len(), n * v)));
            }
            let mut out = Vec::with_capacity(n * v);
            for row in logits.chunks(v) {
                let lse = log_sum_exp(row.iter().copied());
                out.extend(row.iter().map(|x| x - lse));
            }
            Ok(out)
        })
        .collect()
}

fn propagate(table: &[Vec<f64>], mut log_dist: Vec<f64>, steps: usize, v: usize, n: usize) -> Vec<f64> {
    let states = table.len();
    for _ in 0..steps {
        let mut next = vec![f64::NEG_INFINITY; states];
        for (target, slot) in next.iter_mut().enumerate() {
            let tokens = state_tokens(target, v, n);
            let terms = (0..states).filter(|&s| log_dist[s] > f64::NEG_INFINITY).map(|s| {
                log_dist[s] + tokens.iter().enumerate().map(|(p, &t)| table[s][p * v + t as usize]).sum::<f64>()
            });
            *slot = log_sum_exp(terms);
        }
        log_dist = next;
    }
    log_dist
}

fn spec_of<M: LogitModel + ?Sized>(model: &M, steps: usize) -> Result<usize> {
    EnumerableSpec { vocab: model.vocab(), positions: model.positions(), steps }.check()
}

/// Exact `p_T(z_T | z_0)` over all `v^N` states, indexed by [`state_index`].
pub fn exact_transition<M: LogitModel + ?Sized>(model: &M, z0: &[u16], steps: usize) -> Result<Vec<f64>> {
    let states = spec_of(model, steps)?;
    let (v, n) = (model.vocab(), model.positions());
    if z0.len() != n || z0.iter().any(|&t| t as usize >= v) {
        return Err(Error::Shape("initial state does not fit the model".into()));
    }
    let table = log_table(model, states)?;
    let mut init = vec![f64::NEG_INFINITY; states];
    init[state_index(z0, v)] = 0.0;
    Ok(propagate(&table, init, steps, v, n).into_iter().map(f64::exp).collect())
}

/// Exact distribution of `z_T` when `z_0` is uniform over all states.
pub fn exact_marginal<M: LogitModel + ?Sized>(model: &M, steps: usize) -> Result<Vec<f64>> {
    Ok(exact_log_marginal(model, steps)?.into_iter().map(f64::exp).collect())
}

fn exact_log_marginal<M: LogitModel + ?Sized>(model: &M, steps: usize) -> Result<Vec<f64>> {
    let states = spec_of(model, steps)?;
    let (v, n) = (model.vocab(), model.positions());
    let table = log_table(model, states)?;
    let prior = -(n as f64) * (v as f64).ln();
    Ok(propagate(&table, vec![prior; states], steps, v, n))
}

/// Negative log-likelihood with an explicit sentinel for zero probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nll {
    Finite(f64),
    Overflow,
}

impl Nll {
    pub fn value(self) -> Option<f64> {
        match self {
            Nll::Finite(v) => Some(v),
            Nll::Overflow => None,
        }
    }
}

/// `-ln sum_{z0} p_T(z | z0) v^-N`, exact by enumeration.
pub fn exact_model_nll<M: LogitModel + ?Sized>(model: &M, z: &[u16], steps: usize) -> Result<Nll> {
    Ok(exact_model_nll_all(model, steps)?[state_index(z, model.vocab())])
}

/// [`exact_model_nll`] for every state at once.
pub fn exact_model_nll_all<M: LogitModel + ?Sized>(model: &M, steps: usize) -> Result<Vec<Nll>> {
    Ok(exact_log_marginal(model, steps)?
        .into_iter()
        .map(|lp| if lp == f64::NEG_INFINITY { Nll::Overflow } else { Nll::Finite((-lp).max(0.0)) })
        .collect())
}

/// `state_index,probability` lines.
pub fn distribution_csv(dist: &[f64]) -> String {
    let mut out = String::from("state,probability\n");
    for (i, p) in dist.iter().enumerate() {
        writeln!(out, "{i},{p:.17e}").unwrap();
    }
    out
}

/// Flat scalar view of a parameter set.
pub trait FlatParams {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> f64;
    fn set(&mut self, i: usize, value: f64);
    fn name(&self, i: usize) -> String {
        format!("#{i}")
    }
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FlatParams for Vec<f64> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, i: usize) -> f64 {
        self[i]
    }

    fn set(&mut self, i: usize, value: f64) {
        self[i] = value;
    }
}

fn locate<F: Scalar>(p: &HourglassParams<F>, mut i: usize) -> (usize, usize) {
    for (k, (_, t)) in p.tensors().iter().enumerate() {
        if i < t.len() {
            return (k, i);
        }
        i -= t.len();
    }
    panic!("parameter index out of range");
}

impl<F: Scalar> FlatParams for HourglassParams<F> {
    fn len(&self) -> usize {
        self.num_scalars()
    }

    fn get(&self, i: usize) -> f64 {
        let (k, j) = locate(self, i);
        let t = self.tensors()[k].1;
        t[[j / t.ncols(), j % t.ncols()]].to_f64c()
    }

    fn set(&mut self, i: usize, value: f64) {
        let (k, j) = locate(self, i);
        let t = self.tensors_mut().swap_remove(k);
        let cols = t.ncols();
        t[[j / cols, j % cols]] = F::from_f64c(value);
    }

    fn name(&self, i: usize) -> String {
        let (k, j) = locate(self, i);
        let (name, t) = &self.tensors()[k];
        format!("{name}[{}, {}]", j / t.ncols(), j % t.ncols())
    }
}

/// Central differences `(L(p + eps) - L(p - eps)) / 2 eps` for every entry.
/// `params` is restored before returning.
pub fn finite_diff_grad<P, L>(loss: L, params: &mut P, eps: f64) -> Result<Vec<f64>>
where
    P: FlatParams + ?Sized,
    L: FnMut(&P) -> f64,
{
    finite_diff(loss, params, eps, Stencil::Central)
}

/// Difference scheme for [`finite_diff`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `D(eps) = (L(p + eps) - L(p - eps)) / 2 eps`, error `O(eps^2)`.
    Central,
    /// Richardson combination `(4 D(eps) - D(2 eps)) / 3` of two central
    /// differences, error `O(eps^4)`. Allows a larger `eps`, which keeps
    /// cancellation error down on small gradient entries.
    Richardson,
}

pub fn finite_diff<P, L>(mut loss: L, params: &mut P, eps: f64, stencil: Stencil) -> Result<Vec<f64>>
where
    P: FlatParams + ?Sized,
    L: FnMut(&P) -> f64,
{
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params.get(i);
        let mut central = |h: f64| -> Result<f64> {
            params.set(i, orig + h);
            let up = loss(params);
            params.set(i, orig - h);
            let down = loss(params);
            params.set(i, orig);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing {}", params.name(i))));
            }
            Ok((up - down) / (2.0 * h))
        };
        grad.push(match stencil {
            Stencil::Central => central(eps)?,
            Stencil::Richardson => (4.0 * central(eps)? - central(2.0 * eps)?) / 3.0,
        });
    }
    Ok(grad)
}

/// `|a - b| / max(|a| + |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Logits given directly as a function of the state.
    struct Table<G> {
        vocab: usize,
        positions: usize,
        f: G,
    }

    impl<G: Fn(&[u16]) -> Vec<f64>> LogitModel for Table<G> {
        fn vocab(&self) -> usize {
            self.vocab
        }
        fn positions(&self) -> usize {
            self.positions
        }
        fn logits(&self, state: &[u16]) -> Result<Vec<f64>> {
            Ok((self.f)(state))
        }
    }

    #[test]
    fn uniform_model_is_uniform() {
        let m = Table { vocab: 3, positions: 3, f: |_: &[u16]| vec![0.7; 9] };
        for steps in 0..=3 {
            let d = exact_transition(&m, &[2, 0, 1], steps).unwrap();
            if steps > 0 {
                assert!(d.iter().all(|p| (p - 1.0 / 27.0).abs() < 1e-12));
            }
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let nll = exact_model_nll(&m, &[1, 1, 1], 2).unwrap();
        assert!((nll.value().unwrap() - 3.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_step_factorizes() {
        // Logits depend on the state so that the product structure is visible.
        let m = Table { vocab: 2, positions: 2, f: |s: &[u16]| vec![0.0, s[0] as f64 + 0.5, 1.0, -(s[1] as f64)] };
        let z0 = [1u16, 0];
        let d = exact_transition(&m, &z0, 1).unwrap();
        let sm = |a: f64, b: f64| (a.exp() / (a.exp() + b.exp()), b.exp() / (a.exp() + b.exp()));
        let (p0a, p0b) = sm(0.0, 1.5);
        let (p1a, p1b) = sm(1.0, 0.0);
        let want = [p0a * p1a, p0a * p1b, p0b * p1a, p0b * p1b];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn delta_model_reports_overflow() {
        let target = [1u16, 0, 1];
        let m = Table {
            vocab: 2,
            positions: 3,
            f: move |_: &[u16]| {
                target
                    .iter()
                    .flat_map(|&t| if t == 0 { [0.0, f64::NEG_INFINITY] } else { [f64::NEG_INFINITY, 0.0] })
                    .collect()
            },
        };
        assert_eq!(exact_model_nll(&m, &target, 2).unwrap(), Nll::Finite(0.0));
        assert_eq!(exact_model_nll(&m, &[0, 0, 0], 2).unwrap(), Nll::Overflow);
    }

    #[test]
    fn bounds_enforced() {
        let m = Table { vocab: 4, positions: 7, f: |_: &[u16]| vec![0.0; 28] };
        assert!(matches!(exact_marginal(&m, 1), Err(Error::Size(_))));
        let m = Table { vocab: 2, positions: 2, f: |_: &[u16]| vec![0.0; 4] };
        assert!(matches!(exact_marginal(&m, 4), Err(Error::Size(_))));
    }

    #[test]
    fn state_indexing_round_trips() {
        for i in 0..81 {
            assert_eq!(state_index(&state_tokens(i, 3, 4), 3), i);
        }
        assert_eq!(state_index(&[1, 0], 2), 2);
    }

    #[test]
    fn finite_differences_of_simple_losses() {
        let mut p = vec![0.5, -1.25, 3.0];
        let g = finite_diff_grad(|p: &Vec<f64>| p.iter().map(|x| x * x).sum(), &mut p, 1e-4).unwrap();
        for (gi, pi) in g.iter().zip(&p) {
            assert!((gi - 2.0 * pi).abs() < 1e-9);
        }
        let c = [2.0, -3.0, 0.25];
        let g = finite_diff_grad(|p: &Vec<f64>| p.iter().zip(&c).map(|(a, b)| a * b).sum(), &mut p, 1e-3).unwrap();
        for (gi, ci) in g.iter().zip(c) {
            assert!((gi - ci).abs() < 1e-11);
        }
        assert_eq!(p, vec![0.5, -1.25, 3.0]);
    }

    #[test]
    fn non_finite_loss_names_the_parameter() {
        let mut p = vec![1.0, 0.2];
        let err = finite_diff_grad(|p: &Vec<f64>| p[1].ln(), &mut p, 0.5).unwrap_err();
        assert!(err.to_string().contains("#1"), "{err}");
    }
}
