//! Central finite-difference gradient verification.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward implementation it checks.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter or input index, element index, analytic, numeric)
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            worst: None,
            checked: 0,
        }
    }

    fn record(&mut self, which: usize, elem: usize, a: f64, n: f64, floor: f64) {
        let e = rel_err(a, n, floor);
        self.checked += 1;
        if e > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(e);
            self.worst = Some((which, elem, a, n));
        }
    }
}

/// Checks `d loss / d inputs` where `build` constructs a scalar loss from
/// leaf vars holding `inputs`.
pub fn check_inputs<B>(inputs: &[Tensor<f64>], h: f64, floor: f64, build: B) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let l = build(&mut g, &vars)?;
        Ok(g.value(l).data()[0])
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let mut report = GradCheckReport::new();
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = g
            .grad(*v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for e in 0..inputs[i].len() {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[e] = orig;
            report.record(i, e, analytic[e], (up - down) / (2.0 * h), floor);
        }
    }
    Ok(report)
}

/// Checks `d loss / d params` for every element of every parameter in
/// `store`. `build` must construct the loss from `store` onto the graph.
pub fn check_params<B>(store: &ParamStore<f64>, h: f64, floor: f64, build: B) -> Result<GradCheckReport>
where
    B: Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(store, &mut g)?;
    g.backward(loss)?;
    let analytic: Vec<(ParamId, Vec<f64>)> = g
        .param_grads()
        .into_iter()
        .map(|(id, s)| (id, s.to_vec()))
        .collect();
    let lookup = |id: ParamId| analytic.iter().find(|(p, _)| *p == id).map(|(_, g)| g);
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(s, &mut g)?;
        Ok(g.value(l).data()[0])
    };
    let mut report = GradCheckReport::new();
    let mut work = store.clone();
    for id in store.ids() {
        let n = store.get(id).len();
        let a = lookup(id);
        for e in 0..n {
            let orig = work.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig;
            let an = a.map_or(0.0, |g| g[e]);
            report.record(id.0, e, an, (up - down) / (2.0 * h), floor);
        }
    }
    Ok(report)
}
