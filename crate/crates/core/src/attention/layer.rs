//! Layer forwards recorded on a [`Tape`], plus plain wrappers on bundles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, ParamId, ParamStore, Pattern, Tape, Var};
use crate::dense::Mat;
use crate::error::{shape_err, GsanError, Result};
use crate::filters::CochainBundle;
use crate::operators::DiracFamily;
use crate::sparse::SparseOperator;

use super::config::{GsanLayerConfig, HeadCombine, LaplacianKind, ModelFamily};
use super::context::{Adjacency, SimplicialContext, Support};
use super::params::{AttnKey, FilterIds, HeadLayout, LayerLayout, LayerParams};

/// How the Laplacian factors of a layer are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diffusion {
    /// Learned attentional Laplacians.
    Attention,
    Fixed(LaplacianKind),
}

/// An attention matrix produced during a forward pass.
#[derive(Clone, Debug)]
pub struct AttentionNode {
    pub head: usize,
    pub key: AttnKey,
    pub pattern: Arc<Pattern>,
    /// `nnz x 1` coefficients after masking (signed when masking is signed).
    pub values: Var,
}

#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub orders: Vec<Var>,
    pub attention: Vec<AttentionNode>,
}

enum Factor {
    Sparse(Arc<SparseOperator>),
    Valued(Arc<Pattern>, Var),
}

impl Factor {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Factor::Sparse(op) => tape.sparse(op, x),
            Factor::Valued(p, v) => tape.valued(p, *v, x),
        }
    }
}

/// Σ_{p=1}^{n} A^p t_p.
fn horner_from_one(tape: &mut Tape, a: &Factor, terms: &[Var]) -> Result<Option<Var>> {
    let Some(acc) = horner_from_zero(tape, a, terms)? else {
        return Ok(None);
    };
    a.apply(tape, acc).map(Some)
}

/// Σ_{p=0}^{n-1} A^p t_p.
fn horner_from_zero(tape: &mut Tape, a: &Factor, terms: &[Var]) -> Result<Option<Var>> {
    let Some(&last) = terms.last() else {
        return Ok(None);
    };
    let mut acc = last;
    for &t in terms[..terms.len() - 1].iter().rev() {
        acc = a.apply(tape, acc)?;
        acc = tape.add(acc, t)?;
    }
    Ok(Some(acc))
}

/// Attention scores on `pattern` for the stacked features `h`. `a` is the
/// `(m F) x 2` parameter node. With `even` set the logit only sees `|h|`.
pub(crate) fn attention_on_tape(
    tape: &mut Tape,
    pattern: &Arc<Pattern>,
    h: Var,
    a: Var,
    slope: f64,
    even: bool,
) -> Result<Var> {
    let (hc, ar, ac) = (tape.value(h).cols(), tape.value(a).rows(), tape.value(a).cols());
    if ac != 2 || ar != hc {
        return shape_err(format!(
            "attention vector of length {} for stacked width {hc}",
            ar * ac
        ));
    }
    let h = if even { tape.act(h, Activation::Abs)? } else { h };
    let s = tape.matmul(h, a)?;
    let left = tape.col_slice(s, 0, 1)?;
    let right = tape.col_slice(s, 1, 2)?;
    let e = tape.pair_scores(pattern, left, right)?;
    let g = tape.act(e, Activation::LeakyRelu(slope))?;
    tape.segment_softmax(pattern, g)
}

struct HeadVars {
    down: Vec<Var>,
    up: Vec<Var>,
    harmonic: Option<Var>,
    joint: bool,
}

impl HeadVars {
    fn new(tape: &mut Tape, store: &ParamStore, layout: &HeadLayout) -> Self {
        let mut reg = |ids: &[ParamId]| -> Vec<Var> { ids.iter().map(|&id| tape.param(id, store)).collect() };
        match &layout.filters {
            FilterIds::Split { down, up, harmonic } => {
                let (down, up) = (reg(down), reg(up));
                HeadVars {
                    down,
                    up,
                    harmonic: Some(tape.param(*harmonic, store)),
                    joint: false,
                }
            }
            FilterIds::Joint { shared } => {
                let shared = reg(shared);
                HeadVars {
                    down: shared.clone(),
                    up: shared,
                    harmonic: None,
                    joint: true,
                }
            }
        }
    }

    fn stack(&self, fam: DiracFamily) -> &[Var] {
        match fam {
            DiracFamily::Down => &self.down,
            DiracFamily::Up => &self.up,
        }
    }
}

struct HeadCtx<'a> {
    tape: &'a mut Tape,
    ctx: &'a SimplicialContext,
    config: &'a GsanLayerConfig,
    store: &'a ParamStore,
    layout: &'a HeadLayout,
    diffusion: Diffusion,
    head: usize,
    attention: &'a mut Vec<AttentionNode>,
}

impl HeadCtx<'_> {
    fn support(&self, k: usize, adj: Adjacency) -> Result<&Support> {
        self.ctx
            .support(k, adj)
            .ok_or_else(|| GsanError::ShapeError(format!("order {k} has no {adj:?} adjacency")))
    }

    /// Diffusion factor for `(k, adj, variant)`; `terms` are the per-power
    /// transforms stacked into `h` when attention is learned.
    fn factor(&mut self, k: usize, adj: Adjacency, variant: u8, terms: &[Var]) -> Result<Factor> {
        let support = self.support(k, adj)?.clone();
        let signed = self.config.signed_masking;
        match self.diffusion {
            Diffusion::Fixed(LaplacianKind::Hodge) => Ok(Factor::Sparse(support.laplacian.clone())),
            Diffusion::Fixed(LaplacianKind::RowNormalized) => {
                let w = if signed {
                    Mat::from_vec(
                        support.pattern.nnz(),
                        1,
                        support.uniform.as_slice().iter().zip(support.signs.as_slice()).map(|(u, s)| u * s).collect(),
                    )?
                } else {
                    (*support.uniform).clone()
                };
                let v = self.tape.constant(w);
                Ok(Factor::Valued(support.pattern.clone(), v))
            }
            Diffusion::Attention => {
                let key = AttnKey::new(k, adj, variant);
                let id = *self
                    .layout
                    .attention
                    .get(&key)
                    .ok_or_else(|| GsanError::ShapeError(format!("no attention parameter for {}", key.label())))?;
                let a = self.tape.param(id, self.store);
                let h = self.tape.hcat(terms)?;
                let mut alpha =
                    attention_on_tape(self.tape, &support.pattern, h, a, self.config.attention_slope, signed)?;
                if signed {
                    alpha = self.tape.mul_const(alpha, support.signs.clone())?;
                }
                self.attention.push(AttentionNode {
                    head: self.head,
                    key,
                    pattern: support.pattern.clone(),
                    values: alpha,
                });
                Ok(Factor::Valued(support.pattern, alpha))
            }
        }
    }

    /// `C` of an adjacency: `B_kᵀ Z_{k-1}` (lower) or `B_{k+1} Z_{k+1}` (upper).
    fn cross(&mut self, z: &[Var], k: usize, adj: Adjacency) -> Result<Var> {
        match adj {
            Adjacency::Lower => self.tape.sparse_t(self.ctx.boundary(k), z[k - 1]),
            Adjacency::Upper => self.tape.sparse(self.ctx.boundary(k + 1), z[k + 1]),
            Adjacency::Full => unreachable!("no cross term on the full Laplacian"),
        }
    }

    fn even_terms(&mut self, zk: Var, ws: &[Var]) -> Result<Vec<Var>> {
        (1..=self.config.n_even()).map(|p| self.tape.matmul(zk, ws[2 * p - 1])).collect()
    }

    fn odd_terms(&mut self, c: Var, ws: &[Var]) -> Result<Vec<Var>> {
        (0..self.config.n_odd()).map(|p| self.tape.matmul(c, ws[2 * p])).collect()
    }

    fn harmonic(&mut self, zk: Var, k: usize, wh: Var) -> Result<Var> {
        if !self.config.use_harmonic {
            return self.tape.matmul(zk, wh);
        }
        let step = self.ctx.harmonic_step(k).clone();
        let steps = self.config.harmonic_steps();
        if self.config.f_in <= self.config.f_out {
            let q = self.tape.repeat(&step, steps, zk)?;
            self.tape.matmul(q, wh)
        } else {
            let y = self.tape.matmul(zk, wh)?;
            self.tape.repeat(&step, steps, y)
        }
    }

    /// Pre-activation output of this head at every order.
    fn forward(&mut self, z: &[Var]) -> Result<Vec<Var>> {
        let vars = HeadVars::new(self.tape, self.store, self.layout);
        let kmax = self.ctx.max_order();
        let mut out = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let zk = z[k];
            let mut parts = Vec::new();
            if let Some(wh) = vars.harmonic {
                parts.push(self.harmonic(zk, k, wh)?);
            }
            if vars.joint {
                let even = self.even_terms(zk, &vars.down)?;
                if !even.is_empty() {
                    let f = self.factor(k, Adjacency::Full, 1, &even)?;
                    parts.extend(horner_from_one(self.tape, &f, &even)?);
                }
            }
            for adj in self.ctx.adjacencies(k) {
                let ws = vars.stack(SimplicialContext::family(k, adj)).to_vec();
                if !vars.joint {
                    let even = self.even_terms(zk, &ws)?;
                    if !even.is_empty() {
                        let f = self.factor(k, adj, 1, &even)?;
                        parts.extend(horner_from_one(self.tape, &f, &even)?);
                    }
                }
                let c = self.cross(z, k, adj)?;
                let odd = self.odd_terms(c, &ws)?;
                let f = self.factor(k, adj, 2, &odd)?;
                parts.extend(horner_from_zero(self.tape, &f, &odd)?);
            }
            let y = if parts.is_empty() {
                let zero = Mat::zeros(self.ctx.sizes()[k], self.config.f_out);
                self.tape.constant(zero)
            } else {
                self.tape.sum_all(&parts)?
            };
            out.push(y);
        }
        Ok(out)
    }
}

/// Records one layer (all heads, combined and activated) on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn layer_forward_tape(
    tape: &mut Tape,
    ctx: &SimplicialContext,
    config: &GsanLayerConfig,
    layout: &LayerLayout,
    store: &ParamStore,
    diffusion: Diffusion,
    z: &[Var],
) -> Result<LayerOutput> {
    config.validate()?;
    if z.len() != ctx.sizes().len() {
        return shape_err(format!("{} input orders for a complex with {}", z.len(), ctx.sizes().len()));
    }
    for (k, &v) in z.iter().enumerate() {
        if tape.value(v).shape() != (ctx.sizes()[k], config.f_in) {
            return shape_err(format!(
                "order {k} input is {:?}, expected ({}, {})",
                tape.value(v).shape(),
                ctx.sizes()[k],
                config.f_in
            ));
        }
    }
    if layout.heads.len() != config.heads {
        return shape_err("layout head count differs from config");
    }
    let mut attention = Vec::new();
    let mut heads = Vec::with_capacity(config.heads);
    for (h, hl) in layout.heads.iter().enumerate() {
        let mut hc = HeadCtx {
            tape,
            ctx,
            config,
            store,
            layout: hl,
            diffusion,
            head: h,
            attention: &mut attention,
        };
        heads.push(hc.forward(z)?);
    }
    let mut orders = Vec::with_capacity(z.len());
    for k in 0..z.len() {
        let per_head: Vec<Var> = heads.iter().map(|h| h[k]).collect();
        orders.push(combine_on_tape(tape, &per_head, config.head_combine, config.nonlinearity)?);
    }
    Ok(LayerOutput { orders, attention })
}

fn combine_on_tape(tape: &mut Tape, heads: &[Var], mode: HeadCombine, act: Activation) -> Result<Var> {
    match mode {
        HeadCombine::Concat => {
            let acts = heads.iter().map(|&h| tape.act(h, act)).collect::<Result<Vec<_>>>()?;
            tape.hcat(&acts)
        }
        HeadCombine::Average => {
            let s = tape.sum_all(heads)?;
            let m = if heads.len() == 1 {
                s
            } else {
                tape.scale(s, 1.0 / heads.len() as f64)?
            };
            tape.act(m, act)
        }
    }
}

fn run_layer(
    ctx: &SimplicialContext,
    config: &GsanLayerConfig,
    params: &LayerParams,
    diffusion: Diffusion,
    z: &CochainBundle,
) -> Result<CochainBundle> {
    z.check_sizes(ctx.sizes())?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = z.orders().iter().map(|m| tape.constant(m.clone())).collect();
    let out = layer_forward_tape(&mut tape, ctx, config, &params.layout, &params.store, diffusion, &vars)?;
    CochainBundle::new(out.orders.iter().map(|&v| tape.value(v).clone()).collect())
}

fn expect_family(params: &LayerParams, allowed: &[ModelFamily]) -> Result<()> {
    if allowed.contains(&params.layout.family) {
        Ok(())
    } else {
        shape_err(format!("layer parameters of family {:?}", params.layout.family))
    }
}

/// Convolutional layer with fixed Laplacian factors.
pub fn gsccn_layer_forward(
    ctx: &SimplicialContext,
    config: &GsanLayerConfig,
    params: &LayerParams,
    kind: LaplacianKind,
    z: &CochainBundle,
) -> Result<CochainBundle> {
    expect_family(params, &[ModelFamily::Gsccn, ModelFamily::Gsan])?;
    run_layer(ctx, config, params, Diffusion::Fixed(kind), z)
}

/// Attentional layer.
pub fn gsan_layer_forward(
    ctx: &SimplicialContext,
    config: &GsanLayerConfig,
    params: &LayerParams,
    z: &CochainBundle,
) -> Result<CochainBundle> {
    expect_family(params, &[ModelFamily::Gsan])?;
    run_layer(ctx, config, params, Diffusion::Attention, z)
}

/// Joint layer; `diffusion` selects the attentional or a fixed variant.
pub fn gsan_joint_layer_forward(
    ctx: &SimplicialContext,
    config: &GsanLayerConfig,
    params: &LayerParams,
    diffusion: Diffusion,
    z: &CochainBundle,
) -> Result<CochainBundle> {
    expect_family(params, &[ModelFamily::GsanJoint])?;
    run_layer(ctx, config, params, diffusion, z)
}

/// Combines pre-activation head outputs: concat applies `act` per head and
/// stacks column blocks in head order, average applies it to the mean.
pub fn multi_head_combine(heads: &[CochainBundle], mode: HeadCombine, act: Activation) -> Result<CochainBundle> {
    let first = heads.first().ok_or_else(|| GsanError::ShapeError("no heads".into()))?;
    if heads
        .iter()
        .any(|h| h.sizes() != first.sizes() || h.width() != first.width())
    {
        return shape_err("heads differ in shape");
    }
    let mut out = Vec::with_capacity(first.max_order() + 1);
    for k in 0..=first.max_order() {
        let mut tape = Tape::new();
        let vars: Vec<Var> = heads.iter().map(|h| tape.constant(h.order(k).clone())).collect();
        let v = combine_on_tape(&mut tape, &vars, mode, act)?;
        out.push(tape.value(v).clone());
    }
    CochainBundle::new(out)
}

/// Normalized attention coefficients on `neighborhoods` for the stacked
/// features `h` (`n x w`). `a` has length `2w`: the first half scores the
/// receiving simplex, the second its neighbor.
pub fn attention_coefficients(
    h: &Mat,
    a: &[f64],
    neighborhoods: &Pattern,
    slope: f64,
    even: bool,
) -> Result<Vec<f64>> {
    let w = h.cols();
    if a.len() != 2 * w {
        return shape_err(format!("attention vector of length {} for stacked width {w}", a.len()));
    }
    if neighborhoods.n_rows() != h.rows() || neighborhoods.n_cols() != h.rows() {
        return shape_err("neighborhoods do not match the feature rows");
    }
    let am = Mat::from_fn(w, 2, |i, c| a[c * w + i]);
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let av = tape.constant(am);
    let pattern = Arc::new(neighborhoods.clone());
    let alpha = attention_on_tape(&mut tape, &pattern, hv, av, slope, even)?;
    Ok(tape.value(alpha).as_slice().to_vec())
}

/// Builds the attentional Laplacian from `(row, col, alpha)` triplets on
/// `support`. Signed mode multiplies each entry by the relative orientation
/// sign of the underlying Laplacian entry.
pub fn assemble_attentional_laplacian(
    support: &Support,
    alphas: &[(usize, usize, f64)],
    signed: bool,
) -> Result<SparseOperator> {
    let p = &support.pattern;
    let mut values = vec![0.0; p.nnz()];
    for &(i, j, a) in alphas {
        let e = (i < p.n_rows())
            .then(|| p.find(i, j))
            .flatten()
            .ok_or(GsanError::SupportViolation { row: i, col: j })?;
        values[e] += if signed { a * support.signs[(e, 0)] } else { a };
    }
    Ok(p.to_operator(&values))
}

/// One materialized attentional Laplacian.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionalLaplacian {
    pub head: usize,
    pub key: AttnKey,
    pub pattern: Arc<Pattern>,
    pub values: Vec<f64>,
}

impl AttentionalLaplacian {
    pub fn to_operator(&self) -> SparseOperator {
        self.pattern.to_operator(&self.values)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.pattern.n_rows())
            .map(|i| self.values[self.pattern.row_range(i)].iter().sum())
            .collect()
    }
}

/// Every attentional Laplacian a forward pass on `z` builds.
pub fn attentional_laplacians(
    ctx: &SimplicialContext,
    config: &GsanLayerConfig,
    params: &LayerParams,
    z: &CochainBundle,
) -> Result<Vec<AttentionalLaplacian>> {
    z.check_sizes(ctx.sizes())?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = z.orders().iter().map(|m| tape.constant(m.clone())).collect();
    let out = layer_forward_tape(
        &mut tape,
        ctx,
        config,
        &params.layout,
        &params.store,
        Diffusion::Attention,
        &vars,
    )?;
    Ok(out
        .attention
        .into_iter()
        .map(|n| AttentionalLaplacian {
            head: n.head,
            key: n.key,
            pattern: n.pattern,
            values: tape.value(n.values).as_slice().to_vec(),
        })
        .collect())
}
