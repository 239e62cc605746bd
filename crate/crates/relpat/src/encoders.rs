//! The six pattern encoders: lookup-table (nocomp), additive mean, plain
//! RNN, LSTM, GRU, and gated additive composition (gac). Each provides a
//! forward pass to a pattern vector h_p and exact backpropagation through
//! time for its parameter matrices. Word vectors are inputs only and never
//! receive gradients.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::OOV;
use crate::embeddings::WordVectors;
use crate::hogwild::MatRead;
use crate::math::{sigmoid_vec, tanh_vec, Mat};
use crate::patterns::{PatternLexicon, RelationalPattern};
use crate::{Error, Result};

const MODEL_FORMAT: &str = "relpat-encoder/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    NoComp,
    Add,
    Rnn,
    Lstm,
    Gru,
    Gac,
}

impl Arch {
    pub const ALL: [Arch; 6] = [
        Arch::NoComp,
        Arch::Add,
        Arch::Rnn,
        Arch::Lstm,
        Arch::Gru,
        Arch::Gac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::NoComp => "nocomp",
            Arch::Add => "add",
            Arch::Rnn => "rnn",
            Arch::Lstm => "lstm",
            Arch::Gru => "gru",
            Arch::Gac => "gac",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        match s {
            "nocomp" => Some(Arch::NoComp),
            "add" => Some(Arch::Add),
            "rnn" => Some(Arch::Rnn),
            "lstm" => Some(Arch::Lstm),
            "gru" => Some(Arch::Gru),
            "gac" => Some(Arch::Gac),
            _ => None,
        }
    }

    /// Parameter matrix names in canonical order. All matrices are d×d.
    pub fn matrix_names(self) -> &'static [&'static str] {
        match self {
            Arch::NoComp | Arch::Add => &[],
            Arch::Rnn => &["W_x", "W_h"],
            Arch::Lstm => &[
                "W_ix", "W_ih", "W_fx", "W_fh", "W_ox", "W_oh", "W_cx", "W_ch",
            ],
            Arch::Gru => &["W_zx", "W_zh", "W_rx", "W_rh", "W_nx", "W_nh"],
            Arch::Gac => &["W_ix", "W_ih", "W_fx", "W_fh"],
        }
    }

    pub fn is_gated(self) -> bool {
        matches!(self, Arch::Lstm | Arch::Gru | Arch::Gac)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Direction in which a pattern's words are fed to a recurrent encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComposeOrder {
    /// Last word first (the default).
    Backward,
    Forward,
}

impl ComposeOrder {
    pub fn name(self) -> &'static str {
        match self {
            ComposeOrder::Backward => "backward",
            ComposeOrder::Forward => "forward",
        }
    }

    pub fn parse(s: &str) -> Option<ComposeOrder> {
        match s {
            "backward" => Some(ComposeOrder::Backward),
            "forward" => Some(ComposeOrder::Forward),
            _ => None,
        }
    }
}

/// Architecture tag plus parameter storage.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: Arch,
    pub d: usize,
    /// One d×d matrix per [`Arch::matrix_names`] entry, same order.
    pub mats: Vec<Mat>,
    /// nocomp only: |P|×d pattern-vector table.
    pub table: Option<Mat>,
    /// nocomp only: pattern surface → table row.
    pub rows: Option<HashMap<String, usize>>,
}

/// Encoder parameters plus the composition order they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub order: ComposeOrder,
    pub params: EncoderParams,
}

impl EncoderModel {
    pub fn id(&self) -> String {
        format!(
            "{} d={} order={}",
            self.params.arch.name(),
            self.params.d,
            self.order.name()
        )
    }
}

/// Initializes encoder parameters: matrices ~ Uniform(−scale, scale) with
/// `scale` defaulting to 1/sqrt(d); the nocomp table ~ Uniform(−0.5/d, 0.5/d)
/// with one row per lexicon pattern.
pub fn init_params(
    arch: Arch,
    d: usize,
    rng: &mut StdRng,
    scale: Option<f64>,
    lexicon: Option<&PatternLexicon>,
) -> Result<EncoderParams> {
    if d < 1 {
        return Err(Error::Config("dimension must be >= 1".into()));
    }
    let scale = scale.unwrap_or(1.0 / (d as f64).sqrt());
    if scale < 0.0 {
        return Err(Error::Config("init scale must be >= 0".into()));
    }
    let mut mats = Vec::new();
    for _name in arch.matrix_names() {
        let mut m = Mat::zeros(d, d);
        if scale > 0.0 {
            for v in m.data.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        mats.push(m);
    }
    let (table, rows) = if arch == Arch::NoComp {
        let lex = lexicon.ok_or_else(|| {
            Error::Config("nocomp initialization requires a pattern lexicon".into())
        })?;
        let table = crate::embeddings::init_lookup_rows(lex.len(), d, rng);
        let rows = lex
            .patterns()
            .iter()
            .enumerate()
            .map(|(i, p)| (p.surface(), i))
            .collect();
        (Some(table), Some(rows))
    } else {
        (None, None)
    };
    Ok(EncoderParams {
        arch,
        d,
        mats,
        table,
        rows,
    })
}

/// Per-architecture intermediate activations recorded by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceDetail {
    None,
    Gac {
        i: Vec<Vec<f64>>,
        f: Vec<Vec<f64>>,
    },
    Lstm {
        i: Vec<Vec<f64>>,
        f: Vec<Vec<f64>>,
        o: Vec<Vec<f64>>,
        g: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        tanh_c: Vec<Vec<f64>>,
    },
    Gru {
        z: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        n: Vec<Vec<f64>>,
        hr: Vec<Vec<f64>>,
    },
}

/// Everything the forward pass saw, sufficient for exact backpropagation and
/// for gate inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeTrace {
    pub arch: Arch,
    pub order: ComposeOrder,
    /// Pattern words with out-of-vocabulary entries removed, original order.
    pub tokens: Vec<String>,
    /// Index into `tokens` consumed at each step.
    pub steps: Vec<usize>,
    /// Input vector per step.
    pub xs: Vec<Vec<f64>>,
    /// Hidden state per step.
    pub hs: Vec<Vec<f64>>,
    pub detail: TraceDetail,
    /// Final pattern vector.
    pub h_p: Vec<f64>,
    /// nocomp only: table row used.
    pub nocomp_row: Option<usize>,
}

impl EncodeTrace {
    pub fn d(&self) -> usize {
        self.h_p.len()
    }

    /// Words consumed before step `t`, rendered in surface order.
    pub fn scanned(&self, t: usize) -> String {
        let mut seen: Vec<usize> = self.steps[..t].to_vec();
        seen.sort_unstable();
        seen.iter()
            .map(|&i| self.tokens[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// a = M·x + N·y.
fn two_matvec<M: MatRead>(m: &M, x: &[f64], n: &M, y: &[f64], a: &mut [f64], tmp: &mut [f64]) {
    m.mul_vec(x, a);
    n.mul_vec(y, tmp);
    add_assign(a, tmp);
}

fn rnn_forward<M: MatRead>(mats: &[M], xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = mats[0].rows();
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
    let zero = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for (t, x) in xs.iter().enumerate() {
        let hprev = if t == 0 { &zero } else { &hs[t - 1] };
        let mut a = vec![0.0; d];
        two_matvec(&mats[0], x, &mats[1], hprev, &mut a, &mut tmp);
        tanh_vec(&mut a);
        hs.push(a);
    }
    hs
}

fn gac_forward<M: MatRead>(
    mats: &[M],
    xs: &[Vec<f64>],
    frozen_gates: Option<(f64, f64)>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = mats[0].rows();
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
    let mut is_ = Vec::with_capacity(xs.len());
    let mut fs = Vec::with_capacity(xs.len());
    let zero = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for (t, x) in xs.iter().enumerate() {
        let hprev = if t == 0 { &zero } else { &hs[t - 1] };
        let mut i = vec![0.0; d];
        let mut f = vec![0.0; d];
        match frozen_gates {
            Some((iv, fv)) => {
                i.iter_mut().for_each(|v| *v = iv);
                f.iter_mut().for_each(|v| *v = fv);
            }
            None => {
                two_matvec(&mats[0], x, &mats[1], hprev, &mut i, &mut tmp);
                two_matvec(&mats[2], x, &mats[3], hprev, &mut f, &mut tmp);
                sigmoid_vec(&mut i);
                sigmoid_vec(&mut f);
            }
        }
        let mut h = vec![0.0; d];
        for j in 0..d {
            h[j] = (f[j] * hprev[j] + i[j] * x[j]).tanh();
        }
        hs.push(h);
        is_.push(i);
        fs.push(f);
    }
    (hs, is_, fs)
}

#[allow(clippy::type_complexity)]
fn lstm_forward<M: MatRead>(
    mats: &[M],
    xs: &[Vec<f64>],
) -> (
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
) {
    let d = mats[0].rows();
    let zero = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let (mut hs, mut is_, mut fs, mut os, mut gs, mut cs, mut tcs) = (
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
    );
    for (t, x) in xs.iter().enumerate() {
        let hprev: &Vec<f64> = if t == 0 { &zero } else { &hs[t - 1] };
        let cprev: &Vec<f64> = if t == 0 { &zero } else { &cs[t - 1] };
        let mut i = vec![0.0; d];
        let mut f = vec![0.0; d];
        let mut o = vec![0.0; d];
        let mut g = vec![0.0; d];
        two_matvec(&mats[0], x, &mats[1], hprev, &mut i, &mut tmp);
        two_matvec(&mats[2], x, &mats[3], hprev, &mut f, &mut tmp);
        two_matvec(&mats[4], x, &mats[5], hprev, &mut o, &mut tmp);
        two_matvec(&mats[6], x, &mats[7], hprev, &mut g, &mut tmp);
        sigmoid_vec(&mut i);
        sigmoid_vec(&mut f);
        sigmoid_vec(&mut o);
        tanh_vec(&mut g);
        let mut c = vec![0.0; d];
        let mut tc = vec![0.0; d];
        let mut h = vec![0.0; d];
        for j in 0..d {
            c[j] = f[j] * cprev[j] + i[j] * g[j];
            tc[j] = c[j].tanh();
            h[j] = o[j] * tc[j];
        }
        hs.push(h);
        is_.push(i);
        fs.push(f);
        os.push(o);
        gs.push(g);
        cs.push(c);
        tcs.push(tc);
    }
    (hs, is_, fs, os, gs, cs, tcs)
}

#[allow(clippy::type_complexity)]
fn gru_forward<M: MatRead>(
    mats: &[M],
    xs: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = mats[0].rows();
    let zero = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let (mut hs, mut zs, mut rs, mut ns, mut hrs) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (t, x) in xs.iter().enumerate() {
        let hprev: &Vec<f64> = if t == 0 { &zero } else { &hs[t - 1] };
        let mut z = vec![0.0; d];
        let mut r = vec![0.0; d];
        two_matvec(&mats[0], x, &mats[1], hprev, &mut z, &mut tmp);
        two_matvec(&mats[2], x, &mats[3], hprev, &mut r, &mut tmp);
        sigmoid_vec(&mut z);
        sigmoid_vec(&mut r);
        let mut hr = vec![0.0; d];
        for j in 0..d {
            hr[j] = r[j] * hprev[j];
        }
        let mut n = vec![0.0; d];
        two_matvec(&mats[4], x, &mats[5], &hr, &mut n, &mut tmp);
        tanh_vec(&mut n);
        let mut h = vec![0.0; d];
        for j in 0..d {
            h[j] = (1.0 - z[j]) * n[j] + z[j] * hprev[j];
        }
        hs.push(h);
        zs.push(z);
        rs.push(r);
        ns.push(n);
        hrs.push(hr);
    }
    (hs, zs, rs, ns, hrs)
}

/// Composes a pattern vector, recording the full trace.
///
/// Out-of-vocabulary pattern words are dropped; a pattern with no remaining
/// words is uncomputable. nocomp ignores word vectors entirely and fails on
/// patterns absent from its table.
pub fn encode_with<M: MatRead>(
    arch: Arch,
    mats: &[M],
    table: Option<&M>,
    rows: Option<&HashMap<String, usize>>,
    pattern: &RelationalPattern,
    words: &WordVectors,
    order: ComposeOrder,
) -> Result<EncodeTrace> {
    if mats.len() != arch.matrix_names().len() {
        return Err(Error::Model(format!(
            "{} expects {} matrices, got {}",
            arch,
            arch.matrix_names().len(),
            mats.len()
        )));
    }
    if arch == Arch::NoComp {
        let surface = pattern.surface();
        let row = rows
            .and_then(|r| r.get(&surface).copied())
            .ok_or_else(|| Error::NoRepresentation(surface.clone()))?;
        let table = table.ok_or_else(|| Error::Model("nocomp table missing".into()))?;
        let h_p: Vec<f64> = (0..table.cols()).map(|j| table.at(row, j)).collect();
        return Ok(EncodeTrace {
            arch,
            order,
            tokens: pattern.words.clone(),
            steps: Vec::new(),
            xs: Vec::new(),
            hs: Vec::new(),
            detail: TraceDetail::None,
            h_p,
            nocomp_row: Some(row),
        });
    }

    let mut tokens = Vec::new();
    let mut ids = Vec::new();
    for (w, &id) in pattern.words.iter().zip(&pattern.ids) {
        if id == OOV {
            continue;
        }
        if id >= words.len() {
            return Err(Error::Model(format!(
                "pattern id {id} out of range for {} word vectors",
                words.len()
            )));
        }
        tokens.push(w.clone());
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(Error::UncomputablePattern(pattern.surface()));
    }

    let m = ids.len();
    let steps: Vec<usize> = match order {
        ComposeOrder::Backward => (0..m).rev().collect(),
        ComposeOrder::Forward => (0..m).collect(),
    };
    let xs: Vec<Vec<f64>> = steps.iter().map(|&i| words.vec(ids[i]).to_vec()).collect();
    let d = words.d();

    let (hs, detail) = match arch {
        Arch::Add => {
            let mut h = vec![0.0; d];
            for x in &xs {
                add_assign(&mut h, x);
            }
            for v in h.iter_mut() {
                *v /= m as f64;
            }
            let trace = EncodeTrace {
                arch,
                order,
                tokens,
                steps,
                xs,
                hs: Vec::new(),
                detail: TraceDetail::None,
                h_p: h,
                nocomp_row: None,
            };
            return Ok(trace);
        }
        Arch::Rnn => (rnn_forward(mats, &xs), TraceDetail::None),
        Arch::Gac => {
            let (hs, i, f) = gac_forward(mats, &xs, None);
            (hs, TraceDetail::Gac { i, f })
        }
        Arch::Lstm => {
            let (hs, i, f, o, g, c, tanh_c) = lstm_forward(mats, &xs);
            (hs, TraceDetail::Lstm { i, f, o, g, c, tanh_c })
        }
        Arch::Gru => {
            let (hs, z, r, n, hr) = gru_forward(mats, &xs);
            (hs, TraceDetail::Gru { z, r, n, hr })
        }
        Arch::NoComp => unreachable!(),
    };
    let h_p = hs.last().cloned().unwrap();
    Ok(EncodeTrace {
        arch,
        order,
        tokens,
        steps,
        xs,
        hs,
        detail,
        h_p,
        nocomp_row: None,
    })
}

pub fn encode(
    model: &EncoderModel,
    pattern: &RelationalPattern,
    words: &WordVectors,
) -> Result<EncodeTrace> {
    encode_with(
        model.params.arch,
        &model.params.mats,
        model.params.table.as_ref(),
        model.params.rows.as_ref(),
        pattern,
        words,
        model.order,
    )
}

/// Gradients of `grad_hp · h_p` with respect to encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    /// Same order as [`Arch::matrix_names`]. Empty for add and nocomp.
    pub mats: Vec<Mat>,
    /// nocomp only: (table row, gradient of that row).
    pub nocomp_row: Option<(usize, Vec<f64>)>,
}

/// Exact backpropagation through time, chaining an upstream gradient on h_p
/// into gradients for every parameter matrix.
pub fn backprop_with<M: MatRead>(
    arch: Arch,
    mats: &[M],
    trace: &EncodeTrace,
    grad_hp: &[f64],
) -> Result<ParamGrads> {
    if trace.arch != arch {
        return Err(Error::Model(format!(
            "trace was produced by {}, parameters are {}",
            trace.arch, arch
        )));
    }
    if grad_hp.len() != trace.d() {
        return Err(Error::DimensionMismatch {
            expected: trace.d(),
            got: grad_hp.len(),
        });
    }
    let d = trace.d();

    match arch {
        Arch::NoComp => {
            let row = trace
                .nocomp_row
                .ok_or_else(|| Error::Model("trace has no table row".into()))?;
            return Ok(ParamGrads {
                mats: Vec::new(),
                nocomp_row: Some((row, grad_hp.to_vec())),
            });
        }
        Arch::Add => {
            return Ok(ParamGrads {
                mats: Vec::new(),
                nocomp_row: None,
            });
        }
        _ => {}
    }
    if mats.len() != arch.matrix_names().len() {
        return Err(Error::Model(format!(
            "{} expects {} matrices, got {}",
            arch,
            arch.matrix_names().len(),
            mats.len()
        )));
    }

    let steps = trace.hs.len();
    let mut grads: Vec<Mat> = (0..mats.len()).map(|_| Mat::zeros(d, d)).collect();
    let zero = vec![0.0; d];
    let mut dh = grad_hp.to_vec();
    let mut tmp = vec![0.0; d];

    match (&trace.detail, arch) {
        (TraceDetail::None, Arch::Rnn) => {
            for t in (0..steps).rev() {
                let h = &trace.hs[t];
                let hprev: &[f64] = if t == 0 { &zero } else { &trace.hs[t - 1] };
                let mut da = vec![0.0; d];
                for j in 0..d {
                    da[j] = dh[j] * (1.0 - h[j] * h[j]);
                }
                grads[0].add_outer(1.0, &da, &trace.xs[t]);
                grads[1].add_outer(1.0, &da, hprev);
                mats[1].mul_vec_t(&da, &mut tmp);
                dh.copy_from_slice(&tmp);
            }
        }
        (TraceDetail::Gac { i, f }, Arch::Gac) => {
            for t in (0..steps).rev() {
                let h = &trace.hs[t];
                let hprev: &[f64] = if t == 0 { &zero } else { &trace.hs[t - 1] };
                let (it, ft) = (&i[t], &f[t]);
                let x = &trace.xs[t];
                let mut du = vec![0.0; d];
                let mut di = vec![0.0; d];
                let mut df = vec![0.0; d];
                for j in 0..d {
                    du[j] = dh[j] * (1.0 - h[j] * h[j]);
                    di[j] = du[j] * x[j] * it[j] * (1.0 - it[j]);
                    df[j] = du[j] * hprev[j] * ft[j] * (1.0 - ft[j]);
                }
                grads[0].add_outer(1.0, &di, x);
                grads[1].add_outer(1.0, &di, hprev);
                grads[2].add_outer(1.0, &df, x);
                grads[3].add_outer(1.0, &df, hprev);
                let mut dh_next = vec![0.0; d];
                for j in 0..d {
                    dh_next[j] = du[j] * ft[j];
                }
                mats[1].mul_vec_t(&di, &mut tmp);
                add_assign(&mut dh_next, &tmp);
                mats[3].mul_vec_t(&df, &mut tmp);
                add_assign(&mut dh_next, &tmp);
                dh = dh_next;
            }
        }
        (
            TraceDetail::Lstm {
                i,
                f,
                o,
                g,
                c,
                tanh_c,
            },
            Arch::Lstm,
        ) => {
            let mut dc = vec![0.0; d];
            for t in (0..steps).rev() {
                let hprev: &[f64] = if t == 0 { &zero } else { &trace.hs[t - 1] };
                let cprev: &Vec<f64> = if t == 0 { &zero } else { &c[t - 1] };
                let (it, ft, ot, gt, tct) = (&i[t], &f[t], &o[t], &g[t], &tanh_c[t]);
                let x = &trace.xs[t];
                let mut do_ = vec![0.0; d];
                let mut di = vec![0.0; d];
                let mut df = vec![0.0; d];
                let mut dg = vec![0.0; d];
                for j in 0..d {
                    do_[j] = dh[j] * tct[j] * ot[j] * (1.0 - ot[j]);
                    dc[j] += dh[j] * ot[j] * (1.0 - tct[j] * tct[j]);
                    df[j] = dc[j] * cprev[j] * ft[j] * (1.0 - ft[j]);
                    di[j] = dc[j] * gt[j] * it[j] * (1.0 - it[j]);
                    dg[j] = dc[j] * it[j] * (1.0 - gt[j] * gt[j]);
                }
                grads[0].add_outer(1.0, &di, x);
                grads[1].add_outer(1.0, &di, hprev);
                grads[2].add_outer(1.0, &df, x);
                grads[3].add_outer(1.0, &df, hprev);
                grads[4].add_outer(1.0, &do_, x);
                grads[5].add_outer(1.0, &do_, hprev);
                grads[6].add_outer(1.0, &dg, x);
                grads[7].add_outer(1.0, &dg, hprev);
                let mut dh_next = vec![0.0; d];
                mats[1].mul_vec_t(&di, &mut tmp);
                add_assign(&mut dh_next, &tmp);
                mats[3].mul_vec_t(&df, &mut tmp);
                add_assign(&mut dh_next, &tmp);
                mats[5].mul_vec_t(&do_, &mut tmp);
                add_assign(&mut dh_next, &tmp);
                mats[7].mul_vec_t(&dg, &mut tmp);
                add_assign(&mut dh_next, &tmp);
                for j in 0..d {
                    dc[j] *= ft[j];
                }
                dh = dh_next;
            }
        }
        (TraceDetail::Gru { z, r, n, hr }, Arch::Gru) => {
            for t in (0..steps).rev() {
                let hprev: &[f64] = if t == 0 { &zero } else { &trace.hs[t - 1] };
                let (zt, rt, nt, hrt) = (&z[t], &r[t], &n[t], &hr[t]);
                let x = &trace.xs[t];
                let mut dn = vec![0.0; d];
                let mut dz = vec![0.0; d];
                for j in 0..d {
                    dn[j] = dh[j] * (1.0 - zt[j]) * (1.0 - nt[j] * nt[j]);
                    dz[j] = dh[j] * (hprev[j] - nt[j]) * zt[j] * (1.0 - zt[j]);
                }
                // v = Wnhᵀ · dn is the gradient with respect to r ⊙ h_{t−1}.
                let mut v = vec![0.0; d];
                mats[5].mul_vec_t(&dn, &mut v);
                let mut dr = vec![0.0; d];
                for j in 0..d {
                    dr[j] = v[j] * hprev[j] * rt[j] * (1.0 - rt[j]);
                }
                grads[0].add_outer(1.0, &dz, x);
                grads[1].add_outer(1.0, &dz, hprev);
                grads[2].add_outer(1.0, &dr, x);
                grads[3].add_outer(1.0, &dr, hprev);
                grads[4].add_outer(1.0, &dn, x);
                grads[5].add_outer(1.0, &dn, hrt);
                let mut dh_next = vec![0.0; d];
                for j in 0..d {
                    dh_next[j] = dh[j] * zt[j] + v[j] * rt[j];
                }
                mats[1].mul_vec_t(&dz, &mut tmp);
                add_assign(&mut dh_next, &tmp);
                mats[3].mul_vec_t(&dr, &mut tmp);
                add_assign(&mut dh_next, &tmp);
                dh = dh_next;
            }
        }
        _ => {
            return Err(Error::Model(format!(
                "trace detail does not match architecture {arch}"
            )))
        }
    }
    Ok(ParamGrads {
        mats: grads,
        nocomp_row: None,
    })
}

pub fn backprop(
    model: &EncoderModel,
    trace: &EncodeTrace,
    grad_hp: &[f64],
) -> Result<ParamGrads> {
    backprop_with(model.params.arch, &model.params.mats, trace, grad_hp)
}

/// One gated step of a trace: the word consumed, the words consumed before
/// it, and the mean activation of each gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMoment {
    pub word: String,
    pub scanned: String,
    /// (gate name, mean activation): input/forget for gac and lstm,
    /// update/reset for gru.
    pub gates: Vec<(&'static str, f64)>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-step gate statistics of a gated trace.
pub fn gate_activations(trace: &EncodeTrace) -> Result<Vec<GateMoment>> {
    let per_step: Vec<Vec<(&'static str, f64)>> = match &trace.detail {
        TraceDetail::Gac { i, f } | TraceDetail::Lstm { i, f, .. } => i
            .iter()
            .zip(f)
            .map(|(iv, fv)| vec![("input", mean(iv)), ("forget", mean(fv))])
            .collect(),
        TraceDetail::Gru { z, r, .. } => z
            .iter()
            .zip(r)
            .map(|(zv, rv)| vec![("update", mean(zv)), ("reset", mean(rv))])
            .collect(),
        TraceDetail::None => return Err(Error::NoGates(trace.arch.name())),
    };
    Ok(per_step
        .into_iter()
        .enumerate()
        .map(|(t, gates)| GateMoment {
            word: trace.tokens[trace.steps[t]].clone(),
            scanned: trace.scanned(t),
            gates,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ModelFile {
    format: String,
    arch: String,
    d: usize,
    order: String,
    matrices: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patterns: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<Vec<Vec<f64>>>,
}

fn mat_to_nested(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows).map(|i| m.row(i).to_vec()).collect()
}

fn nested_to_mat(v: &[Vec<f64>], rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows {
        return Err(Error::Model(format!(
            "matrix has {} rows, expected {rows}",
            v.len()
        )));
    }
    let mut m = Mat::zeros(rows, cols);
    for (i, row) in v.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Model(format!(
                "row {i} has {} columns, expected {cols}",
                row.len()
            )));
        }
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Model(format!("non-finite entry at ({i},{j})")));
            }
            m.set(i, j, x);
        }
    }
    Ok(m)
}

pub(crate) fn model_to_file(model: &EncoderModel) -> ModelFile {
    let p = &model.params;
    let matrices = p
        .arch
        .matrix_names()
        .iter()
        .zip(&p.mats)
        .map(|(name, m)| (name.to_string(), mat_to_nested(m)))
        .collect();
    ModelFile {
        format: MODEL_FORMAT.to_string(),
        arch: p.arch.name().to_string(),
        d: p.d,
        order: model.order.name().to_string(),
        matrices,
        patterns: p
            .rows
            .as_ref()
            .map(|r| r.iter().map(|(k, &v)| (k.clone(), v)).collect()),
        table: p.table.as_ref().map(mat_to_nested),
    }
}

/// Writes the model as a JSON document: `arch`, `d`, `order`, named row-major
/// matrices, plus the pattern table for nocomp.
pub fn save_model<P: AsRef<Path>>(model: &EncoderModel, path: P) -> Result<()> {
    let writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(writer, &model_to_file(model))
        .map_err(|e| Error::Model(format!("cannot write model: {e}")))?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<EncoderModel> {
    let reader = BufReader::new(File::open(path)?);
    let file: ModelFile = serde_json::from_reader(reader)
        .map_err(|e| Error::Model(format!("cannot parse model: {e}")))?;
    model_from_file(file)
}

pub(crate) fn model_from_file(file: ModelFile) -> Result<EncoderModel> {
    if file.format != MODEL_FORMAT {
        return Err(Error::Model(format!(
            "unsupported model format `{}`",
            file.format
        )));
    }
    let arch = Arch::parse(&file.arch)
        .ok_or_else(|| Error::Model(format!("unknown architecture `{}`", file.arch)))?;
    let order = ComposeOrder::parse(&file.order)
        .ok_or_else(|| Error::Model(format!("unknown order `{}`", file.order)))?;
    let d = file.d;
    if d < 1 {
        return Err(Error::Model("model dimension must be >= 1".into()));
    }
    let names = arch.matrix_names();
    if file.matrices.len() != names.len() {
        return Err(Error::Model(format!(
            "{arch} expects matrices {names:?}, found {:?}",
            file.matrices.keys().collect::<Vec<_>>()
        )));
    }
    let mut mats = Vec::with_capacity(names.len());
    for name in names {
        let nested = file
            .matrices
            .get(*name)
            .ok_or_else(|| Error::Model(format!("missing matrix `{name}`")))?;
        mats.push(nested_to_mat(nested, d, d)?);
    }
    let (table, rows) = if arch == Arch::NoComp {
        let nested = file
            .table
            .as_ref()
            .ok_or_else(|| Error::Model("nocomp model lacks its table".into()))?;
        let patterns = file
            .patterns
            .as_ref()
            .ok_or_else(|| Error::Model("nocomp model lacks its pattern map".into()))?;
        let table = nested_to_mat(nested, nested.len(), d)?;
        if patterns.len() != table.rows {
            return Err(Error::Model(format!(
                "pattern map has {} entries for {} table rows",
                patterns.len(),
                table.rows
            )));
        }
        let mut rows_map = HashMap::with_capacity(patterns.len());
        for (surface, &row) in patterns {
            if row >= table.rows {
                return Err(Error::Model(format!(
                    "pattern `{surface}` points to row {row} of {}",
                    table.rows
                )));
            }
            rows_map.insert(surface.clone(), row);
        }
        (Some(table), Some(rows_map))
    } else {
        (None, None)
    };
    Ok(EncoderModel {
        order,
        params: EncoderParams {
            arch,
            d,
            mats,
            table,
            rows,
        },
    })
}
