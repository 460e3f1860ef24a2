//! Monte-Carlo mixture of outcome densities over sampled treatments.
//!
//! For every subject `i` with outcome-net latent inputs `zo_i` and sampled
//! treatments `x_i1..x_iM` this computes
//! `log (1/M) sum_m N(y_i; mu(zo_i, x_im), s2(zo_i, x_im))`
//! together with gradients of a weighted sum over subjects.
//!
//! Two engines are provided. `Dense` runs the network on all `B * M` rows.
//! `Sweep` exploits that, with a piecewise-linear activation and `zo_i`
//! fixed, every hidden unit is a piecewise-affine function of the scalar
//! treatment. Samples are sorted, and the network is evaluated once per
//! linear region instead of once per sample; heads and densities are then
//! evaluated per sample in closed form. Both engines compute the same
//! quantity up to rounding.

use serde::{Deserialize, Serialize};

use super::density::{gaussian_log_density, gaussian_log_density_grad, log_sum_exp};
use crate::error::{Error, Result};
use crate::ndcompute::{HeadTransform, Network, SOFTPLUS_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IvEngine {
    Dense,
    #[default]
    Sweep,
}

/// Gradient sinks for [`outcome_mixture`]; every buffer is accumulated into.
#[derive(Default)]
pub(crate) struct MixtureGrads<'a> {
    pub params: Option<&'a mut [f64]>,
    /// `batch x q` gradient with respect to the latent part of the input.
    pub zo: Option<&'a mut [f64]>,
    /// `batch x M` gradient with respect to each sampled treatment.
    pub xs: Option<&'a mut [f64]>,
}

impl MixtureGrads<'_> {
    fn any(&self) -> bool {
        self.params.is_some() || self.zo.is_some() || self.xs.is_some()
    }
}

struct Heads {
    mean: usize,
    var: usize,
    mean_t: HeadTransform,
    var_t: HeadTransform,
}

fn heads(net: &Network) -> Result<Heads> {
    let spec = &net.spec;
    let (Some(mean), Some(var)) = (spec.head_index("mean"), spec.head_index("var")) else {
        return Err(Error::InvalidInput("outcome network needs 'mean' and 'var' heads".into()));
    };
    if spec.heads[mean].dim != 1 || spec.heads[var].dim != 1 {
        return Err(Error::InvalidInput("outcome heads must be scalar".into()));
    }
    Ok(Heads {
        mean,
        var,
        mean_t: spec.heads[mean].transform,
        var_t: spec.heads[var].transform,
    })
}

/// Per-subject log mixture density; see the module docs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn outcome_mixture(
    engine: IvEngine,
    net: &Network,
    zo: &[f64],
    y: &[f64],
    xs: &[f64],
    batch: usize,
    mc: usize,
    weights: &[f64],
    grads: MixtureGrads<'_>,
) -> Result<Vec<f64>> {
    let q = net.input_dim().checked_sub(1).ok_or_else(|| {
        Error::InvalidInput("outcome network needs a treatment input".into())
    })?;
    if mc == 0 {
        return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
    }
    if zo.len() != batch * q {
        return Err(Error::dims("outcome latent inputs", batch * q, zo.len()));
    }
    if xs.len() != batch * mc || y.len() != batch || weights.len() != batch {
        return Err(Error::dims("sampled treatments", batch * mc, xs.len()));
    }
    let h = heads(net)?;
    match engine {
        IvEngine::Dense => dense(net, &h, q, zo, y, xs, batch, mc, weights, grads),
        IvEngine::Sweep => sweep(net, &h, q, zo, y, xs, batch, mc, weights, grads),
    }
}

fn finish_subject(lp: &[f64], subject: usize) -> Result<f64> {
    if let Some(m) = lp.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node: format!("outcome log density of subject {subject}, sample {m}"),
        });
    }
    Ok(log_sum_exp(lp))
}

#[allow(clippy::too_many_arguments)]
fn dense(
    net: &Network,
    h: &Heads,
    q: usize,
    zo: &[f64],
    y: &[f64],
    xs: &[f64],
    batch: usize,
    mc: usize,
    weights: &[f64],
    mut grads: MixtureGrads<'_>,
) -> Result<Vec<f64>> {
    let width = q + 1;
    let rows = batch * mc;
    let mut inputs = vec![0.0; rows * width];
    for i in 0..batch {
        for m in 0..mc {
            let r = &mut inputs[(i * mc + m) * width..(i * mc + m + 1) * width];
            r[..q].copy_from_slice(&zo[i * q..(i + 1) * q]);
            r[q] = xs[i * mc + m];
        }
    }
    let cache = net.forward_batch(&inputs, batch * mc)?;
    let (mean, var) = (cache.head(h.mean), cache.head(h.var));
    let mut lp = vec![0.0; rows];
    for k in 0..rows {
        lp[k] = gaussian_log_density(y[k / mc], mean[k], var[k]);
    }
    let ln_m = (mc as f64).ln();
    let mut out = Vec::with_capacity(batch);
    let mut lse = Vec::with_capacity(batch);
    for i in 0..batch {
        let s = finish_subject(&lp[i * mc..(i + 1) * mc], i)?;
        lse.push(s);
        out.push(s - ln_m);
    }
    if !grads.any() {
        return Ok(out);
    }
    let mut g_mean = vec![0.0; rows];
    let mut g_var = vec![0.0; rows];
    for k in 0..rows {
        let i = k / mc;
        let r = weights[i] * (lp[k] - lse[i]).exp();
        let (gm, gv) = gaussian_log_density_grad(y[i], mean[k], var[k]);
        g_mean[k] = r * gm;
        g_var[k] = r * gv;
    }
    let mut head_grads: Vec<Option<&[f64]>> = vec![None; net.spec.heads.len()];
    head_grads[h.mean] = Some(&g_mean);
    head_grads[h.var] = Some(&g_var);
    let want_input = grads.zo.is_some() || grads.xs.is_some();
    let mut d_in = vec![0.0; if want_input { rows * width } else { 0 }];
    net.backward_batch(
        &cache,
        &head_grads,
        grads.params.as_deref_mut(),
        want_input.then_some(d_in.as_mut_slice()),
    )?;
    if let Some(gz) = grads.zo.as_deref_mut() {
        for k in 0..rows {
            let i = k / mc;
            for j in 0..q {
                gz[i * q + j] += d_in[k * width + j];
            }
        }
    }
    if let Some(gx) = grads.xs.as_deref_mut() {
        for k in 0..rows {
            gx[k] += d_in[k * width + q];
        }
    }
    Ok(out)
}

/// Transform value and derivative, sharing the exponential for softplus.
#[inline]
fn transform_with_derivative(t: HeadTransform, raw: f64) -> (f64, f64) {
    match t {
        HeadTransform::Softplus => {
            let e = (-raw.abs()).exp();
            let value = raw.max(0.0) + e.ln_1p() + SOFTPLUS_FLOOR;
            let sig = if raw >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            (value, sig)
        }
        other => (other.apply(raw), other.derivative(raw)),
    }
}

/// One affine map of the sweep: a hidden layer, or both heads stacked as a
/// two-row layer (mean first).
struct Affine {
    w: Vec<f64>,
    /// Transposed weights, `in_dim x out_dim`.
    wt: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Affine {
    fn new(w: Vec<f64>, b: Vec<f64>, in_dim: usize, out_dim: usize) -> Self {
        let wt = transpose(&w, out_dim, in_dim);
        Affine {
            w,
            wt,
            b,
            in_dim,
            out_dim,
        }
    }
}

/// Per-depth working memory, reused across regions.
#[derive(Default)]
struct Scratch {
    slope_first: Vec<f64>,
    slope_last: Vec<f64>,
    /// Activation on the first child, split into intercept and slope.
    act_c: Vec<f64>,
    act_d: Vec<f64>,
    /// `(sorted position, unit)` for every unit whose sign changes.
    flips: Vec<(usize, usize)>,
    qc: Vec<f64>,
    qd: Vec<f64>,
    p0: Vec<f64>,
    p1: Vec<f64>,
    /// Running sums captured when a unit flips, `out_dim x next_dim`.
    before0: Vec<f64>,
    before1: Vec<f64>,
    child0: Vec<f64>,
    child1: Vec<f64>,
}

/// Per-sample state of one subject, in sorted order.
struct Samples<'a> {
    x: &'a [f64],
    y: f64,
    weight: f64,
    lse: f64,
    lp: &'a mut [f64],
    mean: &'a mut [f64],
    var: &'a mut [f64],
    dvar: &'a mut [f64],
    x_grad: Option<&'a mut [f64]>,
}

struct Sweep<'a> {
    layers: &'a [Affine],
    activation: crate::ndcompute::Activation,
    mean_t: HeadTransform,
    var_t: HeadTransform,
    /// Gradient buffers per layer (weights, biases); empty when unused.
    gw: Vec<Vec<f64>>,
    gb: Vec<Vec<f64>>,
    backward: bool,
}

impl Sweep<'_> {
    /// Processes samples `lo..hi` on which the pre-activation of hidden layer
    /// `l` is `pc + pd * x`. In the reverse pass, writes the sums over those
    /// samples of the objective's gradient with respect to that
    /// pre-activation, plain into `g0` and times `x` into `g1`.
    #[allow(clippy::too_many_arguments)]
    fn region(
        &mut self,
        l: usize,
        lo: usize,
        hi: usize,
        pc: &[f64],
        pd: &[f64],
        s: &mut Samples<'_>,
        scratch: &mut [Scratch],
        g0: &mut [f64],
        g1: &mut [f64],
    ) {
        let (sc, deeper) = scratch.split_first_mut().expect("scratch depth");
        let width = pc.len();
        let layers = self.layers;
        let next = &layers[l + 1];
        let nd = next.out_dim;
        let wt = &next.wt;
        let (x_lo, x_hi) = (s.x[lo], s.x[hi - 1]);

        sc.slope_first.clear();
        sc.slope_last.clear();
        sc.act_c.clear();
        sc.act_d.clear();
        sc.flips.clear();
        for k in 0..width {
            let (a, b) = (pc[k], pd[k]);
            let (u, v) = (a + b * x_lo, a + b * x_hi);
            let sf = self.activation.derivative(u);
            sc.slope_first.push(sf);
            sc.slope_last.push(self.activation.derivative(v));
            sc.act_c.push(sf * a);
            sc.act_d.push(sf * b);
            if (u > 0.0) != (v > 0.0) {
                let first = u > 0.0;
                let offset = s.x[lo..hi].partition_point(|&x| (a + b * x > 0.0) == first);
                sc.flips.push((lo + offset, k));
            }
        }
        sc.flips.sort_unstable();

        // Next pre-activation on the first child, then rank-one updates.
        sc.qc.clear();
        sc.qc.extend_from_slice(&next.b);
        sc.qd.clear();
        sc.qd.resize(nd, 0.0);
        for k in 0..width {
            let col = &wt[k * nd..(k + 1) * nd];
            let (c, d) = (sc.act_c[k], sc.act_d[k]);
            for ((qc, qd), w) in sc.qc.iter_mut().zip(sc.qd.iter_mut()).zip(col) {
                *qc += w * c;
                *qd += w * d;
            }
        }
        if self.backward {
            sc.p0.clear();
            sc.p0.resize(nd, 0.0);
            sc.p1.clear();
            sc.p1.resize(nd, 0.0);
            sc.before0.resize(width * nd, 0.0);
            sc.before1.resize(width * nd, 0.0);
            sc.child0.resize(nd, 0.0);
            sc.child1.resize(nd, 0.0);
        }

        let mut start = lo;
        let mut f = 0;
        while start < hi {
            while f < sc.flips.len() && sc.flips[f].0 == start {
                let k = sc.flips[f].1;
                let delta = sc.slope_last[k] - sc.slope_first[k];
                let (dc, dd) = (delta * pc[k], delta * pd[k]);
                let col = &wt[k * nd..(k + 1) * nd];
                for ((qc, qd), w) in sc.qc.iter_mut().zip(sc.qd.iter_mut()).zip(col) {
                    *qc += w * dc;
                    *qd += w * dd;
                }
                if self.backward {
                    sc.before0[k * nd..(k + 1) * nd].copy_from_slice(&sc.p0);
                    sc.before1[k * nd..(k + 1) * nd].copy_from_slice(&sc.p1);
                }
                f += 1;
            }
            let end = if f < sc.flips.len() { sc.flips[f].0 } else { hi };
            if l + 1 == layers.len() - 1 {
                let (qc, qd) = ([sc.qc[0], sc.qc[1]], [sc.qd[0], sc.qd[1]]);
                let (c0, c1) = self.leaf(start, end, qc, qd, s);
                if self.backward {
                    sc.child0[..2].copy_from_slice(&c0);
                    sc.child1[..2].copy_from_slice(&c1);
                }
            } else {
                let (qc, qd) = (std::mem::take(&mut sc.qc), std::mem::take(&mut sc.qd));
                let (mut c0, mut c1) = (std::mem::take(&mut sc.child0), std::mem::take(&mut sc.child1));
                self.region(l + 1, start, end, &qc, &qd, s, deeper, &mut c0, &mut c1);
                sc.qc = qc;
                sc.qd = qd;
                sc.child0 = c0;
                sc.child1 = c1;
            }
            if self.backward {
                for j in 0..nd {
                    sc.p0[j] += sc.child0[j];
                    sc.p1[j] += sc.child1[j];
                }
            }
            start = end;
        }
        if !self.backward {
            return;
        }

        // Each child sees slope_first on units that have not flipped yet and
        // slope_last afterwards, so the sums over children split into the
        // full totals at slope_first plus a correction for every flip.
        let gw = &mut self.gw[l + 1];
        let (p0, p1) = (&sc.p0[..nd], &sc.p1[..nd]);
        let (act_c, act_d) = (&sc.act_c[..width], &sc.act_d[..width]);
        let (g0, g1) = (&mut g0[..width], &mut g1[..width]);
        g0.fill(0.0);
        g1.fill(0.0);
        for j in 0..nd {
            let row = &next.w[j * width..][..width];
            let grow = &mut gw[j * width..][..width];
            let (a, b) = (p0[j], p1[j]);
            for k in 0..width {
                grow[k] += a * act_c[k] + b * act_d[k];
                g0[k] += row[k] * a;
                g1[k] += row[k] * b;
            }
        }
        for k in 0..width {
            g0[k] *= sc.slope_first[k];
            g1[k] *= sc.slope_first[k];
        }
        for &(_, k) in &sc.flips {
            let delta = sc.slope_last[k] - sc.slope_first[k];
            let col = &wt[k * nd..][..nd];
            let (b0, b1) = (&sc.before0[k * nd..][..nd], &sc.before1[k * nd..][..nd]);
            let (c, d) = (delta * pc[k], delta * pd[k]);
            let (mut u0, mut u1) = (0.0, 0.0);
            for j in 0..nd {
                let (r0, r1) = (p0[j] - b0[j], p1[j] - b1[j]);
                gw[j * width + k] += r0 * c + r1 * d;
                u0 += col[j] * r0;
                u1 += col[j] * r1;
            }
            g0[k] += delta * u0;
            g1[k] += delta * u1;
        }
        for (gb, p) in self.gb[l + 1].iter_mut().zip(&sc.p0) {
            *gb += p;
        }
    }

    /// Samples `lo..hi` with raw heads `qc + qd * x`. The forward pass stores
    /// log densities; the reverse pass returns the sums over the samples of
    /// the gradient with respect to the raw heads, plain and times `x`.
    fn leaf(
        &self,
        lo: usize,
        hi: usize,
        qc: [f64; 2],
        qd: [f64; 2],
        s: &mut Samples<'_>,
    ) -> ([f64; 2], [f64; 2]) {
        if !self.backward {
            for t in lo..hi {
                let x = s.x[t];
                let mu = self.mean_t.apply(qc[0] + qd[0] * x);
                let (s2, ds2) = transform_with_derivative(self.var_t, qc[1] + qd[1] * x);
                s.mean[t] = mu;
                s.var[t] = s2;
                s.dvar[t] = ds2;
                s.lp[t] = gaussian_log_density(s.y, mu, s2);
            }
            return ([0.0; 2], [0.0; 2]);
        }
        let mean_identity = self.mean_t == HeadTransform::Identity;
        let (mut a0, mut a1, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0);
        for t in lo..hi {
            let x = s.x[t];
            let (gm, gv) = gaussian_log_density_grad(s.y, s.mean[t], s.var[t]);
            let r = s.weight * (s.lp[t] - s.lse).exp();
            let dm = if mean_identity {
                1.0
            } else {
                self.mean_t.derivative(qc[0] + qd[0] * x)
            };
            let um = r * gm * dm;
            let uv = r * gv * s.dvar[t];
            if let Some(gx) = s.x_grad.as_deref_mut() {
                gx[t] += um * qd[0] + uv * qd[1];
            }
            a0 += um;
            a1 += um * x;
            b0 += uv;
            b1 += uv * x;
        }
        ([a0, b0], [a1, b1])
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    net: &Network,
    h: &Heads,
    q: usize,
    zo: &[f64],
    y: &[f64],
    xs: &[f64],
    batch: usize,
    mc: usize,
    weights: &[f64],
    mut grads: MixtureGrads<'_>,
) -> Result<Vec<f64>> {
    let spec = &net.spec;
    let n_hidden = spec.hidden_widths.len();
    let mut layers: Vec<Affine> = (0..n_hidden)
        .map(|l| {
            let shape = net.params.layers[l];
            Affine::new(
                net.params.weight(l).to_vec(),
                net.params.bias(l).to_vec(),
                shape.in_dim,
                shape.out_dim,
            )
        })
        .collect();
    let (lm, lv) = (n_hidden + h.mean, n_hidden + h.var);
    let trunk = spec.trunk_width();
    layers.push(Affine::new(
        [net.params.weight(lm), net.params.weight(lv)].concat(),
        vec![net.params.bias(lm)[0], net.params.bias(lv)[0]],
        trunk,
        2,
    ));
    let want_params = grads.params.is_some();
    let want_back = grads.any();
    let mut sw = Sweep {
        gw: layers
            .iter()
            .map(|a| vec![0.0; if want_back { a.w.len() } else { 0 }])
            .collect(),
        gb: layers
            .iter()
            .map(|a| vec![0.0; if want_back { a.b.len() } else { 0 }])
            .collect(),
        layers: &layers,
        activation: spec.activation,
        mean_t: h.mean_t,
        var_t: h.var_t,
        backward: false,
    };
    let mut scratch: Vec<Scratch> = (0..n_hidden.max(1)).map(|_| Scratch::default()).collect();

    let first = &layers[0];
    let (w0, b0, in0, out0) = (&first.w, &first.b, first.in_dim, first.out_dim);
    let ln_m = (mc as f64).ln();
    let mut out = Vec::with_capacity(batch);

    let mut sx = vec![0.0; mc];
    let mut order: Vec<usize> = Vec::new();
    let mut lp = vec![0.0; mc];
    let mut mean = vec![0.0; mc];
    let mut var = vec![0.0; mc];
    let mut dvar = vec![0.0; mc];
    let mut xg = vec![0.0; if grads.xs.is_some() { mc } else { 0 }];
    let mut pc = vec![0.0; out0];
    let mut pd = vec![0.0; out0];
    let mut g0 = vec![0.0; out0];
    let mut g1 = vec![0.0; out0];

    for i in 0..batch {
        let row = &xs[i * mc..(i + 1) * mc];
        if let Some(m) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: format!("sampled treatment {m} of subject {i}"),
            });
        }
        let sorted = row.is_sorted();
        if sorted {
            sx.copy_from_slice(row);
        } else {
            order.clear();
            order.extend(0..mc);
            order.sort_unstable_by(|&a, &b| row[a].total_cmp(&row[b]));
            for (t, &m) in order.iter().enumerate() {
                sx[t] = row[m];
            }
        }
        let z = &zo[i * q..(i + 1) * q];
        // First affine map at [z, 0] and its slope along the treatment input.
        for j in 0..out0 {
            let wr = &w0[j * in0..(j + 1) * in0];
            pc[j] = b0[j] + wr[..q].iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            pd[j] = wr[q];
        }
        if let Some(k) = pc.iter().chain(&pd).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: format!("first layer of the outcome network (entry {k})"),
            });
        }

        let mut samples = Samples {
            x: &sx,
            y: y[i],
            weight: weights[i],
            lse: 0.0,
            lp: &mut lp,
            mean: &mut mean,
            var: &mut var,
            dvar: &mut dvar,
            x_grad: None,
        };
        let mut run = |sw: &mut Sweep<'_>, samples: &mut Samples<'_>, g0: &mut [f64], g1: &mut [f64]| {
            if n_hidden == 0 {
                let (a, b) = sw.leaf(0, mc, [pc[0], pc[1]], [pd[0], pd[1]], samples);
                g0.copy_from_slice(&a);
                g1.copy_from_slice(&b);
            } else {
                sw.region(0, 0, mc, &pc, &pd, samples, &mut scratch, g0, g1);
            }
        };
        sw.backward = false;
        run(&mut sw, &mut samples, &mut g0, &mut g1);
        let lse = finish_subject(samples.lp, i)?;
        out.push(lse - ln_m);
        if !want_back {
            continue;
        }
        samples.lse = lse;
        if grads.xs.is_some() {
            xg.iter_mut().for_each(|v| *v = 0.0);
            samples.x_grad = Some(&mut xg);
        }
        sw.backward = true;
        run(&mut sw, &mut samples, &mut g0, &mut g1);

        // Gradient of the first affine map at input [z, x].
        let gw = &mut sw.gw[0];
        for j in 0..out0 {
            let gr = &mut gw[j * in0..(j + 1) * in0];
            for (g, zk) in gr[..q].iter_mut().zip(z) {
                *g += g0[j] * zk;
            }
            gr[q] += g1[j];
            sw.gb[0][j] += g0[j];
        }
        if let Some(gz) = grads.zo.as_deref_mut() {
            let dst = &mut gz[i * q..(i + 1) * q];
            for j in 0..out0 {
                let wr = &w0[j * in0..(j + 1) * in0];
                for (d, w) in dst.iter_mut().zip(&wr[..q]) {
                    *d += g0[j] * w;
                }
            }
        }
        if let Some(gx) = grads.xs.as_deref_mut() {
            let dst = &mut gx[i * mc..(i + 1) * mc];
            if sorted {
                for (d, g) in dst.iter_mut().zip(&xg) {
                    *d += g;
                }
            } else {
                for (t, &m) in order.iter().enumerate() {
                    dst[m] += xg[t];
                }
            }
        }
    }

    if want_params {
        let pg = grads.params.as_deref_mut().expect("parameter gradient");
        for l in 0..n_hidden {
            let shape = net.params.layers[l];
            add(&mut pg[shape.weight_range()], &sw.gw[l]);
            add(&mut pg[shape.bias_range()], &sw.gb[l]);
        }
        let (gw, gb) = (&sw.gw[n_hidden], &sw.gb[n_hidden]);
        for (col, layer) in [lm, lv].into_iter().enumerate() {
            let shape = net.params.layers[layer];
            add(&mut pg[shape.weight_range()], &gw[col * trunk..(col + 1) * trunk]);
            pg[shape.bias_range()][0] += gb[col];
        }
    }
    Ok(out)
}

/// Transposes a `rows x cols` row-major matrix.
fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
