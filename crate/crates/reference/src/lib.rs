//! Straight-line `f64` references: the decoder over exported weights, plus
//! the loss terms and metric definitions in their own modules.
//!
//! Every operator is a direct loop over pixels: no matrix factorization, no
//! autograd, no shared code with the tensor implementation. Used only as an
//! oracle in tests.

pub mod loss;
pub mod metrics;

use std::collections::BTreeMap;

/// `name -> (shape, row-major values)`, as produced by `ParamStore::export_f64`.
pub type Weights = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

/// One image's activation, `(C, H, W)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "map data length");
        Self { c, h, w, data }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    fn zip(&self, other: &Map, f: impl Fn(f64, f64) -> f64) -> Map {
        assert_eq!((self.c, self.h, self.w), (other.c, other.h, other.w), "zip shapes");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Map { data, ..*self }
    }

    pub fn add(&self, other: &Map) -> Map {
        self.zip(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Map) -> Map {
        self.zip(other, |a, b| a * b)
    }

    pub fn relu(&self) -> Map {
        Map { data: self.data.iter().map(|v| v.max(0.0)).collect(), ..*self }
    }

    pub fn cat(&self, other: &Map) -> Map {
        assert_eq!((self.h, self.w), (other.h, other.w), "cat shapes");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Map { c: self.c + other.c, h: self.h, w: self.w, data }
    }
}

fn get<'a>(weights: &'a Weights, name: &str) -> &'a [f64] {
    &weights.get(name).unwrap_or_else(|| panic!("missing weight {name}")).1
}

fn shape<'a>(weights: &'a Weights, name: &str) -> &'a [usize] {
    &weights.get(name).unwrap_or_else(|| panic!("missing weight {name}")).0
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct convolution, weight `(out, in, k, k)`, zero padding.
pub fn conv2d(x: &Map, weight: &[f64], wshape: &[usize], bias: Option<&[f64]>, stride: usize, pad: usize) -> Map {
    let (co, ci, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    assert_eq!(ci, x.c, "conv input channels");
    let oh = (x.h + 2 * pad - kh) / stride + 1;
    let ow = (x.w + 2 * pad - kw) / stride + 1;
    let mut out = Map::zeros(co, oh, ow);
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for i in 0..ci {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let sy = (y * stride + dy) as isize - pad as isize;
                            let sx = (xx * stride + dx) as isize - pad as isize;
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            acc += weight[((o * ci + i) * kh + dy) * kw + dx] * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, xx, acc);
            }
        }
    }
    out
}

fn conv_named(weights: &Weights, prefix: &str, x: &Map, pad: usize) -> Map {
    let wname = format!("{prefix}.weight");
    let bname = format!("{prefix}.bias");
    let bias = weights.get(&bname).map(|(_, v)| v.as_slice());
    conv2d(x, get(weights, &wname), shape(weights, &wname), bias, 1, pad)
}

/// Inference batch norm with eps 1e-5.
pub fn batch_norm(weights: &Weights, prefix: &str, x: &Map) -> Map {
    let g = get(weights, &format!("{prefix}.weight"));
    let b = get(weights, &format!("{prefix}.bias"));
    let m = get(weights, &format!("{prefix}.running_mean"));
    let v = get(weights, &format!("{prefix}.running_var"));
    let mut out = x.clone();
    for c in 0..x.c {
        let scale = g[c] / (v[c] + 1e-5).sqrt();
        for i in 0..x.h * x.w {
            let idx = c * x.h * x.w + i;
            out.data[idx] = (x.data[idx] - m[c]) * scale + b[c];
        }
    }
    out
}

/// conv (no bias) -> BN -> ReLU.
pub fn conv_unit(weights: &Weights, prefix: &str, x: &Map) -> Map {
    let k = shape(weights, &format!("{prefix}.conv.weight"))[2];
    let y = conv_named(weights, &format!("{prefix}.conv"), x, k / 2);
    batch_norm(weights, &format!("{prefix}.bn"), &y).relu()
}

/// Bilinear resampling with half-pixel centers (`align_corners = false`).
pub fn bilinear(x: &Map, oh: usize, ow: usize) -> Map {
    let source = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = if i0 + 1 < n_in { i0 + 1 } else { i0 };
        (i0, i1, s - i0 as f64)
    };
    let mut out = Map::zeros(x.c, oh, ow);
    for c in 0..x.c {
        for y in 0..oh {
            let (y0, y1, ly) = source(y, x.h, oh);
            for xx in 0..ow {
                let (x0, x1, lx) = source(xx, x.w, ow);
                let v = (1.0 - ly) * ((1.0 - lx) * x.at(c, y0, x0) + lx * x.at(c, y0, x1))
                    + ly * ((1.0 - lx) * x.at(c, y1, x0) + lx * x.at(c, y1, x1));
                out.set(c, y, xx, v);
            }
        }
    }
    out
}

/// Adaptive average pooling: cell `o` covers `floor(o*n/m) .. ceil((o+1)*n/m)`.
pub fn adaptive_avg_pool(x: &Map, oh: usize, ow: usize) -> Map {
    let mut out = Map::zeros(x.c, oh, ow);
    for c in 0..x.c {
        for oy in 0..oh {
            let (y0, y1) = (oy * x.h / oh, ((oy + 1) * x.h).div_ceil(oh));
            for ox in 0..ow {
                let (x0, x1) = (ox * x.w / ow, ((ox + 1) * x.w).div_ceil(ow));
                let mut sum = 0.0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        sum += x.at(c, y, xx);
                    }
                }
                out.set(c, oy, ox, sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Returns `(X34, T1)`.
pub fn cfm(weights: &Weights, x2: &Map, x3: &Map, x4: &Map) -> (Map, Map) {
    let unit = |i: usize, x: &Map| conv_unit(weights, &format!("cfm.f{i}"), x);
    let up4_3 = bilinear(x4, x3.h, x3.w);
    let x34 = unit(3, &unit(1, &up4_3).mul(x3).cat(&unit(2, &up4_3)));
    let a = unit(4, &bilinear(x4, x2.h, x2.w));
    let b = unit(5, &bilinear(x3, x2.h, x2.w));
    let ctx = unit(6, &bilinear(&x34, x2.h, x2.w));
    let t1 = unit(8, &unit(7, &a.mul(&b).mul(x2).cat(&ctx)));
    (x34, t1)
}

/// Channel gate, one value per channel.
pub fn channel_gate(weights: &Weights, x: &Map) -> Vec<f64> {
    let fc1 = get(weights, "cim.channel.fc1.weight");
    let fc2 = get(weights, "cim.channel.fc2.weight");
    let hidden = shape(weights, "cim.channel.fc1.weight")[0];
    let n = x.h * x.w;
    let mut maxv = vec![f64::NEG_INFINITY; x.c];
    let mut mean = vec![0.0; x.c];
    for c in 0..x.c {
        for i in 0..n {
            let v = x.data[c * n + i];
            maxv[c] = maxv[c].max(v);
            mean[c] += v / n as f64;
        }
    }
    let mlp = |v: &[f64]| -> Vec<f64> {
        let h: Vec<f64> = (0..hidden)
            .map(|j| (0..x.c).map(|c| fc1[j * x.c + c] * v[c]).sum::<f64>().max(0.0))
            .collect();
        (0..x.c).map(|c| (0..hidden).map(|j| fc2[c * hidden + j] * h[j]).sum()).collect()
    };
    let (a, b) = (mlp(&maxv), mlp(&mean));
    a.iter().zip(&b).map(|(p, q)| sigmoid(p + q)).collect()
}

/// Spatial gate `(1, H, W)`.
pub fn spatial_gate(weights: &Weights, x: &Map) -> Map {
    let mut pooled = Map::zeros(2, x.h, x.w);
    for y in 0..x.h {
        for xx in 0..x.w {
            let vals: Vec<f64> = (0..x.c).map(|c| x.at(c, y, xx)).collect();
            pooled.set(0, y, xx, vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            pooled.set(1, y, xx, vals.iter().sum::<f64>() / x.c as f64);
        }
    }
    let logits = conv2d(&pooled, get(weights, "cim.spatial.conv.weight"), &[1, 2, 7, 7], None, 1, 3);
    Map { data: logits.data.into_iter().map(sigmoid).collect(), ..logits }
}

/// T2 = SA(CA(X1)).
pub fn cim(weights: &Weights, x1: &Map) -> Map {
    let gate = channel_gate(weights, x1);
    let mut xc = x1.clone();
    for c in 0..x1.c {
        for i in 0..x1.h * x1.w {
            xc.data[c * x1.h * x1.w + i] *= gate[c];
        }
    }
    let s = spatial_gate(weights, &xc);
    let mut out = xc.clone();
    for c in 0..xc.c {
        for i in 0..xc.h * xc.w {
            out.data[c * xc.h * xc.w + i] *= s.data[i];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reasoning {
    Gcn,
    Conv,
    Identity,
}

/// Intermediate SAM values. `v`, `g` are node-major `[node][state]`,
/// `f` is `[node][position]`.
#[derive(Debug, Clone)]
pub struct SamSteps {
    pub q: Map,
    pub k: Map,
    pub t2_attention: Map,
    pub v: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub y: Map,
    pub z: Map,
}

pub fn sam(weights: &Weights, t1: &Map, t2: &Map, pool: usize, nodes: usize, reasoning: Reasoning) -> SamSteps {
    let q = conv_named(weights, "sam.theta", t1, 0);
    let k = conv_named(weights, "sam.phi", t1, 0);
    let s = q.c;
    let (h, w) = (t1.h, t1.w);
    let p = h * w;

    let g_map = bilinear(&conv_unit(weights, "sam.wg", t2), h, w);
    let mut att = Map::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let logits: Vec<f64> = (0..g_map.c).map(|c| g_map.at(c, y, x)).collect();
            att.set(0, y, x, softmax(&logits)[1]);
        }
    }

    let mut weighted = k.clone();
    for c in 0..s {
        for i in 0..p {
            weighted.data[c * p + i] *= att.data[i];
        }
    }
    let pooled = adaptive_avg_pool(&weighted, pool, pool);
    let off = (pool - nodes) / 2;
    let mut v = Vec::new();
    for ny in 0..nodes {
        for nx in 0..nodes {
            v.push((0..s).map(|c| pooled.at(c, off + ny, off + nx)).collect::<Vec<f64>>());
        }
    }

    let f: Vec<Vec<f64>> = v
        .iter()
        .map(|vn| {
            let logits: Vec<f64> = (0..p).map(|i| (0..s).map(|c| vn[c] * k.data[c * p + i]).sum()).collect();
            softmax(&logits)
        })
        .collect();

    let n = nodes * nodes;
    let states: Vec<Vec<f64>> = f
        .iter()
        .map(|fr| (0..s).map(|c| (0..p).map(|i| fr[i] * q.data[c * p + i]).sum()).collect())
        .collect();

    let g = match reasoning {
        Reasoning::Identity => states.clone(),
        Reasoning::Conv => {
            let wt = get(weights, "sam.node_conv.weight");
            let b = get(weights, "sam.node_conv.bias");
            states
                .iter()
                .map(|x| (0..s).map(|o| b[o] + (0..s).map(|i| wt[o * s + i] * x[i]).sum::<f64>()).collect())
                .collect()
        }
        Reasoning::Gcn => {
            let a = get(weights, "sam.gcn.adjacency.weight");
            let ab = get(weights, "sam.gcn.adjacency.bias");
            let ws = get(weights, "sam.gcn.state.weight");
            let hmat: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..s)
                        .map(|c| ab[i] + (0..n).map(|j| a[i * n + j] * states[j][c]).sum::<f64>() - states[i][c])
                        .collect()
                })
                .collect();
            hmat.iter()
                .map(|hr| (0..s).map(|o| (0..s).map(|i| ws[o * s + i] * hr[i]).sum::<f64>().max(0.0)).collect())
                .collect()
        }
    };

    let mut y = Map::zeros(s, h, w);
    for c in 0..s {
        for i in 0..p {
            y.data[c * p + i] = (0..n).map(|j| f[j][i] * g[j][c]).sum();
        }
    }
    let z = t1.add(&conv_named(weights, "sam.wz", &y, 0));
    SamSteps { q, k, t2_attention: att, v, f, g, y, z }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wiring {
    Full,
    NoCfm,
    NoCim,
    NoSam,
    Reasoning(Reasoning),
}

#[derive(Debug, Clone)]
pub struct DecoderOutputs {
    pub reduced: [Map; 3],
    pub t1: Map,
    pub t2: Map,
    pub z: Map,
    pub p1: Map,
    pub p2: Map,
}

/// Decoder from encoder features `x1..x4` to logits at `out_h x out_w`.
pub fn decoder(
    weights: &Weights,
    features: [&Map; 4],
    out: (usize, usize),
    pool: usize,
    nodes: usize,
    wiring: Wiring,
) -> DecoderOutputs {
    let [x1, x2, x3, x4] = features;
    let r2 = conv_unit(weights, "reduce.x2", x2);
    let r3 = conv_unit(weights, "reduce.x3", x3);
    let r4 = conv_unit(weights, "reduce.x4", x4);
    let t1 = if wiring == Wiring::NoCfm {
        r2.add(&bilinear(&r3, r2.h, r2.w)).add(&bilinear(&r4, r2.h, r2.w))
    } else {
        cfm(weights, &r2, &r3, &r4).1
    };
    let t2 = if wiring == Wiring::NoCim { x1.clone() } else { cim(weights, x1) };
    let z = match wiring {
        Wiring::NoSam => t1.add(&bilinear(&conv_unit(weights, "fuse.t2_reduce", &t2), t1.h, t1.w)),
        Wiring::Reasoning(r) => sam(weights, &t1, &t2, pool, nodes, r).z,
        _ => sam(weights, &t1, &t2, pool, nodes, Reasoning::Gcn).z,
    };
    let p1 = bilinear(&conv_named(weights, "head.p1", &t1, 0), out.0, out.1);
    let p2 = bilinear(&conv_named(weights, "head.p2", &z, 0), out.0, out.1);
    DecoderOutputs { reduced: [r2, r3, r4], t1, t2, z, p1, p2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_identity_and_constant() {
        let x = Map::from_vec(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(bilinear(&x, 2, 3), x);
        let c = Map::from_vec(1, 2, 2, vec![7.0; 4]);
        assert!(bilinear(&c, 5, 3).data.iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn bilinear_doubling_by_hand() {
        let x = Map::from_vec(1, 1, 2, vec![0.0, 4.0]);
        let y = bilinear(&x, 1, 4);
        assert_eq!(y.data, vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn adaptive_pool_uneven() {
        let x = Map::from_vec(1, 1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = adaptive_avg_pool(&x, 1, 3);
        assert_eq!(y.data, vec![1.5, 3.0, 4.5]);
    }

    #[test]
    fn conv_padding() {
        let x = Map::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let y = conv2d(&x, &[1.0; 9], &[1, 1, 3, 3], Some(&[0.5]), 1, 1);
        assert_eq!(y.data, vec![10.5; 4]);
    }
}
