use serde::{Deserialize, Serialize};

use super::{partition, Flowpipe, Hyperbox, Zonotope};
use crate::linalg::Matrix;
use crate::surrogate::SurrogateNet;
use crate::{Error, Result};

/// Outward padding of every computed bound, relative to the magnitude of the
/// terms that produced it; covers floating-point rounding in both the bound
/// computation and the network's own forward pass.
const ROUNDING_PAD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReachOptions {
    /// Generator count cap as a multiple of the zonotope dimension.
    pub generator_cap_factor: usize,
}

impl Default for ReachOptions {
    fn default() -> Self {
        Self {
            generator_cap_factor: 4,
        }
    }
}

/// Interval image of `b` under `x -> W x + bias`, padded outward, and the
/// per-row magnitude of the summed terms.
fn interval_affine(
    w: &Matrix,
    bias: Option<&[f64]>,
    b: &Hyperbox,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = b.center();
    let r = b.radius();
    let amax: Vec<f64> = b
        .lower()
        .iter()
        .zip(b.upper())
        .map(|(l, u)| l.abs().max(u.abs()))
        .collect();
    let mut lo = Vec::with_capacity(w.rows());
    let mut hi = Vec::with_capacity(w.rows());
    let mut mag = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        let row = w.row(i);
        let bi = bias.map_or(0.0, |b| b[i]);
        let (mut ci, mut ri, mut mi) = (bi, 0.0, bi.abs());
        for j in 0..row.len() {
            ci += row[j] * c[j];
            ri += row[j].abs() * r[j];
            mi += row[j].abs() * amax[j];
        }
        let pad = ROUNDING_PAD * mi;
        lo.push(ci - ri - pad);
        hi.push(ci + ri + pad);
        mag.push(mi);
    }
    (lo, hi, mag)
}

/// Intersection of the padded zonotope hull with the interval image.
fn tighten(
    z: &Zonotope,
    w: &Matrix,
    bias: Option<&[f64]>,
    input: &Hyperbox,
    layer: usize,
) -> Result<Hyperbox> {
    let (ilo, ihi, mag) = interval_affine(w, bias, input);
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !(finite(z.center())
        && z.generators().iter().all(|g| finite(g))
        && finite(&ilo)
        && finite(&ihi))
    {
        return Err(Error::NonFiniteBounds { layer });
    }
    let hull = z.interval_hull();
    let mut lower = Vec::with_capacity(z.dim());
    let mut upper = Vec::with_capacity(z.dim());
    for i in 0..z.dim() {
        let pad = ROUNDING_PAD * (mag[i] + hull.lower()[i].abs().max(hull.upper()[i].abs()));
        let l = (hull.lower()[i] - pad).max(ilo[i]);
        let u = (hull.upper()[i] + pad).min(ihi[i]);
        // both enclose the same set, so they overlap up to rounding
        let (l, u) = if l <= u { (l, u) } else { (ilo[i], ihi[i]) };
        lower.push(l);
        upper.push(u);
    }
    Hyperbox::new(lower, upper).map_err(|_| Error::NonFiniteBounds { layer })
}

struct Propagation {
    zonotope: Zonotope,
    bounds: Hyperbox,
}

fn run(net: &SurrogateNet, part: &Hyperbox, opts: &ReachOptions) -> Result<Propagation> {
    if part.dim() != net.input_dim() {
        return Err(Error::dim(
            "partition dimension",
            net.input_dim(),
            part.dim(),
        ));
    }
    let mut z = Zonotope::from_box(part);
    let mut concrete = part.clone();
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        z = z.affine(&layer.weights, Some(&layer.bias))?;
        let pre = tighten(&z, &layer.weights, Some(&layer.bias), &concrete, l)?;
        if l < last {
            z = z.relu(&pre)?;
            let lower = pre.lower().iter().map(|v| v.max(0.0)).collect();
            let upper = pre.upper().iter().map(|v| v.max(0.0)).collect();
            concrete = Hyperbox::new(lower, upper)?;
            if opts.generator_cap_factor > 0 {
                let cap = (opts.generator_cap_factor * z.dim()).max(z.protected() + z.dim());
                z.reduce_order(cap);
            }
        } else {
            concrete = pre;
        }
    }
    if let Some(w) = net.interp() {
        let (zin, bin) = if net.interp_reads_input() {
            (Zonotope::from_box(part).stack(&z), part.concat(&concrete))
        } else {
            (z, concrete)
        };
        z = zin.affine(w, None)?;
        concrete = tighten(&z, w, None, &bin, net.layers().len())?;
    }
    Ok(Propagation {
        zonotope: z,
        bounds: concrete,
    })
}

/// Zonotope enclosing `forward(s0)` for every `s0` in `part`.
pub fn propagate(net: &SurrogateNet, part: &Hyperbox) -> Result<Zonotope> {
    run(net, part, &ReachOptions::default()).map(|p| p.zonotope)
}

/// Box enclosing `forward(s0)` for every `s0` in `part`: the zonotope hull
/// intersected with concrete interval bounds.
pub fn output_bounds(net: &SurrogateNet, part: &Hyperbox, opts: &ReachOptions) -> Result<Hyperbox> {
    run(net, part, opts).map(|p| p.bounds)
}

pub fn surrogate_flowpipe(net: &SurrogateNet, partitions: &[Hyperbox]) -> Result<Flowpipe> {
    surrogate_flowpipe_with(net, partitions, &ReachOptions::default())
}

/// One part per partition, in partition order: the partition box times the
/// output bounds over it.
pub fn surrogate_flowpipe_with(
    net: &SurrogateNet,
    partitions: &[Hyperbox],
    opts: &ReachOptions,
) -> Result<Flowpipe> {
    let n = net.input_dim();
    if net.output_dim() % n != 0 {
        return Err(Error::invalid(format!(
            "surrogate output width {} is not a multiple of n = {n}",
            net.output_dim()
        )));
    }
    if partitions.is_empty() {
        return Err(Error::invalid("no partitions"));
    }
    let parts = partitions
        .iter()
        .map(|p| Ok(p.concat(&output_bounds(net, p, opts)?)))
        .collect::<Result<Vec<_>>>()?;
    Flowpipe::new(n, net.output_dim() / n, parts)
}

/// Flowpipe over the regular grid `partition(init, splits)`.
///
/// Each cell's output bounds are intersected with those of its ancestors,
/// the cells of the grids obtained by repeatedly halving every even split
/// and finally of the whole box. The relaxation alone is not monotone under
/// refinement; with the intersection, doubling every split can only shrink
/// each part.
pub fn grid_flowpipe(
    net: &SurrogateNet,
    init: &Hyperbox,
    splits: &[usize],
    opts: &ReachOptions,
) -> Result<Flowpipe> {
    let n = net.input_dim();
    if net.output_dim() % n != 0 {
        return Err(Error::invalid(format!(
            "surrogate output width {} is not a multiple of n = {n}",
            net.output_dim()
        )));
    }
    let cells = partition(init, splits)?;
    let mut bounds = cells
        .iter()
        .map(|c| output_bounds(net, c, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut level = splits.to_vec();
    loop {
        let next: Vec<usize> = if level.iter().any(|s| s % 2 == 0) {
            level
                .iter()
                .map(|s| if s % 2 == 0 { s / 2 } else { *s })
                .collect()
        } else if level.iter().any(|s| *s > 1) {
            vec![1; level.len()]
        } else {
            break;
        };
        let coarse = partition(init, &next)?
            .iter()
            .map(|c| output_bounds(net, c, opts))
            .collect::<Result<Vec<_>>>()?;
        for (i, b) in bounds.iter_mut().enumerate() {
            let a = ancestor_index(i, splits, &next);
            *b = b
                .intersect(&coarse[a])
                .ok_or_else(|| Error::invalid("ancestor bounds do not overlap a cell"))?;
        }
        level = next;
    }
    let parts = cells
        .iter()
        .zip(&bounds)
        .map(|(c, b)| c.concat(b))
        .collect();
    Flowpipe::new(n, net.output_dim() / n, parts)
}

/// Row-major (first dimension slowest) index of the cell of the `coarse`
/// grid containing cell `index` of the `fine` grid; `coarse` divides `fine`.
fn ancestor_index(index: usize, fine: &[usize], coarse: &[usize]) -> usize {
    let mut rest = index;
    let mut k = vec![0; fine.len()];
    for d in (0..fine.len()).rev() {
        k[d] = rest % fine[d];
        rest /= fine[d];
    }
    k.iter()
        .zip(fine.iter().zip(coarse))
        .fold(0, |acc, (kd, (f, c))| acc * c + kd * c / f)
}
