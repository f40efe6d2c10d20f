//! Piecewise-linear quantile functions of 1D measures and exact evaluation of
//! `∫₀¹ |Q_a(t) − Q_b(t)|^p dt`.

/// `Q(t) = x0 + (x1 - x0) (t - t0) / (t1 - t0)` on `[t0, t1]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Piece {
    pub t0: f64,
    pub t1: f64,
    pub x0: f64,
    pub x1: f64,
}

impl Piece {
    fn at(&self, t: f64) -> f64 {
        let len = self.t1 - self.t0;
        if len <= 0.0 || self.x1 == self.x0 {
            return self.x0;
        }
        self.x0 + (self.x1 - self.x0) * ((t - self.t0) / len)
    }
}

/// Generalised inverse of a distribution function, as contiguous pieces
/// covering `[0, 1]`.
#[derive(Clone, Debug)]
pub(crate) struct Quantile {
    pieces: Vec<Piece>,
}

impl Quantile {
    /// Atoms `(x, w)`; weights are assumed to sum to one.
    pub fn from_atoms(atoms: &[(f64, f64)]) -> Self {
        let mut sorted: Vec<(f64, f64)> = atoms.iter().copied().filter(|&(_, w)| w > 0.0).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pieces = Vec::with_capacity(sorted.len());
        let mut t = 0.0;
        for (x, w) in sorted {
            pieces.push(Piece { t0: t, t1: t + w, x0: x, x1: x });
            t += w;
        }
        Self::close(pieces)
    }

    /// Piecewise-constant density: `(left, right, mass)` cells in increasing
    /// position order.
    pub fn from_cells(cells: impl IntoIterator<Item = (f64, f64, f64)>) -> Self {
        let mut pieces = Vec::new();
        let mut t = 0.0;
        for (a, b, m) in cells {
            if m > 0.0 {
                pieces.push(Piece { t0: t, t1: t + m, x0: a, x1: b });
                t += m;
            }
        }
        Self::close(pieces)
    }

    // Pin the last breakpoint to exactly 1 so that merges never see a gap.
    fn close(mut pieces: Vec<Piece>) -> Self {
        if let Some(last) = pieces.last_mut() {
            last.t1 = 1.0;
        }
        Quantile { pieces }
    }

    /// Left-continuous quantile `inf { x : F(x) >= t }`.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.pieces.partition_point(|p| p.t1 < t);
        let idx = idx.min(self.pieces.len() - 1);
        self.pieces[idx].at(t)
    }

    /// Periodic lift `Q~(s) = Q(s - floor s) + floor s` restricted to
    /// `[theta, theta + 1]` and re-parametrised to `[0, 1]`.
    pub fn shifted_periodic(&self, theta: f64) -> Quantile {
        let mut out = Vec::new();
        let start = theta.floor() as i64;
        for m in start..=start + 1 {
            let off = m as f64;
            for p in &self.pieces {
                let a = (p.t0 + off).max(theta);
                let b = (p.t1 + off).min(theta + 1.0);
                if b <= a {
                    continue;
                }
                let xa = p.at(a - off) + off;
                let xb = p.at(b - off) + off;
                out.push(Piece { t0: a - theta, t1: b - theta, x0: xa, x1: xb });
            }
        }
        if let Some(first) = out.first_mut() {
            first.t0 = 0.0;
        }
        Self::close(out)
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }
}

/// `∫ |g|^p` over an interval of length `len` on which `g` is linear with end
/// values `g0`, `g1`.
fn linear_power_integral(g0: f64, g1: f64, len: f64, p: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let a0 = g0.abs();
    let a1 = g1.abs();
    if g0 * g1 < 0.0 {
        let r = a0 / (a0 + a1);
        return len * (r * a0.powf(p) + (1.0 - r) * a1.powf(p)) / (p + 1.0);
    }
    let diff = a1 - a0;
    let scale = a0.max(a1);
    if scale == 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return len * 0.5 * (a0 + a1);
    }
    if diff.abs() <= 1e-9 * scale {
        return len * (0.5 * (a0 + a1)).powf(p);
    }
    len * (a1.powf(p + 1.0) - a0.powf(p + 1.0)) / ((p + 1.0) * diff)
}

/// `∫₀¹ |Q_a(t) − Q_b(t)|^p dt`, exact for piecewise-linear quantiles.
pub(crate) fn quantile_cost(qa: &Quantile, qb: &Quantile, p: f64) -> f64 {
    let (pa, pb) = (qa.pieces(), qb.pieces());
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0f64;
    let mut total = 0.0;
    while i < pa.len() && j < pb.len() {
        let end = pa[i].t1.min(pb[j].t1);
        if end > t {
            let g0 = pa[i].at(t) - pb[j].at(t);
            let g1 = pa[i].at(end) - pb[j].at(end);
            total += linear_power_integral(g0, g1, end - t, p);
            t = end;
        }
        if pa[i].t1 <= end {
            i += 1;
        }
        if pb[j].t1 <= end {
            j += 1;
        }
    }
    total
}

/// Minimises the circle cost over the shift of the periodic lift of `qb`.
/// The objective is convex in the shift, so golden-section search suffices.
pub(crate) fn circle_cost(qa: &Quantile, qb: &Quantile, p: f64) -> (f64, f64) {
    let f = |theta: f64| quantile_cost(qa, &qb.shifted_periodic(theta), p);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-1.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-13 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut best = (fc, c);
    for theta in [a, b, d, 0.0] {
        let v = f(theta);
        if v < best.0 {
            best = (v, theta);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_vs_double_uniform() {
        let qa = Quantile::from_cells([(0.0, 1.0, 1.0)]);
        let qb = Quantile::from_cells([(0.0, 2.0, 1.0)]);
        assert!((quantile_cost(&qa, &qb, 1.0) - 0.5).abs() < 1e-15);
        // ∫ t² dt = 1/3
        assert!((quantile_cost(&qa, &qb, 2.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sign_change_integral() {
        // g(t) = 2t - 1 on [0,1]: ∫|g| = 1/2, ∫ g² = 1/3
        assert!((linear_power_integral(-1.0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((linear_power_integral(-1.0, 1.0, 1.0, 2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((linear_power_integral(1.0, 3.0, 2.0, 2.0) - 26.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn left_continuous_eval() {
        let q = Quantile::from_atoms(&[(1.0, 0.5), (0.0, 0.5)]);
        assert_eq!(q.eval(0.25), 0.0);
        assert_eq!(q.eval(0.5), 0.0);
        assert_eq!(q.eval(0.75), 1.0);
    }

    #[test]
    fn circle_shift_wraps_atoms() {
        // δ_0.95 vs δ_0.05 on the circle: distance 0.1
        let qa = Quantile::from_atoms(&[(0.95, 1.0)]);
        let qb = Quantile::from_atoms(&[(0.05, 1.0)]);
        let (c, _) = circle_cost(&qa, &qb, 1.0);
        assert!((c - 0.1).abs() < 1e-12);
    }
}
