//! The Strauss pairwise-interaction process: unnormalized density, Papangelou
//! conditional intensity, a perfect sampler by dominated coupling from the
//! past, pseudo-likelihood fitting, and profile estimation of the
//! interaction radius.

use rand_chacha::rand_core::RngCore;

use crate::geometry::{Point, PointPattern, Window};
use crate::runtime::draw;
use crate::{Error, Result};

/// Strauss parameters: intensity-like rate `beta`, interaction `gamma`,
/// interaction radius `r`. `gamma <= 1` keeps the process locally stable
/// (Papangelou intensity bounded by `beta`), which the perfect sampler
/// relies on; `gamma = 1` is the Poisson special case, `gamma = 0` the
/// hard core.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StraussParams {
    pub beta: f64,
    pub gamma: f64,
    pub r: f64,
}

impl StraussParams {
    pub fn new(beta: f64, gamma: f64, r: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParams(format!("beta must be > 0, got {beta}")));
        }
        if !(gamma.is_finite() && (0.0..=1.0).contains(&gamma)) {
            return Err(Error::InvalidParams(format!(
                "gamma must lie in [0, 1], got {gamma}"
            )));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidParams(format!(
                "interaction radius must be > 0, got {r}"
            )));
        }
        Ok(StraussParams { beta, gamma, r })
    }
}

/// Log of the unnormalized Strauss density `beta^n * gamma^{s_R}` where
/// `s_R` counts unordered pairs at distance <= r. For `gamma = 0` the
/// convention is `0^0 = 1`: patterns with no close pair keep a finite value,
/// any close pair drives the density to `-inf`.
pub fn strauss_log_unnorm(p: &PointPattern, theta: &StraussParams) -> f64 {
    let n = p.len() as f64;
    let s = p.close_pair_count(theta.r);
    let mut v = n * theta.beta.ln();
    if s > 0 {
        if theta.gamma == 0.0 {
            return f64::NEG_INFINITY;
        }
        v += s as f64 * theta.gamma.ln();
    }
    v
}

/// Log Papangelou conditional intensity `log beta + t(u; p) * log gamma`,
/// where `t` counts the points of `p` within distance `r` of `u`
/// (excluding `u` itself when it belongs to `p`). Equals the difference
/// `strauss_log_unnorm(p + u) - strauss_log_unnorm(p)` for `u` not in `p`,
/// and is bounded above by `log beta` (local stability).
pub fn papangelou_log(u: &Point, p: &PointPattern, theta: &StraussParams) -> f64 {
    let t = p.neighbour_count(u, theta.r);
    let mut v = theta.beta.ln();
    if t > 0 {
        if theta.gamma == 0.0 {
            return f64::NEG_INFINITY;
        }
        v += t as f64 * theta.gamma.ln();
    }
    v
}

const MAX_DOUBLINGS: u32 = 40;
const MAX_EVENTS: usize = 20_000_000;

/// One forward-time event of the dominating birth-death process, recorded
/// during the backward walk. Births carry the thinning mark that decides
/// membership of the sandwich processes; the point's location lives in the
/// walk's location table.
#[derive(Clone, Copy, Debug)]
enum Event {
    Birth { id: u32, mark: f64 },
    Death { id: u32 },
}

/// Backward realization of the stationary dominating process on an interval
/// `[-T, 0]`, extensible to earlier times. The process (birth rate
/// `beta` per unit area, unit per-point death rate, stationary Poisson)
/// is reversible, so it is generated backwards from a stationary draw at
/// time 0: a point appearing in backward time is a forward death, a point
/// removed in backward time is a forward birth and gets its mark here.
/// Events and marks are stored so that every horizon extension reuses the
/// realization already generated — mandatory for coupling-from-the-past
/// correctness.
struct BackwardWalk {
    /// Current backward time (<= 0).
    t: f64,
    /// Ids alive at time `t` (the dominating state there).
    alive: Vec<u32>,
    /// Events at strictly decreasing times in `(t, 0]`.
    events: Vec<(f64, Event)>,
    /// Location of every id ever created.
    locations: Vec<Point>,
}

impl BackwardWalk {
    fn start<R: RngCore>(beta: f64, w: &Window, rng: &mut R) -> Self {
        let n0 = draw::poisson(rng, beta * w.area());
        let mut locations = Vec::with_capacity(n0 as usize);
        let mut alive = Vec::with_capacity(n0 as usize);
        for id in 0..n0 {
            locations.push(Point::new(
                draw::uniform(rng, w.x0, w.x1),
                draw::uniform(rng, w.y0, w.y1),
            ));
            alive.push(id as u32);
        }
        BackwardWalk {
            t: 0.0,
            alive,
            events: Vec::new(),
            locations,
        }
    }

    /// Extend the realization back to `target` (< current time). Resuming
    /// with a fresh exponential at the old frontier is valid by
    /// memorylessness of the event clock.
    fn extend<R: RngCore>(&mut self, target: f64, beta: f64, w: &Window, rng: &mut R) -> Result<()> {
        let birth_rate = beta * w.area();
        loop {
            let rate = birth_rate + self.alive.len() as f64;
            let tn = self.t - draw::exponential(rng, rate);
            if tn <= target {
                self.t = target;
                return Ok(());
            }
            if draw::unit(rng) * rate < birth_rate {
                // Appears in backward time: existed before tn, dies at tn.
                let id = self.locations.len() as u32;
                self.locations.push(Point::new(
                    draw::uniform(rng, w.x0, w.x1),
                    draw::uniform(rng, w.y0, w.y1),
                ));
                self.events.push((tn, Event::Death { id }));
                self.alive.push(id);
            } else {
                // Removed in backward time: born at tn, mark drawn now.
                let j = draw::index(rng, self.alive.len());
                let id = self.alive.swap_remove(j);
                let mark = draw::unit(rng);
                self.events.push((tn, Event::Birth { id, mark }));
            }
            self.t = tn;
            if self.events.len() > MAX_EVENTS {
                return Err(Error::NonCoalescence { horizon: -self.t });
            }
        }
    }
}

/// Cell-list over sandwich members, sized so each cell spans at least the
/// interaction radius: neighbour counts only ever inspect a 3x3 block.
/// Membership is an intrusive doubly-linked list per cell, so insertion and
/// removal are O(1) with no per-cell allocation.
struct CellGrid {
    cells_x: usize,
    cells_y: usize,
    inv_cw: f64,
    inv_ch: f64,
    x0: f64,
    y0: f64,
    head: Vec<i32>,
    next: Vec<i32>,
    prev: Vec<i32>,
}

impl CellGrid {
    fn new(w: &Window, r: f64, capacity: usize) -> Self {
        let cells_x = ((w.width() / r) as usize).clamp(1, 128);
        let cells_y = ((w.height() / r) as usize).clamp(1, 128);
        CellGrid {
            cells_x,
            cells_y,
            inv_cw: cells_x as f64 / w.width(),
            inv_ch: cells_y as f64 / w.height(),
            x0: w.x0,
            y0: w.y0,
            head: vec![-1; cells_x * cells_y],
            next: vec![-1; capacity],
            prev: vec![-1; capacity],
        }
    }

    #[inline]
    fn cell_of(&self, p: &Point) -> (usize, usize) {
        let cx = (((p.x - self.x0) * self.inv_cw) as usize).min(self.cells_x - 1);
        let cy = (((p.y - self.y0) * self.inv_ch) as usize).min(self.cells_y - 1);
        (cx, cy)
    }

    fn insert(&mut self, id: u32, p: &Point) {
        let (cx, cy) = self.cell_of(p);
        let c = cy * self.cells_x + cx;
        let old = self.head[c];
        self.head[c] = id as i32;
        self.next[id as usize] = old;
        self.prev[id as usize] = -(c as i32) - 2; // head marker encodes the cell
        if old >= 0 {
            self.prev[old as usize] = id as i32;
        }
    }

    fn remove(&mut self, id: u32) {
        let nx = self.next[id as usize];
        let pv = self.prev[id as usize];
        if pv >= 0 {
            self.next[pv as usize] = nx;
        } else {
            let c = (-pv - 2) as usize;
            self.head[c] = nx;
        }
        if nx >= 0 {
            self.prev[nx as usize] = pv;
        }
    }

    /// Count members within distance r of `p` (closed inequality): all
    /// members (the upper process) and those flagged as lower-process
    /// members, in one pass.
    #[inline]
    fn count_neighbours(
        &self,
        p: &Point,
        r2: f64,
        locations: &[Point],
        state: &[u8],
    ) -> (u32, u32) {
        let (cx, cy) = self.cell_of(p);
        let x_lo = cx.saturating_sub(1);
        let x_hi = (cx + 1).min(self.cells_x - 1);
        let y_lo = cy.saturating_sub(1);
        let y_hi = (cy + 1).min(self.cells_y - 1);
        let mut t_u = 0u32;
        let mut t_l = 0u32;
        for gy in y_lo..=y_hi {
            for gx in x_lo..=x_hi {
                let mut cur = self.head[gy * self.cells_x + gx];
                while cur >= 0 {
                    let i = cur as usize;
                    if locations[i].dist_sq(p) <= r2 {
                        t_u += 1;
                        if state[i] == 2 {
                            t_l += 1;
                        }
                    }
                    cur = self.next[i];
                }
            }
        }
        (t_u, t_l)
    }
}

/// Replay the stored events forward from the walk's frontier to time 0,
/// evolving the sandwich pair: the upper process starts as the full
/// dominating state, the lower as empty. A birth with mark `m` enters the
/// upper process iff `m < gamma^{t(xi, L)}` and the lower iff
/// `m < gamma^{t(xi, U)}`, both counts taken in the pre-event states — the
/// cross rule that keeps every coupled target chain between the two. Deaths
/// remove the point wherever present. Returns the member states and whether
/// the sandwich has coalesced (equal counts suffice since L is always a
/// subset of U).
fn replay_forward(walk: &BackwardWalk, gamma: f64, r: f64, w: &Window) -> (Vec<u8>, bool) {
    // state: 0 = absent, 1 = upper only, 2 = upper and lower
    let mut state = vec![0u8; walk.locations.len()];
    let mut grid = CellGrid::new(w, r, walk.locations.len());
    let r2 = r * r;
    let mut n_u = 0u64;
    let mut n_l = 0u64;
    for &id in &walk.alive {
        state[id as usize] = 1;
        grid.insert(id, &walk.locations[id as usize]);
        n_u += 1;
    }
    for (_, ev) in walk.events.iter().rev() {
        match *ev {
            Event::Death { id } => {
                let s = state[id as usize];
                if s > 0 {
                    grid.remove(id);
                    state[id as usize] = 0;
                    n_u -= 1;
                    if s == 2 {
                        n_l -= 1;
                    }
                }
            }
            Event::Birth { id, mark } => {
                let p = &walk.locations[id as usize];
                let (t_u, t_l) = grid.count_neighbours(p, r2, &walk.locations, &state);
                if mark < gamma.powi(t_l as i32) {
                    if mark < gamma.powi(t_u as i32) {
                        state[id as usize] = 2;
                        n_l += 1;
                    } else {
                        state[id as usize] = 1;
                    }
                    grid.insert(id, p);
                    n_u += 1;
                }
            }
        }
    }
    (state, n_u == n_l)
}

/// Draw one exact sample of the Strauss process on `w` by dominated
/// coupling from the past.
///
/// The dominating process is the free spatial birth-death process with
/// birth rate `beta` per unit area and unit death rate (stationary
/// Poisson(beta)), realized backwards from a stationary draw at time 0.
/// Forward passes thin it into upper/lower sandwich processes; when they
/// coalesce at time 0 the common state is an exact draw. The backward
/// horizon starts at one expected dominating birth per unit area (T =
/// 1/beta) and doubles, reusing all stored events and marks, until
/// coalescence; a doubling cap turns pathological non-coalescence into an
/// explicit error rather than an approximate return.
///
/// `gamma` must be positive: the hard-core case is accepted by the density
/// functions but not by this sampler.
pub fn sample_strauss_perfect<R: RngCore>(
    theta: &StraussParams,
    w: &Window,
    rng: &mut R,
) -> Result<PointPattern> {
    if theta.gamma <= 0.0 {
        return Err(Error::InvalidParams(
            "perfect sampler requires gamma > 0 (hard core not supported)".into(),
        ));
    }
    let mut walk = BackwardWalk::start(theta.beta, w, rng);
    let mut horizon = 1.0 / theta.beta;
    for _ in 0..=MAX_DOUBLINGS {
        walk.extend(-horizon, theta.beta, w, rng)?;
        let (state, coalesced) = replay_forward(&walk, theta.gamma, theta.r, w);
        if coalesced {
            let points = state
                .iter()
                .enumerate()
                .filter(|&(_, &s)| s > 0)
                .map(|(id, _)| walk.locations[id])
                .collect();
            return PointPattern::new(*w, points);
        }
        horizon *= 2.0;
    }
    Err(Error::NonCoalescence { horizon })
}

/// Result of a pseudo-likelihood fit at a fixed interaction radius.
#[derive(Clone, Debug)]
pub struct PseudoLikelihoodFit {
    pub beta_hat: f64,
    pub gamma_hat: f64,
    pub log_pl: f64,
    pub r: f64,
    pub quad_points: usize,
}

pub const DEFAULT_QUAD_GRID: usize = 32;

/// Quadrature nodes for the pseudo-likelihood integral: a `grid x grid`
/// lattice of tile centres plus the data points, each weighted by its
/// tile's area divided by the number of nodes in the tile, so the weights
/// sum to the window area.
struct Quadrature {
    /// (neighbour count, weight) per node; data nodes use the pattern with
    /// the node removed, dummy nodes the full pattern.
    data_nodes: Vec<(u32, f64)>,
    dummy_nodes: Vec<(u32, f64)>,
    total: usize,
}

fn build_quadrature(p: &PointPattern, r: f64, grid: usize) -> Quadrature {
    let w = p.window();
    let g = grid;
    let tile_area = w.area() / (g * g) as f64;
    let mut tile_count = vec![1u32; g * g]; // each tile holds its own centre
    let tile_of = |pt: &Point| -> usize {
        let tx = (((pt.x - w.x0) / w.width() * g as f64) as usize).min(g - 1);
        let ty = (((pt.y - w.y0) / w.height() * g as f64) as usize).min(g - 1);
        ty * g + tx
    };
    for pt in p.points() {
        tile_count[tile_of(pt)] += 1;
    }
    let data_nodes = p
        .points()
        .iter()
        .map(|pt| {
            let t = p.neighbour_count(pt, r) as u32;
            (t, tile_area / tile_count[tile_of(pt)] as f64)
        })
        .collect();
    let mut dummy_nodes = Vec::with_capacity(g * g);
    for ty in 0..g {
        let y = w.y0 + (ty as f64 + 0.5) * w.height() / g as f64;
        for tx in 0..g {
            let x = w.x0 + (tx as f64 + 0.5) * w.width() / g as f64;
            let c = Point::new(x, y);
            let t = p.neighbour_count(&c, r) as u32;
            dummy_nodes.push((t, tile_area / tile_count[ty * g + tx] as f64));
        }
    }
    Quadrature {
        data_nodes,
        dummy_nodes,
        total: g * g + p.len(),
    }
}

/// Nodes grouped by neighbour count: the pseudo-likelihood and its
/// derivatives only depend on nodes through `(t, sum of weights)`.
struct GroupedQuad {
    /// (t, total weight) with distinct t ascending.
    groups: Vec<(u32, f64)>,
    data_t_sum: f64,
    n: usize,
    total: usize,
}

fn group_quadrature(q: &Quadrature) -> GroupedQuad {
    let mut acc: Vec<(u32, f64)> = Vec::new();
    for &(t, w) in q.data_nodes.iter().chain(q.dummy_nodes.iter()) {
        match acc.binary_search_by_key(&t, |g| g.0) {
            Ok(i) => acc[i].1 += w,
            Err(i) => acc.insert(i, (t, w)),
        }
    }
    GroupedQuad {
        groups: acc,
        data_t_sum: q.data_nodes.iter().map(|&(t, _)| t as f64).sum(),
        n: q.data_nodes.len(),
        total: q.total,
    }
}

/// Log pseudo-likelihood of `theta` on `p`:
/// `sum_i log lambda(x_i; p \ x_i) - integral of lambda(u; p) du`,
/// the integral approximated on the `grid x grid` quadrature above.
/// `gamma = 0` with a neighboured data point gives `-inf`.
pub fn log_pseudolikelihood(
    p: &PointPattern,
    theta: &StraussParams,
    grid: usize,
) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EstimatorUndefined(
            "pseudo-likelihood requires a nonempty pattern".into(),
        ));
    }
    if grid == 0 {
        return Err(Error::InvalidConfig("quadrature grid must be >= 1".into()));
    }
    let q = build_quadrature(p, theta.r, grid);
    let mut v = 0.0;
    for &(t, _) in &q.data_nodes {
        v += theta.beta.ln();
        if t > 0 {
            if theta.gamma == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            v += t as f64 * theta.gamma.ln();
        }
    }
    let mut integral = 0.0;
    for &(t, w) in q.data_nodes.iter().chain(q.dummy_nodes.iter()) {
        let lam = if theta.gamma == 0.0 {
            if t > 0 {
                0.0
            } else {
                theta.beta
            }
        } else {
            theta.beta * theta.gamma.powi(t as i32)
        };
        integral += w * lam;
    }
    Ok(v - integral)
}

/// Maximize the pseudo-likelihood over `(beta, gamma)` with `gamma`
/// constrained to `[0, 1]`, on the default quadrature grid.
pub fn fit_pseudolikelihood(p: &PointPattern, r: f64) -> Result<PseudoLikelihoodFit> {
    fit_pseudolikelihood_grid(p, r, DEFAULT_QUAD_GRID)
}

/// As [`fit_pseudolikelihood`] with an explicit quadrature grid.
///
/// Works in `(a, b) = (log beta, log gamma)`, where the objective
/// `n a + S b - sum_j w_j exp(a + t_j b)` is concave; Newton steps with
/// backtracking solve the interior problem, and the two boundary cases have
/// closed forms: `b = 0` (the Poisson reduction, `beta = n/|S|`) via the
/// KKT check, and `gamma = 0` when no data point has a neighbour.
pub fn fit_pseudolikelihood_grid(
    p: &PointPattern,
    r: f64,
    grid: usize,
) -> Result<PseudoLikelihoodFit> {
    if p.is_empty() {
        return Err(Error::EstimatorUndefined(
            "pseudo-likelihood fit requires a nonempty pattern".into(),
        ));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidParams(format!(
            "interaction radius must be > 0, got {r}"
        )));
    }
    if grid == 0 {
        return Err(Error::InvalidConfig("quadrature grid must be >= 1".into()));
    }
    let gq = group_quadrature(&build_quadrature(p, r, grid));
    let n = gq.n as f64;
    let s_data = gq.data_t_sum;
    let area: f64 = gq.groups.iter().map(|&(_, w)| w).sum();

    let objective = |a: f64, b: f64| -> f64 {
        let mut integral = 0.0;
        for &(t, w) in &gq.groups {
            integral += w * (a + t as f64 * b).exp();
        }
        n * a + s_data * b - integral
    };

    // gamma = 0 boundary: only meaningful when every data point is
    // neighbour-free; the intensity is then beta on the t=0 region.
    let gamma_zero_fit = || -> Option<(f64, f64)> {
        if s_data > 0.0 {
            return None;
        }
        let w0: f64 = gq
            .groups
            .iter()
            .filter(|&&(t, _)| t == 0)
            .map(|&(_, w)| w)
            .sum();
        if w0 <= 0.0 {
            return None;
        }
        let a = (n / w0).ln();
        Some((a, n * a - n))
    };

    // b = 0 boundary (Poisson reduction): a = log(n / |S|).
    let b_zero_fit = || -> (f64, f64) {
        let a = (n / area).ln();
        (a, n * a - n)
    };

    // Interior Newton from the Poisson start.
    let mut a = (n / area).ln();
    let mut b: f64 = -0.1;
    let mut f = objective(a, b);
    let mut converged = false;
    for _ in 0..200 {
        let (mut ia, mut ib, mut ibb) = (0.0, 0.0, 0.0);
        for &(t, w) in &gq.groups {
            let t = t as f64;
            let lam = w * (a + t * b).exp();
            ia += lam;
            ib += t * lam;
            ibb += t * t * lam;
        }
        let g1 = n - ia;
        let g2 = s_data - ib;
        // Hessian is -[[ia, ib], [ib, ibb]]; Newton step solves H d = -g.
        let det = ia * ibb - ib * ib;
        let (da, db) = if det.abs() > 1e-300 {
            ((g1 * ibb - g2 * ib) / det, (ia * g2 - ib * g1) / det)
        } else {
            // Degenerate curvature (e.g. every node shares one t): fall
            // back to a gradient step.
            (g1 / ia.max(1.0), g2 / ibb.max(1.0))
        };
        if !(da.is_finite() && db.is_finite()) {
            return Err(Error::NonConvergence(
                "pseudo-likelihood Newton step became non-finite".into(),
            ));
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (an, bn) = (a + step * da, b + step * db);
            let fn_ = objective(an, bn);
            if fn_ >= f {
                let moved = (an - a).abs() + (bn - b).abs();
                a = an;
                b = bn;
                f = fn_;
                accepted = true;
                if moved < 1e-12 * (1.0 + a.abs() + b.abs()) {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true; // no ascent direction improves: at the optimum
        }
        if converged {
            break;
        }
        if b < -46.0 {
            break; // gamma below 1e-20 is numerically the hard-core boundary
        }
    }
    if !converged && b >= -46.0 {
        return Err(Error::NonConvergence(
            "pseudo-likelihood Newton failed to converge within the iteration cap".into(),
        ));
    }

    // Boundary resolution.
    let (mut best_a, mut best_b, mut best_f) = (a, b, f);
    if b > 0.0 || !converged {
        let (a0, f0) = b_zero_fit();
        if b > 0.0 || f0 > best_f {
            best_a = a0;
            best_b = 0.0;
            best_f = f0;
        }
    }
    let mut gamma_hat = best_b.exp().min(1.0);
    let mut beta_hat = best_a.exp();
    let mut log_pl = best_f;
    if best_b < -46.0 {
        if let Some((a0, f0)) = gamma_zero_fit() {
            beta_hat = a0.exp();
            gamma_hat = 0.0;
            log_pl = f0;
        }
    }
    if !log_pl.is_finite() || !beta_hat.is_finite() {
        return Err(Error::NonConvergence(
            "pseudo-likelihood fit produced non-finite values".into(),
        ));
    }
    Ok(PseudoLikelihoodFit {
        beta_hat,
        gamma_hat,
        log_pl,
        r,
        quad_points: gq.total,
    })
}

/// Fit the pseudo-likelihood at every radius of `r_grid` (positive,
/// ascending) and return the maximizing radius together with the profile
/// curve `(r, max log PL)`. Ties go to the smaller radius; a failing fit
/// aborts with the offending radius attached.
pub fn profile_radius(
    p: &PointPattern,
    r_grid: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    if r_grid.is_empty() {
        return Err(Error::InvalidConfig("radius grid must be nonempty".into()));
    }
    for pair in r_grid.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidConfig(
                "radius grid must be strictly ascending".into(),
            ));
        }
    }
    if r_grid[0] <= 0.0 {
        return Err(Error::InvalidConfig("radius grid must be positive".into()));
    }
    let mut curve = Vec::with_capacity(r_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &r in r_grid {
        let fit = fit_pseudolikelihood(p, r).map_err(|e| Error::ProfilePoint {
            r,
            source: Box::new(e),
        })?;
        curve.push((r, fit.log_pl));
        let better = match best {
            None => true,
            Some((_, f)) => fit.log_pl > f, // strict: ties keep the smaller r
        };
        if better {
            best = Some((r, fit.log_pl));
        }
    }
    Ok((best.expect("nonempty grid").0, curve))
}

/// Default profile grid: 50 equally spaced radii spanning half to three
/// times the minimum inter-point distance.
pub fn default_radius_grid(p: &PointPattern) -> Result<Vec<f64>> {
    let d = p.min_pairwise_distance().ok_or_else(|| {
        Error::EstimatorUndefined("radius grid needs at least 2 points".into())
    })?;
    let (lo, hi) = (0.5 * d, 3.0 * d);
    let m = 50;
    Ok((0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect())
}
