//! Multinomial No-U-Turn sampler with generalised U-turn checks across
//! subtrees, dual-averaging step size and windowed diagonal metric
//! adaptation.

use super::{ChainDraws, LogDensity, SamplerConfig, SamplerError};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

const MAX_DELTA_H: f64 = 1000.0;
const INIT_ATTEMPTS: usize = 100;

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    lp: f64,
    grad: Vec<f64>,
}

struct Hamiltonian<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    inv_metric: Vec<f64>,
}

impl<T: LogDensity + ?Sized> Hamiltonian<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn energy(&self, z: &State) -> f64 {
        let h = -z.lp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum(&self, z: &mut State, rng: &mut ChaCha20Rng) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut State, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.lp = self.target.log_density_gradient(&z.q, &mut z.grad);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct Transition {
    accept_stat: f64,
    depth: usize,
    n_leapfrog: usize,
    divergent: bool,
}

struct TreeTally {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

struct Sampler<'a, T: LogDensity + ?Sized> {
    ham: Hamiltonian<'a, T>,
    eps: f64,
    max_depth: usize,
    z: State,
}

impl<T: LogDensity + ?Sized> Sampler<'_, T> {
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z_propose: &mut State,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut Vec<f64>,
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        tally: &mut TreeTally,
        rng: &mut ChaCha20Rng,
    ) -> bool {
        if depth == 0 {
            self.ham.leapfrog(&mut self.z, sign * self.eps);
            tally.n_leapfrog += 1;
            let h = self.ham.energy(&self.z);
            if h - h0 > MAX_DELTA_H {
                tally.divergent = true;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, h0 - h);
            tally.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(&self.z);
            *p_sharp_beg = self.ham.velocity(&self.z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&self.z.p) {
                *r += p;
            }
            p_beg.clone_from(&self.z.p);
            p_end.clone_from(p_beg);
            return !tally.divergent;
        }
        let n = self.z.q.len();

        let mut log_sum_weight_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; n];
        let mut p_sharp_init_end = vec![0.0; n];
        let mut rho_init = vec![0.0; n];
        if !self.build_tree(
            depth - 1,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            &mut log_sum_weight_init,
            tally,
            rng,
        ) {
            return false;
        }

        let mut z_propose_final = self.z.clone();
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; n];
        let mut p_sharp_final_beg = vec![0.0; n];
        let mut rho_final = vec![0.0; n];
        if !self.build_tree(
            depth - 1,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            &mut log_sum_weight_final,
            tally,
            rng,
        ) {
            return false;
        }

        let log_sum_weight_subtree = log_add_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree
            || rng.random::<f64>() < (log_sum_weight_final - log_sum_weight_subtree).exp()
        {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(p_sharp_beg, p_sharp_end, &rho_subtree);
        persist &= no_u_turn(p_sharp_beg, &p_sharp_final_beg, &add(&rho_init, &p_final_beg));
        persist &= no_u_turn(&p_sharp_init_end, p_sharp_end, &add(&rho_final, &p_init_end));
        persist
    }

    fn transition(&mut self, rng: &mut ChaCha20Rng) -> Transition {
        self.ham.sample_momentum(&mut self.z, rng);
        let n = self.z.q.len();
        let mut z_fwd = self.z.clone();
        let mut z_bck = self.z.clone();
        let mut z_sample = self.z.clone();
        let mut z_propose = self.z.clone();

        let p0 = self.z.p.clone();
        let ps0 = self.ham.velocity(&p0);
        let (mut p_fwd_fwd, mut p_fwd_bck, mut p_bck_fwd, mut p_bck_bck) = (p0.clone(), p0.clone(), p0.clone(), p0.clone());
        let (mut ps_fwd_fwd, mut ps_fwd_bck, mut ps_bck_fwd, mut ps_bck_bck) =
            (ps0.clone(), ps0.clone(), ps0.clone(), ps0.clone());
        let mut rho = p0;
        let mut log_sum_weight = 0.0;
        let h0 = self.ham.energy(&self.z);
        let mut tally = TreeTally { n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; n];
            let mut rho_bck = vec![0.0; n];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;
            let valid = if rng.random::<f64>() > 0.5 {
                self.z.clone_from(&z_fwd);
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                ps_bck_fwd.clone_from(&ps_fwd_bck);
                let v = self.build_tree(
                    depth,
                    &mut z_propose,
                    &mut ps_fwd_bck,
                    &mut ps_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut log_sum_weight_subtree,
                    &mut tally,
                    rng,
                );
                z_fwd.clone_from(&self.z);
                v
            } else {
                self.z.clone_from(&z_bck);
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                ps_fwd_bck.clone_from(&ps_bck_fwd);
                let v = self.build_tree(
                    depth,
                    &mut z_propose,
                    &mut ps_bck_fwd,
                    &mut ps_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut log_sum_weight_subtree,
                    &mut tally,
                    rng,
                );
                z_bck.clone_from(&self.z);
                v
            };
            if !valid {
                break;
            }
            depth += 1;
            if log_sum_weight_subtree > log_sum_weight
                || rng.random::<f64>() < (log_sum_weight_subtree - log_sum_weight).exp()
            {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_add_exp(log_sum_weight, log_sum_weight_subtree);
            rho = add(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&ps_bck_bck, &ps_fwd_fwd, &rho);
            persist &= no_u_turn(&ps_bck_bck, &ps_fwd_bck, &add(&rho_bck, &p_fwd_bck));
            persist &= no_u_turn(&ps_bck_fwd, &ps_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }
        self.z = z_sample;
        Transition {
            accept_stat: if tally.n_leapfrog > 0 { tally.sum_metro_prob / tally.n_leapfrog as f64 } else { 0.0 },
            depth,
            n_leapfrog: tally.n_leapfrog,
            divergent: tally.divergent,
        }
    }

    /// Doubles or halves the step size until a single leapfrog step crosses
    /// an acceptance probability of 0.8.
    fn init_step_size(&mut self, rng: &mut ChaCha20Rng) -> Result<(), String> {
        let z_init = self.z.clone();
        let delta = |s: &mut Self, rng: &mut ChaCha20Rng| {
            s.z.clone_from(&z_init);
            s.ham.sample_momentum(&mut s.z, rng);
            let h0 = s.ham.energy(&s.z);
            s.ham.leapfrog(&mut s.z, s.eps);
            h0 - s.ham.energy(&s.z)
        };
        let threshold = 0.8f64.ln();
        let up = delta(self, rng) > threshold;
        loop {
            let d = delta(self, rng);
            if up && !(d > threshold) || !up && !(d < threshold) {
                break;
            }
            self.eps = if up { self.eps * 2.0 } else { self.eps * 0.5 };
            if self.eps > 1e7 {
                self.z = z_init;
                return Err("step size grew without bound; the posterior may be improper".into());
            }
            if self.eps < 1e-12 {
                self.z = z_init;
                return Err("step size collapsed to zero".into());
            }
        }
        self.z = z_init;
        Ok(())
    }
}

/// Step-size dual averaging.
struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, delta }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: an initial fast phase, doubling slow windows for the
/// metric, and a terminal fast phase.
struct Windows {
    init_buffer: usize,
    term_buffer: usize,
    base_window: usize,
    warmup: usize,
}

impl Windows {
    fn new(warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if init + term + base > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup - init - term;
        }
        Self { init_buffer: init, term_buffer: term, base_window: base, warmup }
    }

    /// Iteration indices (exclusive ends) at which each slow window closes.
    fn window_ends(&self) -> Vec<usize> {
        let mut ends = Vec::new();
        let last = self.warmup - self.term_buffer;
        let mut start = self.init_buffer;
        let mut size = self.base_window;
        while start < last {
            let mut end = start + size;
            // Stretch the final window if the next would not fit.
            if end + 2 * size > last {
                end = last;
            }
            ends.push(end);
            start = end;
            size *= 2;
        }
        ends
    }
}

struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / self.n;
            *s += delta * (v - *m);
        }
    }

    /// Regularised variance estimate shrunk towards 1e-3.
    fn variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| (n / (n + 5.0)) * (s / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0)))
            .collect()
    }
}

fn initial_state<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
    rng: &mut ChaCha20Rng,
) -> Result<State, SamplerError> {
    let d = target.dim();
    let mut q = vec![0.0; d];
    for _ in 0..INIT_ATTEMPTS {
        for v in q.iter_mut() {
            *v = rng.random_range(-config.init_radius..config.init_radius);
        }
        let mut grad = vec![0.0; d];
        let lp = target.log_density_gradient(&q, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(State { q, p: vec![0.0; d], lp, grad });
        }
    }
    Err(SamplerError::InitialDensity { chain, attempts: INIT_ATTEMPTS, detail: target.describe_non_finite(&q) })
}

pub(super) fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
    rng: &mut ChaCha20Rng,
) -> Result<ChainDraws, SamplerError> {
    let d = target.dim();
    let z = initial_state(target, config, chain, rng)?;
    let mut s = Sampler { ham: Hamiltonian { target, inv_metric: vec![1.0; d] }, eps: 1.0, max_depth: config.max_depth, z };
    let step_err = |detail| SamplerError::StepSize { chain, detail };
    s.init_step_size(rng).map_err(step_err)?;
    let mut da = DualAveraging::new(s.eps, config.target_accept);
    let windows = Windows::new(config.warmup);
    let ends = windows.window_ends();
    let mut welford = Welford::new(d);
    let mut warmup_divergences = 0;

    for it in 0..config.warmup {
        let t = s.transition(rng);
        warmup_divergences += usize::from(t.divergent);
        s.eps = da.update(t.accept_stat);
        let in_slow = it >= windows.init_buffer && it < windows.warmup - windows.term_buffer;
        if in_slow {
            welford.add(&s.z.q);
            if ends.contains(&(it + 1)) {
                s.ham.inv_metric = welford.variance();
                welford = Welford::new(d);
                s.init_step_size(rng).map_err(step_err)?;
                da = DualAveraging::new(s.eps, config.target_accept);
            }
        }
    }
    s.eps = da.final_step();

    let n = config.samples;
    let mut out = ChainDraws {
        draws: Vec::with_capacity(n),
        log_density: Vec::with_capacity(n),
        accept_stat: Vec::with_capacity(n),
        tree_depth: Vec::with_capacity(n),
        n_leapfrog: Vec::with_capacity(n),
        divergent: Vec::with_capacity(n),
        warmup_divergences,
        step_size: s.eps,
        inv_metric: s.ham.inv_metric.clone(),
    };
    for _ in 0..n {
        let t = s.transition(rng);
        out.draws.push(s.z.q.clone());
        out.log_density.push(s.z.lp);
        out.accept_stat.push(t.accept_stat);
        out.tree_depth.push(t.depth);
        out.n_leapfrog.push(t.n_leapfrog);
        out.divergent.push(t.divergent);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_windows_follow_doubling_schedule() {
        let w = Windows::new(1000);
        assert_eq!(w.window_ends(), vec![100, 150, 250, 450, 950]);
    }

    #[test]
    fn short_warmup_windows_fit() {
        let w = Windows::new(150);
        let ends = w.window_ends();
        assert_eq!(*ends.last().unwrap(), 150 - w.term_buffer);
        assert!(ends.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn welford_matches_two_pass_variance() {
        let xs = [1.0, 4.0, 2.5, -1.0, 3.0];
        let mut w = Welford::new(1);
        xs.iter().for_each(|x| w.add(&[*x]));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        let n = 5.0;
        let expected = n / (n + 5.0) * var + 1e-3 * 5.0 / (n + 5.0);
        assert!((w.variance()[0] - expected).abs() < 1e-12);
    }
}
