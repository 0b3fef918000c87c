//! Euler–Maruyama simulation `X_{n+1} = X_n + b(X_n, t_n) Δt + σ(X_n, t_n) ξ_{n+1} sqrt(Δt)`.
//!
//! The increments are not stored. Each `ξ_{n+1}` of path `k` is drawn from its
//! own ChaCha8 substream (stream `k`, word offset `n << 32`) seeded with the run
//! seed, using the ziggurat standard normal sampler of `rand_distr`, so any
//! increment can be regenerated on demand. Large runs keep only every
//! `stride`-th time slice and recompute the others block by block.

use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problems::Pde;

/// Dense storage is used while the state array stays below this many bytes.
pub const DENSE_LIMIT_BYTES: usize = 1 << 30;
/// Distance between stored time slices in checkpointed storage.
pub const CHECKPOINT_STRIDE: usize = 32;

/// Fills `out` with the standard normal increment `ξ_{n+1}` of path `k`.
pub fn increment(seed: u64, k: usize, n: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng.set_word_pos((n as u128) << 32);
    for o in out.iter_mut() {
        *o = rng.sample(StandardNormal);
    }
}

/// One Euler–Maruyama step; `scratch` must have length `2 d`.
pub fn euler_step(
    problem: &dyn Pde,
    x: &[f64],
    t: f64,
    dt: f64,
    xi: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let d = x.len();
    let (drift, noise) = scratch.split_at_mut(d);
    problem.drift(x, t, drift);
    problem.diffusion(x, t).apply(xi, noise);
    let sqrt_dt = dt.sqrt();
    for i in 0..d {
        out[i] = x[i] + drift[i] * dt + noise[i] * sqrt_dt;
    }
}

#[derive(Debug)]
enum Storage {
    /// All time slices, time-major: `x[(n P + k) d + i]`.
    Dense(Vec<f64>),
    /// Every `stride`-th slice plus a cache of one recomputed block.
    Checkpointed {
        stride: usize,
        slices: Vec<Vec<f64>>,
        cache: Mutex<Option<(usize, Arc<Vec<Vec<f64>>>)>>,
    },
}

/// Simulated trajectories of the forward process.
#[derive(Debug)]
pub struct SamplePaths {
    problem: Arc<dyn Pde>,
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    seed: u64,
    storage: Storage,
}

impl SamplePaths {
    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }

    pub fn problem(&self) -> &Arc<dyn Pde> {
        &self.problem
    }

    pub fn is_checkpointed(&self) -> bool {
        matches!(self.storage, Storage::Checkpointed { .. })
    }

    /// States of all paths at step `n`, `P x d` row-major.
    pub fn states(&self, n: usize) -> Result<Vec<f64>> {
        if n > self.n_steps {
            return Err(Error::IndexOutOfRange {
                index: n,
                len: self.n_steps + 1,
            });
        }
        let pd = self.n_paths * self.dim();
        match &self.storage {
            Storage::Dense(x) => Ok(x[n * pd..(n + 1) * pd].to_vec()),
            Storage::Checkpointed {
                stride,
                slices,
                cache,
            } => {
                let block = n / stride;
                let offset = n % stride;
                if offset == 0 {
                    return Ok(slices[block].clone());
                }
                let mut guard = cache.lock().expect("cache lock");
                if let Some((b, data)) = guard.as_ref() {
                    if *b == block {
                        return Ok(data[offset].clone());
                    }
                }
                let start = block * stride;
                let end = (start + stride).min(self.n_steps);
                let mut data = vec![slices[block].clone()];
                for m in start..end {
                    let next = advance(
                        self.problem.as_ref(),
                        data.last().expect("nonempty"),
                        m,
                        self.dt,
                        self.seed,
                        self.n_paths,
                    )?;
                    data.push(next);
                }
                let out = data[offset].clone();
                *guard = Some((block, Arc::new(data)));
                Ok(out)
            }
        }
    }

    /// State of path `k` at step `n`.
    pub fn state(&self, k: usize, n: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        let s = self.states(n)?;
        Ok(s[k * d..(k + 1) * d].to_vec())
    }

    /// Increments `ξ_{n+1}` of all paths, `P x d` row-major.
    pub fn increments(&self, n: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.n_paths * d];
        out.par_chunks_mut(d)
            .enumerate()
            .for_each(|(k, o)| increment(self.seed, k, n, o));
        out
    }

    /// Re-applies the recursion to every stored pair and demands bitwise equality.
    pub fn replay_check(&self) -> Result<()> {
        let d = self.dim();
        let mut prev = self.states(0)?;
        let x0 = self.problem.x0();
        for k in 0..self.n_paths {
            if prev[k * d..(k + 1) * d] != x0[..] {
                return Err(Error::Data(format!("path {k} does not start at x0")));
            }
        }
        for n in 0..self.n_steps {
            let next = self.states(n + 1)?;
            let expect = advance(self.problem.as_ref(), &prev, n, self.dt, self.seed, self.n_paths)?;
            if let Some(k) = (0..self.n_paths).find(|&k| {
                next[k * d..(k + 1) * d]
                    .iter()
                    .zip(&expect[k * d..(k + 1) * d])
                    .any(|(a, b)| a.to_bits() != b.to_bits())
            }) {
                return Err(Error::Data(format!(
                    "recursion violated for path {k} at step {}",
                    n + 1
                )));
            }
            prev = next;
        }
        Ok(())
    }

    /// Smallest and largest coordinate over all paths and times.
    pub fn range(&self) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for n in 0..=self.n_steps {
            for v in self.states(n)? {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Ok((lo, hi))
    }

    /// CSV with columns `k, n, t, x_1 .. x_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        write!(w, "k,n,t")?;
        for i in 1..=d {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        let all: Vec<Vec<f64>> = (0..=self.n_steps)
            .map(|n| self.states(n))
            .collect::<Result<_>>()?;
        for k in 0..self.n_paths {
            for (n, s) in all.iter().enumerate() {
                write!(w, "{k},{n},{}", self.time(n))?;
                for v in &s[k * d..(k + 1) * d] {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// One step for every path.
fn advance(problem: &dyn Pde, states: &[f64], n: usize, dt: f64, seed: u64, n_paths: usize) -> Result<Vec<f64>> {
    let d = problem.dim();
    let t = n as f64 * dt;
    let mut next = vec![0.0; n_paths * d];
    next.par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(k, out)| {
            let x = &states[k * d..(k + 1) * d];
            let mut xi = vec![0.0; d];
            increment(seed, k, n, &mut xi);
            let mut scratch = vec![0.0; 2 * d];
            euler_step(problem, x, t, dt, &xi, &mut scratch, out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulation {
                    path: k,
                    step: n + 1,
                    state: out.to_vec(),
                });
            }
            Ok(())
        })?;
    Ok(next)
}

/// Simulates `n_paths` trajectories of `n_steps` steps of size `dt`.
pub fn simulate(
    problem: Arc<dyn Pde>,
    n_steps: usize,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<SamplePaths> {
    simulate_with_limit(problem, n_steps, n_paths, dt, seed, DENSE_LIMIT_BYTES)
}

/// As [`simulate`], switching to checkpointed storage above `dense_limit_bytes`.
pub fn simulate_with_limit(
    problem: Arc<dyn Pde>,
    n_steps: usize,
    n_paths: usize,
    dt: f64,
    seed: u64,
    dense_limit_bytes: usize,
) -> Result<SamplePaths> {
    if !(dt > 0.0) || n_steps == 0 {
        return Err(Error::Domain(format!(
            "need a positive step size and at least one step, got dt = {dt}, N = {n_steps}"
        )));
    }
    if (n_steps as f64 * dt - problem.horizon()).abs() > 1e-12 * problem.horizon().max(1.0) {
        return Err(Error::Domain(format!(
            "N dt = {} does not match the horizon {}",
            n_steps as f64 * dt,
            problem.horizon()
        )));
    }
    if n_paths < 2 {
        return Err(Error::Domain(format!("need at least two paths, got {n_paths}")));
    }
    let d = problem.dim();
    let x0 = problem.x0();
    let initial: Vec<f64> = (0..n_paths).flat_map(|_| x0.iter().copied()).collect();
    let total_bytes = (n_steps + 1) * n_paths * d * std::mem::size_of::<f64>();
    let storage = if total_bytes <= dense_limit_bytes {
        let mut all = Vec::with_capacity((n_steps + 1) * n_paths * d);
        all.extend_from_slice(&initial);
        let mut current = initial;
        for n in 0..n_steps {
            current = advance(problem.as_ref(), &current, n, dt, seed, n_paths)?;
            all.extend_from_slice(&current);
        }
        Storage::Dense(all)
    } else {
        let stride = CHECKPOINT_STRIDE;
        let mut slices = vec![initial.clone()];
        let mut current = initial;
        for n in 0..n_steps {
            current = advance(problem.as_ref(), &current, n, dt, seed, n_paths)?;
            if (n + 1) % stride == 0 {
                slices.push(current.clone());
            }
        }
        Storage::Checkpointed {
            stride,
            slices,
            cache: Mutex::new(None),
        }
    };
    Ok(SamplePaths {
        problem,
        n_paths,
        n_steps,
        dt,
        seed,
        storage,
    })
}

/// Basis interval from a pilot run: sample range widened by 10% on each side.
pub fn pilot_interval(problem: Arc<dyn Pde>, n_steps: usize, dt: f64, n_paths: usize, seed: u64) -> Result<(f64, f64)> {
    let pilot = simulate(problem, n_steps, n_paths.max(2), dt, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let (lo, hi) = pilot.range()?;
    let width = (hi - lo).max(1e-3);
    Ok((lo - 0.1 * width, hi + 0.1 * width))
}
