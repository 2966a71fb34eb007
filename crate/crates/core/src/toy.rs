//! Two-branch, six-node toy circuit and its noise sweep.
//!
//! ```text
//!   n1 ─W13─┐         ┌─W34─ n4 ─W46─┐
//!           ├── n3 ───┤              ├── n6
//!   n2 ─W23─┘         └─W35─ n5 ─W56─┘
//! ```
//!
//! Branch two's maps are mixed with branch one's through `align`. Raising
//! the noise scale `τ` adds `τ·N(0, I)` to every node and remixes W35 and
//! W56 toward fresh random maps by `h = min(1, τ/2)` (edge decoherence).
//! The emergence term treats the two branch paths as the parts and their
//! sum as the macro map.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, EdgeSpec, NodeSpec, NodeVectors, Part, Partition};
use crate::ei::{EiConfig, EiMode, MacroMap};
use crate::error::{EicsError, Result};
use crate::rng::{self, StreamRng};
use crate::score::{eics_score, EicsConfig};
use crate::sheaf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub dim: usize,
    pub align: f64,
    pub alpha: f64,
    pub taus: Vec<f64>,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub epsilon: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            align: 0.9,
            alpha: 1.0,
            taus: default_taus(),
            n_seeds: 100,
            base_seed: 1000,
            epsilon: 1e-8,
        }
    }
}

/// 11 evenly spaced points on `[0, 2]`.
pub fn default_taus() -> Vec<f64> {
    (0..11).map(|i| 2.0 * i as f64 / 10.0).collect()
}

impl ToyConfig {
    fn check(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(EicsError::InvalidArgument("toy dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.align) {
            return Err(EicsError::InvalidArgument(format!(
                "align must lie in [0, 1], got {}",
                self.align
            )));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(EicsError::InvalidArgument(format!(
                "tau must be >= 0, got {t}"
            )));
        }
        if self.n_seeds == 0 {
            return Err(EicsError::InvalidArgument("n_seeds must be >= 1".into()));
        }
        Ok(())
    }

    fn ei_config(&self) -> EiConfig {
        EiConfig {
            alpha: self.alpha,
            epsilon: self.epsilon,
            mode: EiMode::Exact,
            macro_map: MacroMap::PartSum,
            ..EiConfig::default()
        }
    }
}

/// The six edge maps, in the order W13, W23, W34, W35, W46, W56.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMaps {
    pub w13: DMatrix<f64>,
    pub w23: DMatrix<f64>,
    pub w34: DMatrix<f64>,
    pub w35: DMatrix<f64>,
    pub w46: DMatrix<f64>,
    pub w56: DMatrix<f64>,
}

/// `scale · N(0, 1) / √d`, drawn row-major.
pub fn rand_matrix(d: usize, scale: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    rng::normal_matrix(rng, d, d) * (scale / (d as f64).sqrt())
}

impl ToyMaps {
    /// Draws the base maps. Draw order: the three branch-one maps, then the
    /// fresh components of W23, W35, W56.
    pub fn draw(dim: usize, align: f64, rng: &mut StreamRng) -> Self {
        let u = rand_matrix(dim, 0.8, rng);
        let a = rand_matrix(dim, 0.9, rng);
        let w = rand_matrix(dim, 0.9, rng);
        let w23 = rand_matrix(dim, 0.8, rng) * (1.0 - align) + &u * align;
        let w35 = rand_matrix(dim, 0.9, rng) * (1.0 - align) + &a * align;
        let w56 = rand_matrix(dim, 0.9, rng) * (1.0 - align) + &w * align;
        Self {
            w13: u,
            w23,
            w34: a,
            w35,
            w46: w,
            w56,
        }
    }

    /// Remixes W56 then W35 toward fresh maps by weight `h`.
    pub fn decohere(&mut self, h: f64, rng: &mut StreamRng) {
        let d = self.w56.nrows();
        self.w56 = &self.w56 * (1.0 - h) + rand_matrix(d, 0.9, rng) * h;
        self.w35 = &self.w35 * (1.0 - h) + rand_matrix(d, 0.9, rng) * h;
    }

    pub fn branch_one(&self) -> DMatrix<f64> {
        &self.w46 * &self.w34 * &self.w13
    }

    pub fn branch_two(&self) -> DMatrix<f64> {
        &self.w56 * &self.w35 * &self.w23
    }

    /// Clean forward activations from inputs `a1`, `a2`.
    pub fn forward(&self, a1: &DVector<f64>, a2: &DVector<f64>) -> [DVector<f64>; 6] {
        let a3 = &self.w13 * a1 + &self.w23 * a2;
        let a4 = &self.w34 * &a3;
        let a5 = &self.w35 * &a3;
        let a6 = &self.w46 * &a4 + &self.w56 * &a5;
        [a1.clone(), a2.clone(), a3, a4, a5, a6]
    }

    pub fn circuit(&self) -> Circuit {
        let d = self.w13.nrows();
        let s = |x: &str| x.to_string();
        Circuit::new(
            (1..=6).map(|i| NodeSpec::new(format!("n{i}"), d)).collect(),
            vec![
                EdgeSpec::new("n1", "n3", self.w13.clone()),
                EdgeSpec::new("n2", "n3", self.w23.clone()),
                EdgeSpec::new("n3", "n4", self.w34.clone()),
                EdgeSpec::new("n3", "n5", self.w35.clone()),
                EdgeSpec::new("n4", "n6", self.w46.clone()),
                EdgeSpec::new("n5", "n6", self.w56.clone()),
            ],
            vec![s("n1"), s("n2")],
            vec![s("n6")],
        )
    }
}

/// Branch paths n1→n3→n4→n6 and n2→n3→n5→n6 (they share n3 and n6).
pub fn branch_partition() -> Partition {
    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Partition {
        parts: vec![
            Part {
                nodes: ids(&["n1", "n3", "n4", "n6"]),
                inputs: ids(&["n1"]),
                outputs: ids(&["n6"]),
            },
            Part {
                nodes: ids(&["n2", "n3", "n5", "n6"]),
                inputs: ids(&["n2"]),
                outputs: ids(&["n6"]),
            },
        ],
    }
}

fn main_stream(seed: u64) -> StreamRng {
    rng::stream(seed, 0)
}

/// Base (undecohered) circuit for `seed` and its branch partition.
pub fn build_toy_circuit(cfg: &ToyConfig, seed: u64) -> (Circuit, Partition) {
    let maps = ToyMaps::draw(cfg.dim, cfg.align, &mut main_stream(seed));
    (maps.circuit(), branch_partition())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyMetrics {
    pub c_sh: f64,
    pub emergence: f64,
    pub eics: f64,
}

struct ToyDraw {
    maps: ToyMaps,
    /// maps before decoherence
    clean: ToyMaps,
    a1: DVector<f64>,
    a2: DVector<f64>,
    observed: [DVector<f64>; 6],
}

fn draw_at_tau(cfg: &ToyConfig, tau: f64, seed: u64) -> ToyDraw {
    let mut g = main_stream(seed);
    let mut maps = ToyMaps::draw(cfg.dim, cfg.align, &mut g);
    let clean = maps.clone();
    let h = (tau / 2.0).min(1.0);
    let mut sub = rng::stream(g.next_u64(), 1);
    maps.decohere(h, &mut sub);
    let a1 = rng::normal_vec(&mut g, cfg.dim);
    let a2 = rng::normal_vec(&mut g, cfg.dim);
    let clean_fwd = maps.forward(&a1, &a2);
    let observed = clean_fwd.map(|a| {
        let noise = rng::normal_vec(&mut g, cfg.dim);
        a + noise * tau
    });
    ToyDraw {
        maps,
        clean,
        a1,
        a2,
        observed,
    }
}

fn state_of(values: &[DVector<f64>; 6]) -> NodeVectors {
    NodeVectors::from_pairs(
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("n{}", i + 1), v.clone())),
    )
}

/// Toy metrics at noise `tau` for one seed.
pub fn metrics_at_tau(cfg: &ToyConfig, tau: f64, seed: u64) -> Result<ToyMetrics> {
    cfg.check()?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(EicsError::InvalidArgument(format!(
            "tau must be >= 0, got {tau}"
        )));
    }
    let draw = draw_at_tau(cfg, tau, seed);
    let circuit = draw.maps.circuit();
    let config = EicsConfig {
        ei: cfg.ei_config(),
        ..EicsConfig::default()
    };
    let r = eics_score(
        &circuit,
        &state_of(&draw.observed),
        &branch_partition(),
        &config,
    )?;
    Ok(ToyMetrics {
        c_sh: r.c_sh,
        emergence: r.emergence,
        eics: r.score,
    })
}

/// Maps, clean activations and observed activations for one draw; exposed
/// for diagnostics and tests.
pub fn toy_state(cfg: &ToyConfig, tau: f64, seed: u64) -> (Circuit, NodeVectors, NodeVectors) {
    let d = draw_at_tau(cfg, tau, seed);
    let clean = state_of(&d.maps.forward(&d.a1, &d.a2));
    (d.maps.circuit(), clean, state_of(&d.observed))
}

/// Inconsistency report when node noise is off but decoherence is on:
/// activations come from the undecohered maps, residuals use the decohered
/// ones.
pub fn decoherence_only(cfg: &ToyConfig, tau: f64, seed: u64) -> Result<sheaf::SheafReport> {
    cfg.check()?;
    let d = draw_at_tau(cfg, tau, seed);
    let state = state_of(&d.clean.forward(&d.a1, &d.a2));
    sheaf::sheaf_inconsistency(&d.maps.circuit(), &state, cfg.epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample standard deviation (ddof = 1) over √N; 0 when N = 1.
    pub se: f64,
}

impl MeanSe {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let se = if x.len() > 1 {
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub eics: MeanSe,
    pub c_sh: MeanSe,
    pub consistency: MeanSe,
    pub emergence: MeanSe,
    pub n_seeds: usize,
    /// False when N = 1 and the standard errors are placeholders.
    pub se_defined: bool,
}

pub const CSV_HEADER: &str =
    "tau,eics_mean,eics_se,csh_mean,csh_se,invcsh_mean,invcsh_se,dei_mean,dei_se,n_seeds";

/// Sweeps every τ over seeds `base_seed + k`, using `jobs` worker threads.
pub fn sweep_with_jobs(cfg: &ToyConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    cfg.check()?;
    let tasks: Vec<(usize, u64)> = (0..cfg.taus.len())
        .flat_map(|t| (0..cfg.n_seeds).map(move |k| (t, k as u64)))
        .collect();
    let run = || -> Result<Vec<ToyMetrics>> {
        tasks
            .par_iter()
            .map(|&(t, k)| metrics_at_tau(cfg, cfg.taus[t], cfg.base_seed + k))
            .collect()
    };
    let metrics = if jobs <= 1 {
        tasks
            .iter()
            .map(|&(t, k)| metrics_at_tau(cfg, cfg.taus[t], cfg.base_seed + k))
            .collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| EicsError::InvalidArgument(format!("thread pool: {e}")))?
            .install(run)?
    };
    Ok(cfg
        .taus
        .iter()
        .enumerate()
        .map(|(t, &tau)| {
            let chunk = &metrics[t * cfg.n_seeds..(t + 1) * cfg.n_seeds];
            let pick = |f: fn(&ToyMetrics) -> f64| chunk.iter().map(f).collect::<Vec<_>>();
            SweepRow {
                tau,
                eics: MeanSe::of(&pick(|m| m.eics)),
                c_sh: MeanSe::of(&pick(|m| m.c_sh)),
                consistency: MeanSe::of(&pick(|m| 1.0 / (1.0 + m.c_sh))),
                emergence: MeanSe::of(&pick(|m| m.emergence)),
                n_seeds: cfg.n_seeds,
                se_defined: cfg.n_seeds > 1,
            }
        })
        .collect())
}

pub fn sweep(cfg: &ToyConfig) -> Result<Vec<SweepRow>> {
    sweep_with_jobs(cfg, 1)
}

/// Sweep table with [`CSV_HEADER`] columns.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.tau,
            r.eics.mean,
            r.eics.se,
            r.c_sh.mean,
            r.c_sh.se,
            r.consistency.mean,
            r.consistency.se,
            r.emergence.mean,
            r.emergence.se,
            r.n_seeds
        ));
    }
    out
}

/// Three curves for plotting: score, consistency factor and emergence.
pub fn plot_data_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau,eics,invcsh,dei\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.tau, r.eics.mean, r.consistency.mean, r.emergence.mean
        ));
    }
    out
}

/// gnuplot script rendering [`plot_data_csv`] output named `data` to a PNG.
pub fn gnuplot_script(data: &str, png: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 800,500\n\
         set output '{png}'\n\
         set xlabel 'noise tau'\n\
         set key top right\n\
         plot '{data}' every ::1 using 1:2 with linespoints title 'EICS', \\\n\
         \x20    '' every ::1 using 1:3 with linespoints title '1/(1+C_sh)', \\\n\
         \x20    '' every ::1 using 1:4 with linespoints title 'normalized dEI'\n"
    )
}
