//! Exact and sampled values of the tower constants.
//!
//! * `a`, `b`: drift of `val 𝔡_{K_n/K_0}` from `n + b`, bounded by `p^-n a`.
//! * `c_norm`: minimum of `val(N_{K_(n+k)/K_n}(x) / x^(p^k) - 1)` over sampled cells.
//! * `m_c`: least `m` with `p^m c_norm >= 1/(p-1)`.
//! * `c_2(n,k)`: exact loss of `R_n` on `K_(n+k)`, attained on powers of `rho_(n+k)`.
//! * `c_3(n,k)`: largest elementary divisor of `1 - g_n` on `O_{K_(n+k)}^perp`.
//! * `n_0`: least shift with `p^(n+n_0) O_{K_n}` inside the kernel of `d`.
//! * `n_1 = ceil(a - b + m_c + 2)`.

use num_traits::Signed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::differentials::{self, Base};
use crate::error::{Error, Result};
use crate::lattice::elementary_divisor_valuations;
use crate::padic::{val_serde, PadicScalar, Val};
use crate::sampling;
use crate::tower::{Tower, TowerParams};

/// Random units sampled per norm cell by default.
pub const DEFAULT_UNIT_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NormCell {
    pub n: usize,
    pub k: usize,
    #[serde(with = "val_serde")]
    pub min: Val,
    /// `rho^i` for a basis power, `unit#j` for the j-th random unit.
    pub witness: String,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceCell {
    pub n: usize,
    pub k: usize,
    #[serde(with = "val_serde")]
    pub c2: Val,
    /// Exponent `i` attaining the maximum.
    pub witness: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GammaCell {
    pub n: usize,
    pub k: usize,
    pub c3: i64,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConstantsReport {
    pub tower: TowerParams,
    pub seed: u64,
    pub unit_samples: usize,
    #[serde(with = "val_serde")]
    pub a: Val,
    #[serde(with = "val_serde")]
    pub b: Val,
    pub different_valuations: Vec<String>,
    #[serde(with = "val_serde")]
    pub c_norm: Val,
    pub c_norm_witness: NormCell,
    pub norm_cells: Vec<NormCell>,
    pub m_c: u32,
    pub trace_cells: Vec<TraceCell>,
    #[serde(with = "val_serde")]
    pub c2_max: Val,
    pub c2_star: i64,
    pub gamma_cells: Vec<GammaCell>,
    pub c3_star: i64,
    pub n0_per_level: Vec<u32>,
    pub n0: u32,
    pub n1: u32,
}

fn cells(tower: &Tower) -> Vec<(usize, usize)> {
    let l = tower.max_level();
    (0..l).flat_map(|n| (1..=l - n).map(move |k| (n, k))).collect()
}

fn cell_rng(seed: u64, n: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 16) | k as u64);
    rng
}

/// `a` and `b` from the exact different valuations over `K_0`.
pub fn different_drift(tower: &Tower) -> Result<(Val, Val, Vec<Val>)> {
    let vals = (0..=tower.max_level())
        .map(|n| differentials::different(tower, n, Base::K0).map(|d| d.val_different))
        .collect::<Result<Vec<_>>>()?;
    let top = tower.max_level();
    let b = vals[top] - top as i64;
    let p = tower.p() as i64;
    let a = vals.iter().enumerate().map(|(n, v)| (*v - n as i64 - b).abs() * p.pow(n as u32)).max().unwrap_or_default();
    Ok((a, b, vals))
}

/// Minimum of `val(N(x)/x^(p^k) - 1)` on the basis powers and random units of one cell.
pub fn norm_cell(tower: &Tower, n: usize, k: usize, units: usize, seed: u64) -> Result<NormCell> {
    let m = n + k;
    let pk = tower.relative_degree(k) as u64;
    let rho = tower.uniformizer(m);
    let mut best: Option<(Val, String)> = None;
    let mut samples = 0;
    let mut consider = |x: &crate::tower::TowerElement, label: String| -> Result<()> {
        let norm = tower.embed(&tower.norm_down(x, n)?, m);
        let diff = tower.sub(&norm, &tower.pow(x, pk));
        samples += 1;
        if diff.is_zero() {
            return Ok(());
        }
        let v = tower.valuation(&diff)? - tower.valuation(x)? * pk as i64;
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, label));
        }
        Ok(())
    };
    let mut power = rho.clone();
    for i in 1..=pk {
        consider(&power, format!("rho^{i}"))?;
        power = tower.mul(&power, &rho);
    }
    let mut rng = cell_rng(seed, n, k);
    for j in 0..units {
        consider(&sampling::random_unit(tower, m, &mut rng), format!("unit#{j}"))?;
    }
    let (min, witness) = best.ok_or_else(|| Error::Internal(format!("norm cell ({n},{k}) had no nonzero sample")))?;
    Ok(NormCell { n, k, min, witness, samples })
}

/// Exact `c_2(n,k) = max_i (i val(rho_(n+k)) - val R_n(rho_(n+k)^i))` over `i < p^k`.
pub fn trace_cell(tower: &Tower, n: usize, k: usize) -> Result<TraceCell> {
    let m = n + k;
    let rho = tower.uniformizer(m);
    let step = tower.uniformizer_valuation(m);
    let mut best = (Val::from_integer(0), 0);
    let mut power = tower.one(m);
    for i in 0..tower.relative_degree(k) {
        let r = tower.normalized_trace(&power, n)?;
        if !r.is_zero() {
            let loss = step * i as i64 - tower.valuation(&r)?;
            if loss > best.0 {
                best = (loss, i);
            }
        }
        power = tower.mul(&power, &rho);
    }
    Ok(TraceCell { n, k, c2: best.0, witness: best.1 })
}

/// `c_2^*` from the exact trace cells alone, without the sampled constants.
pub fn c2_star(tower: &Tower) -> Result<i64> {
    let cells = cells(tower).par_iter().map(|&(n, k)| trace_cell(tower, n, k)).collect::<Result<Vec<_>>>()?;
    Ok(cells.iter().map(|c| c.c2).max().unwrap_or_default().ceil().to_integer())
}

/// Matrix of `1 - g_n` on the basis `zeta^j` (`p` not dividing `j`) of `O_{K_(n+k)}^perp`.
pub fn gamma_matrix(tower: &Tower, n: usize, k: usize) -> Vec<Vec<PadicScalar>> {
    let m = n + k;
    let p = tower.p() as usize;
    let idx: Vec<usize> = (0..tower.degree(m)).filter(|j| j % p != 0).collect();
    let g = tower.generator_chain(m, n as u32);
    let prec = tower.prec();
    let mut rows = vec![Vec::with_capacity(idx.len()); idx.len()];
    for &j in &idx {
        let z = tower.zeta_pow(m, j as i64);
        let img = tower.sub(&z, &tower.galois_apply(&g, &z));
        let coeffs = tower.coeffs(&img);
        for (r, &jr) in idx.iter().enumerate() {
            rows[r].push(coeffs[jr].truncate(prec));
        }
    }
    rows
}

pub fn gamma_cell(tower: &Tower, n: usize, k: usize) -> Result<GammaCell> {
    let mat = gamma_matrix(tower, n, k);
    let dim = mat.len();
    let eds = elementary_divisor_valuations(mat)?;
    Ok(GammaCell { n, k, c3: eds.last().copied().unwrap_or(0), dim })
}

/// `m_c`: least `m >= 0` with `p^m c >= 1/(p-1)`.
pub fn m_c(p: u32, c: Val) -> u32 {
    let target = Val::new(1, p as i64 - 1);
    (0..64).find(|&m| c * (p as i64).pow(m) >= target).expect("c_norm is positive")
}

pub fn n1_from(a: Val, b: Val, m_c: u32) -> u32 {
    (a - b + m_c as i64 + 2).ceil().to_integer().max(0) as u32
}

pub fn estimate_constants(tower: &Tower, seed: u64, unit_samples: usize) -> Result<ConstantsReport> {
    let (a, b, dvals) = different_drift(tower)?;
    let cs = cells(tower);
    let norm_cells =
        cs.par_iter().map(|&(n, k)| norm_cell(tower, n, k, unit_samples, seed)).collect::<Result<Vec<_>>>()?;
    let trace_cells = cs.par_iter().map(|&(n, k)| trace_cell(tower, n, k)).collect::<Result<Vec<_>>>()?;
    let gamma_cells = cs.par_iter().map(|&(n, k)| gamma_cell(tower, n, k)).collect::<Result<Vec<_>>>()?;
    let n0_per_level = (1..=tower.max_level())
        .into_par_iter()
        .map(|n| differentials::trivial_inclusion_shift(tower, n))
        .collect::<Result<Vec<_>>>()?;
    let c_norm_witness = norm_cells.iter().min_by(|x, y| x.min.cmp(&y.min)).cloned().expect("at least one cell");
    let c_norm = c_norm_witness.min;
    if c_norm <= Val::from_integer(0) {
        return Err(Error::Internal(format!("norm congruence constant {c_norm} is not positive")));
    }
    let m_c = m_c(tower.p(), c_norm);
    let c2_max = trace_cells.iter().map(|c| c.c2).max().unwrap_or_default();
    let c3_star = gamma_cells.iter().map(|c| c.c3).max().unwrap_or(0);
    Ok(ConstantsReport {
        tower: tower.params().clone(),
        seed,
        unit_samples,
        a,
        b,
        different_valuations: dvals.iter().map(|v| v.to_string()).collect(),
        c_norm,
        c_norm_witness,
        norm_cells,
        m_c,
        trace_cells,
        c2_max,
        c2_star: c2_max.ceil().to_integer(),
        gamma_cells,
        c3_star,
        n0: n0_per_level.iter().copied().max().unwrap_or(0),
        n0_per_level,
        n1: n1_from(a, b, m_c),
    })
}

impl ConstantsReport {
    pub fn norm_cell(&self, n: usize, k: usize) -> Option<&NormCell> {
        self.norm_cells.iter().find(|c| (c.n, c.k) == (n, k))
    }

    pub fn trace_cell(&self, n: usize, k: usize) -> Option<&TraceCell> {
        self.trace_cells.iter().find(|c| (c.n, c.k) == (n, k))
    }

    pub fn gamma_cell(&self, n: usize, k: usize) -> Option<&GammaCell> {
        self.gamma_cells.iter().find(|c| (c.n, c.k) == (n, k))
    }
}
