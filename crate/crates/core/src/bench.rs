//! Wall-clock timing of one gradient step through a composition
//! (forward with tape, then backward) against a dense `n × n` reference.

use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::dense::{haar_unitary, CMatrix};
use crate::error::{EunnError, Result};
use crate::unitary::{CompositionGrad, ForwardTape, MeshStyle, UnitaryComposition};
use crate::{ComplexVec, Rng};

pub const TIMING_HEADER: &str =
    "style,n,capacity,samples,median_us,iqr_us,dense_median_us,dense_iqr_us,median_ratio_prev,dense_ratio_prev";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    /// Capacities for the tunable style; fft rows always use `log2 n`.
    pub capacities: Vec<usize>,
    pub styles: Vec<MeshStyle>,
    pub samples: usize,
    /// Minimum duration of one timing sample; short operations are repeated.
    pub min_sample_us: f64,
    pub dense: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![128, 256, 512, 1024],
            capacities: vec![2, 8],
            styles: vec![MeshStyle::Tunable, MeshStyle::Fft],
            samples: 15,
            min_sample_us: 2000.0,
            dense: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub samples: usize,
    pub median: f64,
    pub iqr: f64,
}

impl Summary {
    /// Median and interquartile range, in the unit of `values`.
    pub fn of(values: &[f64]) -> Summary {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let x = p * (v.len() - 1) as f64;
            let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
        };
        Summary {
            samples: v.len(),
            median: q(0.5),
            iqr: q(0.75) - q(0.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub style: MeshStyle,
    pub n: usize,
    pub capacity: usize,
    pub composition: Summary,
    pub dense: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    /// Rows matching `style` and `capacity`, in increasing `n`.
    pub fn series(&self, style: MeshStyle, capacity: Option<usize>) -> Vec<&TimingRow> {
        let mut rows: Vec<&TimingRow> = self
            .rows
            .iter()
            .filter(|r| r.style == style && capacity.is_none_or(|c| r.capacity == c))
            .collect();
        rows.sort_by_key(|r| r.n);
        rows
    }

    /// Median ratios between consecutive dimensions of a series.
    pub fn ratios(series: &[&TimingRow], dense: bool) -> Vec<f64> {
        series
            .windows(2)
            .filter_map(|w| {
                let (a, b) = if dense {
                    (w[0].dense?.median, w[1].dense?.median)
                } else {
                    (w[0].composition.median, w[1].composition.median)
                };
                Some(b / a)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TIMING_HEADER}\n");
        let mut prev: Option<&TimingRow> = None;
        for r in &self.rows {
            let same_series = prev.is_some_and(|p| {
                p.style == r.style && (p.style == MeshStyle::Fft || p.capacity == r.capacity) && p.n < r.n
            });
            let ratio = |f: &dyn Fn(&TimingRow) -> Option<f64>| match (same_series, prev) {
                (true, Some(p)) => match (f(p), f(r)) {
                    (Some(a), Some(b)) => format!("{:.3}", b / a),
                    _ => String::new(),
                },
                _ => String::new(),
            };
            let fmt = |s: Option<Summary>, f: fn(&Summary) -> f64| s.map_or(String::new(), |s| format!("{:.3}", f(&s)));
            out.push_str(&format!(
                "{},{},{},{},{:.3},{:.3},{},{},{},{}\n",
                r.style,
                r.n,
                r.capacity,
                r.composition.samples,
                r.composition.median,
                r.composition.iqr,
                fmt(r.dense, |s| s.median),
                fmt(r.dense, |s| s.iqr),
                ratio(&|x: &TimingRow| Some(x.composition.median)),
                ratio(&|x: &TimingRow| x.dense.map(|d| d.median)),
            ));
            prev = Some(r);
        }
        out
    }
}

/// Repetitions of `op` needed for one timing sample to last at least
/// `min_sample_us`.
pub fn calibrate(min_sample_us: f64, op: &mut dyn FnMut() -> Result<()>) -> Result<usize> {
    op()?;
    let mut reps = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..reps {
            op()?;
        }
        let us = t.elapsed().as_secs_f64() * 1e6;
        if us >= min_sample_us || reps >= 1 << 24 {
            return Ok(reps);
        }
        reps = (reps * 2).max((reps as f64 * min_sample_us / us.max(1e-3)).ceil() as usize / 2);
    }
}

/// Per-call microseconds of one sample of `reps` calls.
pub fn sample(reps: usize, op: &mut dyn FnMut() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    for _ in 0..reps {
        op()?;
    }
    Ok(t.elapsed().as_secs_f64() * 1e6 / reps as f64)
}

type Op = Box<dyn FnMut() -> Result<()>>;

/// Forward with tape and backward through `w`, reusing all buffers.
fn composition_op(w: UnitaryComposition, rng: &mut Rng) -> Result<Op> {
    let k = w.compile()?;
    let n = w.n();
    let x = ComplexVec::random(n, rng);
    let dy = ComplexVec::random(n, rng);
    let mut tape = ForwardTape::new(n, k.num_layers());
    let (mut y, mut dx, mut scratch) = (ComplexVec::zeros(n), ComplexVec::zeros(n), ComplexVec::zeros(n));
    let mut grad = CompositionGrad::zeros_like(&w);
    Ok(Box::new(move || {
        k.forward_into(&x, &mut tape, &mut y)?;
        k.backward_into(&w, &tape, &dy, &mut dx, &mut scratch, &mut grad)?;
        std::hint::black_box((&y, &dx, &grad));
        Ok(())
    }))
}

/// Dense reference: `y = W x`, `dx = W† dy` and the gradient `dy x†`.
fn dense_op(n: usize, rng: &mut Rng) -> Result<Op> {
    let w: CMatrix = haar_unitary(n, rng)?;
    let x = DVector::from_fn(n, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let dy = DVector::from_fn(n, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let mut grad = CMatrix::zeros(n, n);
    let (mut y, mut dx) = (DVector::zeros(n), DVector::zeros(n));
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    Ok(Box::new(move || {
        y.gemv(one, &w, &x, zero);
        dx.gemv_ad(one, &w, &dy, zero);
        grad.gerc(one, &dy, &x, zero);
        std::hint::black_box((&y, &dx, &grad));
        Ok(())
    }))
}

/// Times every configuration. Samples are taken in rounds that visit each
/// configuration once, so slow periods of the machine spread over all rows
/// instead of landing on one.
pub fn run_bench(cfg: &BenchConfig) -> Result<TimingReport> {
    if cfg.samples == 0 {
        return Err(EunnError::Config("bench needs at least one sample".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut dims = cfg.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    // (style, n, capacity, op index, dense op index)
    let mut plan = Vec::new();
    let mut ops: Vec<Op> = Vec::new();
    let mut dense_index = std::collections::BTreeMap::new();
    for &style in &cfg.styles {
        let caps: Vec<Option<usize>> = match style {
            MeshStyle::Tunable => cfg.capacities.iter().copied().map(Some).collect(),
            MeshStyle::Fft => vec![None],
        };
        for cap in caps {
            for &n in &dims {
                let mut w = match cap {
                    Some(c) => UnitaryComposition::tunable(n, c)?,
                    None => UnitaryComposition::fft(n)?,
                };
                w.randomize(&mut rng);
                let capacity = w.capacity();
                ops.push(composition_op(w, &mut rng)?);
                let op = ops.len() - 1;
                let d = if cfg.dense {
                    if let std::collections::btree_map::Entry::Vacant(e) = dense_index.entry(n) {
                        ops.push(dense_op(n, &mut rng)?);
                        e.insert(ops.len() - 1);
                    }
                    dense_index.get(&n).copied()
                } else {
                    None
                };
                plan.push((style, n, capacity, op, d));
            }
        }
    }
    let reps = ops
        .iter_mut()
        .map(|op| calibrate(cfg.min_sample_us, op.as_mut()))
        .collect::<Result<Vec<_>>>()?;
    let mut times = vec![Vec::with_capacity(cfg.samples); ops.len()];
    for _ in 0..cfg.samples {
        for (i, op) in ops.iter_mut().enumerate() {
            times[i].push(sample(reps[i], op.as_mut())?);
        }
    }
    let rows = plan
        .into_iter()
        .map(|(style, n, capacity, op, d)| TimingRow {
            style,
            n,
            capacity,
            composition: Summary::of(&times[op]),
            dense: d.map(|i| Summary::of(&times[i])),
        })
        .collect();
    Ok(TimingReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_quantiles() {
        let s = Summary::of(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.iqr, 2.0);
        assert_eq!(s.samples, 5);
    }

    #[test]
    fn small_report_shape() {
        let cfg = BenchConfig {
            dims: vec![16, 8],
            capacities: vec![2],
            samples: 3,
            min_sample_us: 50.0,
            ..Default::default()
        };
        let report = run_bench(&cfg).unwrap();
        assert_eq!(report.rows.len(), 4);
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TIMING_HEADER));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows[0][..3], ["tunable", "8", "2"]);
        assert_eq!(rows[1][..3], ["tunable", "16", "2"]);
        assert_eq!(rows[3][..3], ["fft", "16", "4"]);
        assert!(rows[0][8].is_empty() && !rows[1][8].is_empty());
        assert!(rows[2][8].is_empty());
        assert!(report.rows.iter().all(|r| r.composition.samples == 3 && r.dense.is_some()));
    }

    #[test]
    fn invalid_dimension_is_reported() {
        let cfg = BenchConfig {
            dims: vec![12],
            styles: vec![MeshStyle::Fft],
            samples: 1,
            min_sample_us: 1.0,
            dense: false,
            ..Default::default()
        };
        assert!(matches!(run_bench(&cfg), Err(EunnError::UnsupportedDimension { .. })));
    }
}
