//! Globally adaptive Gauss–Kronrod (10/21) quadrature.
//!
//! Intervals are bisected in order of decreasing error estimate until the
//! summed estimate falls below `max(abs_tol, rel_tol * |I|)` or the interval
//! budget is spent. Endpoint singularities are expected to be removed by the
//! caller through a change of variables; the rule itself never samples the
//! endpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_980_221_163,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

impl QuadOptions {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    /// Integral of `|f|`, used by callers for cancellation-aware tolerances.
    pub abs_value: f64,
    pub evals: usize,
    pub converged: bool,
}

impl QuadResult {
    pub fn zero() -> Self {
        Self {
            value: 0.0,
            abs_err: 0.0,
            abs_value: 0.0,
            evals: 0,
            converged: true,
        }
    }

    /// Sum of two results over adjacent ranges.
    pub fn combine(self, other: Self) -> Self {
        Self {
            value: self.value + other.value,
            abs_err: self.abs_err + other.abs_err,
            abs_value: self.abs_value + other.abs_value,
            evals: self.evals + other.evals,
            converged: self.converged && other.converged,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    abs_value: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

#[allow(clippy::needless_range_loop)] // j indexes three node tables at once
fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_g = 0.0;
    let mut res_k = fc * WGK[10];
    let mut res_abs = (fc * WGK[10]).abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];

    for j in 0..5 {
        let jtw = 2 * j + 1;
        let dx = half * XGK[jtw];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_g += WG[j] * (f1 + f2);
        res_k += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    for j in 0..5 {
        let jtwm1 = 2 * j;
        let dx = half * XGK[jtwm1];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtwm1] = f1;
        fv2[jtwm1] = f2;
        res_k += WGK[jtwm1] * (f1 + f2);
        res_abs += WGK[jtwm1] * (f1.abs() + f2.abs());
    }

    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let scale = half.abs();
    let value = res_k * half;
    let res_abs = res_abs * scale;
    let res_asc = res_asc * scale;
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    if !value.is_finite() {
        err = f64::INFINITY;
    }
    Panel {
        a,
        b,
        value,
        err,
        abs_value: res_abs,
    }
}

/// Integrate `f` over `[a, b]` (either orientation).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: &QuadOptions) -> QuadResult {
    if a == b {
        return QuadResult::zero();
    }
    let first = gk21(&mut f, a, b);
    let mut evals = 21;
    let mut total = first.value;
    let mut total_err = first.err;
    let mut heap = BinaryHeap::new();
    heap.push(first);

    let tol = |total: f64| opts.abs_tol.max(opts.rel_tol * total.abs());
    while total_err > tol(total) && heap.len() < opts.max_intervals {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid == worst.a || mid == worst.b {
            // interval exhausted at machine resolution
            heap.push(worst);
            break;
        }
        let left = gk21(&mut f, worst.a, mid);
        let right = gk21(&mut f, mid, worst.b);
        evals += 42;
        total += left.value + right.value - worst.value;
        total_err += left.err + right.err - worst.err;
        heap.push(left);
        heap.push(right);
    }

    // resum to shed the drift of the running updates
    let mut value = 0.0;
    let mut err = 0.0;
    let mut abs_value = 0.0;
    for p in heap.iter() {
        value += p.value;
        err += p.err;
        abs_value += p.abs_value;
    }
    QuadResult {
        value,
        abs_err: err,
        abs_value,
        evals,
        converged: err <= tol(value),
    }
}

/// Integrate over consecutive sub-ranges `[pts[0], pts[1]], [pts[1], pts[2]], ...`.
/// Break points at known kinks keep the adaptive budget for the smooth parts.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, pts: &[f64], opts: &QuadOptions) -> QuadResult {
    let mut acc = QuadResult::zero();
    for w in pts.windows(2) {
        if w[1] > w[0] {
            acc = acc.combine(integrate(&mut f, w[0], w[1], opts));
        }
    }
    acc
}
