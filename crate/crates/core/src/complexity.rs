//! Parameter and FLOP accounting, BU offsets and the CPU timing protocol.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{synth_batch, FeatureKind, ModelSpec, VqaModel};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, RNG_ALGORITHM};

/// Cost model for FLOP counting. Every report carries [`FlopConvention::id`],
/// and counts are only comparable under the same id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopConvention {
    /// Count a multiply-add as two FLOPs (otherwise one).
    pub macs_as_two: bool,
    /// FLOPs charged per exp, tanh, sigmoid or square root.
    pub transcendental_cost: u64,
    pub fft_cost: FftCost,
}

/// Formula used to charge one length-`N` transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FftCost {
    /// `round(5·N·log2 N)`.
    FiveNLog2N,
}

impl Default for FlopConvention {
    fn default() -> Self {
        FlopConvention::MAC2
    }
}

impl FlopConvention {
    pub const MAC2: FlopConvention = FlopConvention {
        macs_as_two: true,
        transcendental_cost: 1,
        fft_cost: FftCost::FiveNLog2N,
    };

    pub const MAC1: FlopConvention = FlopConvention {
        macs_as_two: false,
        transcendental_cost: 1,
        fft_cost: FftCost::FiveNLog2N,
    };

    /// Named conventions accepted on the command line.
    pub const NAMES: [&'static str; 2] = ["mac2", "mac1"];

    pub fn by_name(name: &str) -> Result<FlopConvention> {
        match name.to_ascii_lowercase().as_str() {
            "mac2" => Ok(FlopConvention::MAC2),
            "mac1" => Ok(FlopConvention::MAC1),
            other => Err(Error::config(format!(
                "unknown FLOP convention '{other}' (valid: {})",
                FlopConvention::NAMES.join(", ")
            ))),
        }
    }

    pub fn id(&self) -> String {
        let fft = match self.fft_cost {
            FftCost::FiveNLog2N => "fft5nlog2n",
        };
        format!(
            "{}-t{}-{fft}",
            if self.macs_as_two { "mac2" } else { "mac1" },
            self.transcendental_cost
        )
    }

    /// `m×k · k×n`.
    pub fn matmul(&self, m: u64, k: u64, n: u64) -> u64 {
        let macs = m * k * n;
        if self.macs_as_two {
            2 * macs
        } else {
            macs
        }
    }

    /// Pointwise add, multiply, relu or bias add over `n` values.
    pub fn elementwise(&self, n: u64) -> u64 {
        n
    }

    pub fn transcendental(&self, n: u64) -> u64 {
        n * self.transcendental_cost
    }

    pub fn fft(&self, n: u64) -> u64 {
        match self.fft_cost {
            FftCost::FiveNLog2N => {
                if n <= 1 {
                    0
                } else {
                    let nf = n as f64;
                    (5.0 * nf * nf.log2()).round() as u64
                }
            }
        }
    }

    /// Complex Hadamard product of two length-`n` spectra.
    pub fn complex_mul(&self, n: u64) -> u64 {
        6 * n
    }

    /// Count sketch of a length-`d` input: one signed accumulate each.
    pub fn count_sketch(&self, d: u64) -> u64 {
        d
    }

    pub fn sum_pool(&self, n_in: u64, n_out: u64) -> u64 {
        n_in - n_out
    }

    pub fn softmax(&self, n: u64) -> u64 {
        n * (self.transcendental_cost + 2)
    }

    /// Squares and sum, one square root, one division per entry.
    pub fn l2_normalize(&self, n: u64) -> u64 {
        2 * n + self.transcendental_cost + n
    }
}

/// Parameters of the bottom-up detector, added to every BU model so that it
/// is compared fairly with grid backbones whose extractor is not counted.
pub const BU_PARAM_OFFSET: u64 = 65_650_000;
/// Per-image forward FLOPs of the bottom-up detector.
pub const BU_FLOP_OFFSET: u64 = 687_000_000_000;

/// Label written into every report's environment block.
pub const TIMING_DOMAIN: &str = "cpu-single-thread";

/// Wall-clock statistics over the measured runs, in microseconds per
/// mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallTime {
    pub median_us: f64,
    pub mean_us: f64,
    pub min_us: f64,
    pub runs: usize,
}

impl WallTime {
    /// Order statistics of `samples` (microseconds). `None` if empty.
    pub fn from_samples(samples: &[f64]) -> Option<WallTime> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        Some(WallTime {
            median_us: median,
            mean_us: s.iter().sum::<f64>() / n as f64,
            min_us: s[0],
            runs: n,
        })
    }
}

/// How forward passes are timed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingProtocol {
    pub batch: usize,
    pub warmup_runs: usize,
    pub measured_runs: usize,
}

impl Default for TimingProtocol {
    fn default() -> Self {
        TimingProtocol {
            batch: 64,
            warmup_runs: 2,
            measured_runs: 10,
        }
    }
}

impl TimingProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.measured_runs == 0 {
            return Err(Error::config("timing needs a positive batch and at least one measured run"));
        }
        Ok(())
    }
}

/// Where and how a report was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvironment {
    pub prng: String,
    pub seed: u64,
    pub dtype: String,
    pub batch: usize,
    pub convention: String,
    pub timing_domain: String,
}

/// Complexity of one model configuration. Offsets are kept apart from the
/// measured values; the totals are their sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub config_id: String,
    pub trainable_params: u64,
    pub bu_param_offset: u64,
    pub total_params: u64,
    /// Forward FLOPs per sample.
    pub flops: u64,
    pub bu_flop_offset: u64,
    pub total_flops: u64,
    pub wall_time: Option<WallTime>,
    pub environment: ReportEnvironment,
}

impl ComplexityReport {
    /// Counts `spec` in closed form. `wall_time` comes from
    /// [`time_forward`] when timing is enabled.
    pub fn for_spec(
        spec: &ModelSpec,
        conv: &FlopConvention,
        batch: usize,
        wall_time: Option<WallTime>,
    ) -> Result<ComplexityReport> {
        let params = spec.param_count()?;
        let flops = spec.flop_count(conv, 1)?;
        let bu = spec.profile.kind == FeatureKind::BU;
        let (po, fo) = if bu { (BU_PARAM_OFFSET, BU_FLOP_OFFSET) } else { (0, 0) };
        Ok(ComplexityReport {
            config_id: spec.config_id(),
            trainable_params: params,
            bu_param_offset: po,
            total_params: params + po,
            flops,
            bu_flop_offset: fo,
            total_flops: flops + fo,
            wall_time,
            environment: ReportEnvironment {
                prng: RNG_ALGORITHM.to_string(),
                seed: spec.seed,
                dtype: spec.dtype.name().to_string(),
                batch,
                convention: conv.id(),
                timing_domain: TIMING_DOMAIN.to_string(),
            },
        })
    }
}

/// Exact number of trainable scalars; frozen sketch tables are excluded.
pub fn count_params(model: &VqaModel) -> u64 {
    model.param_count()
}

/// Forward FLOPs of `batch` samples, `batch × per-sample` exactly.
pub fn count_flops(model: &VqaModel, conv: &FlopConvention, batch: u64) -> Result<u64> {
    model.spec().flop_count(conv, batch)
}

/// Times forward passes on one pre-generated synthetic batch. Warmup runs
/// are discarded. Runs on the calling thread only.
pub fn time_forward(model: &VqaModel, protocol: &TimingProtocol) -> Result<WallTime> {
    protocol.validate()?;
    let spec = model.spec();
    let batch = synth_batch(
        &spec.profile,
        protocol.batch,
        derive_seed(spec.seed, "timing"),
        spec.answers,
        false,
        spec.dtype,
    )?;
    for _ in 0..protocol.warmup_runs {
        std::hint::black_box(model.forward(&batch.v, &batch.q)?);
    }
    let mut samples = Vec::with_capacity(protocol.measured_runs);
    for _ in 0..protocol.measured_runs {
        let start = Instant::now();
        std::hint::black_box(model.forward(&batch.v, &batch.q)?);
        samples.push(start.elapsed().as_secs_f64() * 1e6);
    }
    Ok(WallTime::from_samples(&samples).expect("at least one measured run"))
}
