//! Monte-Carlo studies: perturb the filter, sample, reconstruct with and
//! without calibration, and score.
//!
//! Every trial draws from its own ChaCha stream derived from the master seed,
//! so results do not depend on scheduling or thread count.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{dftti_calibrate, impulse_from_dense, mbc_calibrate, rebuild_system, Branch, CalibrationInput, CountingSampler};
use crate::discretize::{accumulate_and_dump_response, bilinear_transform, bilinear_transform_prewarped, discretize, energy_length, ImpulseResponse};
use crate::filter::{
    lc_transfer_function, perturb_components, synthesize_nominal, Approximation, Component, LcComponents,
    RationalTransferFunction, ToleranceModel,
};
use crate::rd::{apply_dictionary, generate_chipping, generate_multitone, ChippingSequence, FourierDictionary, RdSystem};
use crate::solver::{solve_bpdn, BpdnConfig, BpdnResult, MeasurementModel, SensingOperator};
use crate::{Error, Result};

/// Reported in place of `+∞` when a reconstruction is exact.
pub const SNR_CAP_DB: f64 = 300.0;
/// First column of every trial CSV.
pub const TRIAL_SCHEMA_VERSION: u32 = 1;
pub const SWEEP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Butterworth,
    Chebyshev,
    /// Ideal integrator over each output period (`L = R` flat taps).
    AccumulateAndDump,
}

impl FilterKind {
    pub fn approximation(self) -> Option<Approximation> {
        match self {
            FilterKind::Butterworth => Some(Approximation::Butterworth),
            FilterKind::Chebyshev => Some(Approximation::Chebyshev),
            FilterKind::AccumulateAndDump => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Perturbation,
    Calibration,
    MqSweep,
    Benchmark,
}

impl std::str::FromStr for Study {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturbation" => Ok(Study::Perturbation),
            "calibration" => Ok(Study::Calibration),
            "mq-sweep" => Ok(Study::MqSweep),
            "benchmark" => Ok(Study::Benchmark),
            other => Err(Error::InvalidParameter(format!("unknown study '{other}'"))),
        }
    }
}

impl std::fmt::Display for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Study::Perturbation => "perturbation",
            Study::Calibration => "calibration",
            Study::MqSweep => "mq-sweep",
            Study::Benchmark => "benchmark",
        })
    }
}

/// Which measurement models a trial reconstructs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Nominal,
    Oracle,
    Calibrated,
    Dftti,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    /// Model length; defaults to the filter's own.
    #[serde(default)]
    pub l: Option<usize>,
}

impl Default for Dims {
    fn default() -> Self {
        Self { n: 12_600, m: 1050, r: 12, l: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub filter: FilterKind,
    pub tolerance: ToleranceModel,
    /// Components redrawn per trial.
    pub components: Vec<Component>,
    pub trials: usize,
    pub dims: Dims,
    pub grid_rate_hz: f64,
    /// Rate of the bilinear transform; the grid rate when absent.
    pub discretization_rate_hz: Option<f64>,
    /// Match the analog response at this frequency when discretizing.
    pub prewarp_hz: Option<f64>,
    /// The hardware response keeps taps until this fraction of its energy is left.
    pub hardware_tail_energy: f64,
    /// Length of the response evaluated before the energy rule is applied.
    pub hardware_max_taps: usize,
    pub k_input: usize,
    pub k_calib: usize,
    pub m_q: usize,
    pub random_phase: bool,
    pub solver: BpdnConfig,
    pub master_seed: u64,
    /// Reconstructions per trial; study defaults when absent.
    pub models: Option<Vec<Model>>,
    pub mq_list: Vec<usize>,
    pub k_list: Vec<usize>,
    pub probe_budget: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            filter: FilterKind::Butterworth,
            tolerance: ToleranceModel::default(),
            components: Component::ALL.to_vec(),
            trials: 100,
            dims: Dims::default(),
            grid_rate_hz: 12_600.0,
            discretization_rate_hz: None,
            prewarp_hz: None,
            hardware_tail_energy: 1e-20,
            hardware_max_taps: 2048,
            k_input: 5,
            k_calib: 10,
            m_q: 189,
            random_phase: false,
            solver: BpdnConfig::default(),
            master_seed: 2016,
            models: None,
            mq_list: vec![42, 63, 105, 126, 189, 315, 630, 1050, 2100, 4200, 8400],
            k_list: vec![5, 10, 20, 50],
            probe_budget: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_length(&self) -> usize {
        self.dims.l.unwrap_or(match self.filter.approximation() {
            Some(a) => a.default_length(),
            None => self.dims.r,
        })
    }

    pub fn discretization_rate(&self) -> f64 {
        self.discretization_rate_hz.unwrap_or(self.grid_rate_hz)
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { n, m, r, .. } = self.dims;
        if r == 0 || m == 0 || n != m * r {
            return Err(Error::InvalidParameter(format!("dims must satisfy N = M·R, got N={n} M={m} R={r}")));
        }
        let l = self.model_length();
        if l == 0 || l > n {
            return Err(Error::InvalidParameter(format!("model length {l} must be in 1..={n}")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if !(self.grid_rate_hz > 0.0 && self.grid_rate_hz.is_finite()) {
            return Err(Error::InvalidParameter("grid_rate_hz must be positive".into()));
        }
        if let Some(f) = self.discretization_rate_hz {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidParameter("discretization_rate_hz must be positive".into()));
            }
        }
        if !(self.hardware_tail_energy >= 0.0 && self.hardware_tail_energy < 1.0) {
            return Err(Error::InvalidParameter("hardware_tail_energy must be in [0, 1)".into()));
        }
        if self.hardware_max_taps < l {
            return Err(Error::InvalidParameter("hardware_max_taps must be at least the model length".into()));
        }
        if self.k_input == 0 || self.k_calib == 0 {
            return Err(Error::InvalidParameter("tone counts must be >= 1".into()));
        }
        if self.m_q == 0 {
            return Err(Error::InvalidParameter("m_q must be >= 1".into()));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("component subset is empty".into()));
        }
        if self.mq_list.contains(&0) || self.k_list.contains(&0) {
            return Err(Error::InvalidParameter("sweep lists must be positive".into()));
        }
        self.tolerance.validate()?;
        self.solver.validate()
    }

    fn models_for(&self, study: Study) -> Vec<Model> {
        self.models.clone().unwrap_or_else(|| match study {
            Study::Perturbation => vec![Model::Nominal, Model::Oracle],
            Study::Calibration => vec![Model::Nominal, Model::Calibrated],
            Study::MqSweep => vec![],
            Study::Benchmark => vec![Model::Nominal, Model::Oracle, Model::Calibrated, Model::Dftti],
        })
    }
}

/// One Monte-Carlo trial. SNRs are in dB, times in seconds; fields for
/// phases a study does not run are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub trial: usize,
    pub components: String,
    pub hardware_taps: Option<usize>,
    pub rmse_uncalibrated: Option<f64>,
    pub rmse_calibrated: Option<f64>,
    pub rmse_dftti: Option<f64>,
    pub snr_nominal_model: Option<f64>,
    pub snr_oracle_model: Option<f64>,
    pub snr_calibrated: Option<f64>,
    pub snr_dftti: Option<f64>,
    pub branch: Option<Branch>,
    pub samples_mbc: Option<usize>,
    pub samples_dftti: Option<usize>,
    pub time_setup_s: Option<f64>,
    pub time_mbc_s: Option<f64>,
    pub time_dftti_s: Option<f64>,
    pub time_reconstruction_s: Option<f64>,
    pub error: Option<String>,
}

impl TrialRecord {
    fn empty(trial: usize, components: &[Component]) -> Self {
        Self {
            schema_version: TRIAL_SCHEMA_VERSION,
            trial,
            components: components.iter().map(|c| c.name()).collect::<Vec<_>>().join("+"),
            hardware_taps: None,
            rmse_uncalibrated: None,
            rmse_calibrated: None,
            rmse_dftti: None,
            snr_nominal_model: None,
            snr_oracle_model: None,
            snr_calibrated: None,
            snr_dftti: None,
            branch: None,
            samples_mbc: None,
            samples_dftti: None,
            time_setup_s: None,
            time_mbc_s: None,
            time_dftti_s: None,
            time_reconstruction_s: None,
            error: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// `(1/√L)·‖a − b‖₂`.
pub fn rmse(a: &ImpulseResponse, b: &ImpulseResponse) -> Result<f64> {
    rmse_slices(&a.samples, &b.samples)
}

pub fn rmse_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!("rmse of lengths {} and {}", a.len(), b.len())));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// `20·log10(‖x‖ / ‖x − x̂‖)`, capped at [`SNR_CAP_DB`].
pub fn snr(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch(format!("snr of lengths {} and {}", x.len(), x_hat.len())));
    }
    let signal: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if signal == 0.0 {
        return Err(Error::InvalidParameter("snr reference signal is zero".into()));
    }
    let err: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if err == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((20.0 * (signal / err).log10()).min(SNR_CAP_DB))
}

/// BPDN over `A = Φ·Ψ`, returning `Re(Ψ α)` and the solver report.
pub fn reconstruct<P: MeasurementModel + ?Sized>(
    phi: &P,
    dict: &FourierDictionary,
    y: &[f64],
    cfg: &BpdnConfig,
) -> Result<(Vec<f64>, BpdnResult<Complex64>)> {
    let op = SensingOperator::new(phi, dict);
    let yc: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let res = solve_bpdn(&op, &yc, cfg)?;
    if !res.converged {
        log::debug!("BPDN stopped with {:?} after {} iterations", res.status, res.iterations);
    }
    let x = apply_dictionary(dict, &res.x)?;
    Ok((x, res))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed per-study state: nominal filter, chipping and dictionary.
pub struct StudyContext {
    pub cfg: ExperimentConfig,
    pub nominal_components: Option<LcComponents>,
    pub analog: Option<RationalTransferFunction>,
    pub discrete: Option<RationalTransferFunction>,
    pub h_nominal: ImpulseResponse,
    pub chipping: ChippingSequence,
    pub nominal: RdSystem,
    pub dict: FourierDictionary,
}

impl StudyContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let l = cfg.model_length();
        let rate = cfg.discretization_rate();
        let (nominal_components, analog, discrete, h_nominal) = match cfg.filter.approximation() {
            Some(a) => {
                let comps = synthesize_nominal(a);
                let analog = lc_transfer_function(&comps)?;
                let discrete = match cfg.prewarp_hz {
                    Some(f) => bilinear_transform_prewarped(&analog, rate, f)?,
                    None => bilinear_transform(&analog, rate)?,
                };
                let h = discretize_with(&analog, rate, cfg.prewarp_hz, l)?;
                (Some(comps), Some(analog), Some(discrete), h)
            }
            None => (None, None, None, accumulate_and_dump_response(l, rate)?),
        };
        let chipping = generate_chipping(cfg.dims.n, splitmix(cfg.master_seed ^ 0xC41F))?;
        let nominal = RdSystem::new(chipping.clone(), h_nominal.clone(), cfg.dims.r)?;
        Ok(Self {
            cfg: cfg.clone(),
            nominal_components,
            analog,
            discrete,
            h_nominal,
            chipping,
            nominal,
            dict: FourierDictionary::new(cfg.dims.n),
        })
    }

    fn trial_rng(&self, trial: usize, salt: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.cfg.master_seed ^ salt));
        rng.set_stream(trial as u64);
        rng
    }

    /// Perturbed hardware response, kept long enough to satisfy the energy rule.
    pub fn hardware_response(&self, components: &LcComponents) -> Result<ImpulseResponse> {
        let analog = lc_transfer_function(components)?;
        let long = discretize_with(&analog, self.cfg.discretization_rate(), self.cfg.prewarp_hz, self.cfg.hardware_max_taps)?;
        let keep = energy_length(&long.samples, self.cfg.hardware_tail_energy).max(self.cfg.model_length());
        Ok(long.truncated(keep))
    }

    fn perturbed_components<R: rand::Rng>(&self, rng: &mut R) -> Result<LcComponents> {
        let nominal = self
            .nominal_components
            .ok_or_else(|| Error::InvalidParameter("perturbation studies need an LC filter".into()))?;
        perturb_components(&nominal, &self.cfg.tolerance, &self.cfg.components, rng)
    }

    /// Calibration record of `M_q·R` samples with periodically extended chipping.
    fn calibration_systems(&self, m_q: usize, hardware: &ImpulseResponse) -> Result<(RdSystem, RdSystem)> {
        let n_q = m_q * self.cfg.dims.r;
        let chip = self.chipping.periodic_extension(n_q);
        if hardware.len() > n_q {
            return Err(Error::DimensionMismatch(format!(
                "calibration record of {n_q} samples is shorter than the {}-tap hardware response",
                hardware.len()
            )));
        }
        let nominal = RdSystem::new(chip.clone(), self.h_nominal.clone(), self.cfg.dims.r)?;
        let actual = RdSystem::new(chip, hardware.clone(), self.cfg.dims.r)?;
        Ok((nominal, actual))
    }

    fn run_trial(&self, trial: usize, study: Study) -> TrialRecord {
        let mut rec = TrialRecord::empty(trial, &self.cfg.components);
        if let Err(e) = self.fill_trial(&mut rec, study) {
            log::warn!("trial {trial} failed: {e}");
            rec.error = Some(e.to_string());
        }
        rec
    }

    fn fill_trial(&self, rec: &mut TrialRecord, study: Study) -> Result<()> {
        let cfg = &self.cfg;
        let l = cfg.model_length();
        let models = cfg.models_for(study);
        let mut rng = self.trial_rng(rec.trial, 0x7121);

        let t0 = Instant::now();
        let comps = self.perturbed_components(&mut rng)?;
        let h_hw = self.hardware_response(&comps)?;
        rec.hardware_taps = Some(h_hw.len());
        let h_hw_head = h_hw.truncated(l);
        rec.rmse_uncalibrated = Some(rmse(&h_hw_head, &self.h_nominal)?);
        let actual = self.nominal.with_filter(h_hw.clone())?;
        let x = generate_multitone(cfg.k_input, cfg.grid_rate_hz, cfg.dims.n, cfg.random_phase, &mut rng)?;
        let y = actual.apply(&x.samples)?;
        let x_q = generate_multitone(cfg.k_calib, cfg.grid_rate_hz, cfg.m_q * cfg.dims.r, cfg.random_phase, &mut rng)?;
        rec.time_setup_s = Some(t0.elapsed().as_secs_f64());

        let mut calibrated = None;
        if models.contains(&Model::Calibrated) || study == Study::Calibration || study == Study::Benchmark {
            let (cal_nominal, cal_actual) = self.calibration_systems(cfg.m_q, &h_hw)?;
            let t = Instant::now();
            let measured = cal_actual.apply(&x_q.samples)?;
            let res = mbc_calibrate(&CalibrationInput {
                known_signal: x_q,
                system_model: cal_nominal,
                measured,
                m_q: cfg.m_q,
            })?;
            let sys = rebuild_system(&self.nominal, &res.h_ring)?;
            rec.time_mbc_s = Some(t.elapsed().as_secs_f64());
            rec.rmse_calibrated = Some(rmse(&res.h_ring, &h_hw_head)?);
            rec.branch = Some(res.branch);
            rec.samples_mbc = Some(res.samples_used);
            calibrated = Some(sys);
        }

        let mut dftti = None;
        if models.contains(&Model::Dftti) || study == Study::Benchmark {
            let counter = CountingSampler::new(&actual);
            let t = Instant::now();
            let out = dftti_calibrate(&counter, cfg.probe_budget)?;
            rec.time_dftti_s = Some(t.elapsed().as_secs_f64());
            rec.samples_dftti = Some(counter.samples());
            let taps = impulse_from_dense(&out.phi, &self.nominal, l)?;
            rec.rmse_dftti = Some(rmse(&taps, &h_hw_head)?);
            dftti = Some(out.phi);
        }

        let t = Instant::now();
        for model in &models {
            let (x_hat, _) = match model {
                Model::Nominal => reconstruct(&self.nominal, &self.dict, &y, &cfg.solver)?,
                Model::Oracle => reconstruct(&actual, &self.dict, &y, &cfg.solver)?,
                Model::Calibrated => match &calibrated {
                    Some(sys) => reconstruct(sys, &self.dict, &y, &cfg.solver)?,
                    None => continue,
                },
                Model::Dftti => match &dftti {
                    Some(phi) => reconstruct(phi, &self.dict, &y, &cfg.solver)?,
                    None => continue,
                },
            };
            let value = Some(snr(&x.samples, &x_hat)?);
            match model {
                Model::Nominal => rec.snr_nominal_model = value,
                Model::Oracle => rec.snr_oracle_model = value,
                Model::Calibrated => rec.snr_calibrated = value,
                Model::Dftti => rec.snr_dftti = value,
            }
        }
        if !models.is_empty() {
            rec.time_reconstruction_s = Some(t.elapsed().as_secs_f64());
        }
        Ok(())
    }

    fn run_records(&self, study: Study) -> Vec<TrialRecord> {
        (0..self.cfg.trials)
            .into_par_iter()
            .map(|t| self.run_trial(t, study))
            .collect()
    }
}

/// Nominal, hardware and MBC-calibrated taps of one trial, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseExample {
    pub nominal: ImpulseResponse,
    pub hardware: ImpulseResponse,
    pub calibrated: Option<ImpulseResponse>,
}

impl StudyContext {
    pub fn response_example(&self, trial: usize) -> Result<ResponseExample> {
        let cfg = &self.cfg;
        let mut rng = self.trial_rng(trial, 0x7121);
        let comps = self.perturbed_components(&mut rng)?;
        let hardware = self.hardware_response(&comps)?;
        let _x = generate_multitone(cfg.k_input, cfg.grid_rate_hz, cfg.dims.n, cfg.random_phase, &mut rng)?;
        let x_q = generate_multitone(cfg.k_calib, cfg.grid_rate_hz, cfg.m_q * cfg.dims.r, cfg.random_phase, &mut rng)?;
        let calibrated = match self.calibration_systems(cfg.m_q, &hardware) {
            Ok((nominal, actual)) => {
                let measured = actual.apply(&x_q.samples)?;
                let res = mbc_calibrate(&CalibrationInput { known_signal: x_q, system_model: nominal, measured, m_q: cfg.m_q })?;
                Some(res.h_ring)
            }
            Err(e) => {
                log::warn!("no calibrated response: {e}");
                None
            }
        };
        Ok(ResponseExample { nominal: self.h_nominal.clone(), hardware, calibrated })
    }
}

fn discretize_with(analog: &RationalTransferFunction, rate: f64, prewarp: Option<f64>, len: usize) -> Result<ImpulseResponse> {
    match prewarp {
        None => discretize(analog, rate, len),
        Some(f) => {
            let d = bilinear_transform_prewarped(analog, rate, f)?;
            let pf = crate::discretize::partial_fractions(&d)?;
            crate::discretize::impulse_response(&pf, len, rate)
        }
    }
}

/// Perturb, sample, and reconstruct with the nominal and the true model.
pub fn run_perturbation_study(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    Ok(StudyContext::new(cfg)?.run_records(Study::Perturbation))
}

/// As the perturbation study, plus MBC from `M_q` samples of a known multitone.
pub fn run_calibration_study(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    Ok(StudyContext::new(cfg)?.run_records(Study::Calibration))
}

/// MBC, DFTTI and the oracle side by side, sorted by uncalibrated RMSE.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    let mut records = StudyContext::new(cfg)?.run_records(Study::Benchmark);
    sort_by_uncalibrated_rmse(&mut records);
    Ok(records)
}

pub fn sort_by_uncalibrated_rmse(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        let ka = a.rmse_uncalibrated.unwrap_or(f64::INFINITY);
        let kb = b.rmse_uncalibrated.unwrap_or(f64::INFINITY);
        ka.total_cmp(&kb).then(a.trial.cmp(&b.trial))
    });
}

/// One `(M_q, K)` cell of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub schema_version: u32,
    pub m_q: usize,
    pub k: usize,
    pub trials: usize,
    pub failed: usize,
    pub mean_rmse_uncalibrated: f64,
    pub mean_rmse_calibrated: f64,
    pub median_rmse_calibrated: f64,
    pub least_squares_trials: usize,
    pub tikhonov_trials: usize,
    pub wall_time_s: f64,
}

/// Mean calibrated RMSE and wall time for every `(M_q, K)` pair.
pub fn run_mq_sweep(cfg: &ExperimentConfig, mq_list: &[usize], k_list: &[usize]) -> Result<Vec<SweepCell>> {
    if mq_list.is_empty() || k_list.is_empty() || mq_list.contains(&0) || k_list.contains(&0) {
        return Err(Error::InvalidParameter("sweep lists must be non-empty and positive".into()));
    }
    let ctx = StudyContext::new(cfg)?;
    let l = cfg.model_length();
    let mut cells = Vec::with_capacity(mq_list.len() * k_list.len());
    for &m_q in mq_list {
        for &k in k_list {
            let start = Instant::now();
            let outcomes: Vec<Result<(f64, f64, Branch)>> = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = ctx.trial_rng(trial, 0x5EE9);
                    let comps = ctx.perturbed_components(&mut rng)?;
                    let h_hw = ctx.hardware_response(&comps)?;
                    let head = h_hw.truncated(l);
                    let x_q = generate_multitone(k, cfg.grid_rate_hz, m_q * cfg.dims.r, cfg.random_phase, &mut rng)?;
                    let (nominal, actual) = ctx.calibration_systems(m_q, &h_hw)?;
                    let measured = actual.apply(&x_q.samples)?;
                    let res = mbc_calibrate(&CalibrationInput { known_signal: x_q, system_model: nominal, measured, m_q })?;
                    Ok((rmse(&head, &ctx.h_nominal)?, rmse(&res.h_ring, &head)?, res.branch))
                })
                .collect();
            let ok: Vec<&(f64, f64, Branch)> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
            for e in outcomes.iter().filter_map(|o| o.as_ref().err()) {
                log::warn!("sweep cell M_q={m_q} K={k}: {e}");
            }
            let calibrated: Vec<f64> = ok.iter().map(|o| o.1).collect();
            cells.push(SweepCell {
                schema_version: SWEEP_SCHEMA_VERSION,
                m_q,
                k,
                trials: cfg.trials,
                failed: cfg.trials - ok.len(),
                mean_rmse_uncalibrated: mean(ok.iter().map(|o| o.0)).unwrap_or(f64::NAN),
                mean_rmse_calibrated: mean(calibrated.iter().copied()).unwrap_or(f64::NAN),
                median_rmse_calibrated: median(&calibrated).unwrap_or(f64::NAN),
                least_squares_trials: ok.iter().filter(|o| o.2 == Branch::LeastSquares).count(),
                tikhonov_trials: ok.iter().filter(|o| o.2 == Branch::Tikhonov).count(),
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(cells)
}

/// Output of [`run_study`].
#[derive(Debug, Clone, PartialEq)]
pub enum StudyOutput {
    Trials(Vec<TrialRecord>),
    Sweep(Vec<SweepCell>),
}

pub fn run_study(cfg: &ExperimentConfig, study: Study) -> Result<StudyOutput> {
    Ok(match study {
        Study::Perturbation => StudyOutput::Trials(run_perturbation_study(cfg)?),
        Study::Calibration => StudyOutput::Trials(run_calibration_study(cfg)?),
        Study::Benchmark => StudyOutput::Trials(run_benchmark(cfg)?),
        Study::MqSweep => StudyOutput::Sweep(run_mq_sweep(cfg, &cfg.mq_list, &cfg.k_list)?),
    })
}

pub fn mean<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            count: values.len(),
            mean: mean(values.iter().copied())?,
            median: median(values)?,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub trials: usize,
    pub failed: usize,
    pub metrics: BTreeMap<String, Stat>,
    /// `mean Q(e) / mean Q(ê)`.
    pub reduction_factor: Option<f64>,
    pub dftti_reduction_factor: Option<f64>,
    /// Trials where calibration increased the RMSE.
    pub degraded_trials: Vec<usize>,
    /// Share of trials where the calibrated SNR is at least the nominal one.
    pub calibrated_not_worse_fraction: Option<f64>,
    pub least_squares_trials: usize,
    pub tikhonov_trials: usize,
}

pub fn summarize(records: &[TrialRecord]) -> StudySummary {
    let ok: Vec<&TrialRecord> = records.iter().filter(|r| !r.failed()).collect();
    let mut metrics = BTreeMap::new();
    let fields: [(&str, fn(&TrialRecord) -> Option<f64>); 12] = [
        ("rmse_uncalibrated", |r| r.rmse_uncalibrated),
        ("rmse_calibrated", |r| r.rmse_calibrated),
        ("rmse_dftti", |r| r.rmse_dftti),
        ("snr_nominal_model", |r| r.snr_nominal_model),
        ("snr_oracle_model", |r| r.snr_oracle_model),
        ("snr_calibrated", |r| r.snr_calibrated),
        ("snr_dftti", |r| r.snr_dftti),
        ("samples_mbc", |r| r.samples_mbc.map(|v| v as f64)),
        ("samples_dftti", |r| r.samples_dftti.map(|v| v as f64)),
        ("time_mbc_s", |r| r.time_mbc_s),
        ("time_dftti_s", |r| r.time_dftti_s),
        ("time_reconstruction_s", |r| r.time_reconstruction_s),
    ];
    for (name, get) in fields {
        let values: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
        if let Some(s) = Stat::of(&values) {
            metrics.insert(name.to_string(), s);
        }
    }
    let ratio = |num: &str, den: &str| match (metrics.get(num), metrics.get(den)) {
        (Some(a), Some(b)) if b.mean > 0.0 => Some(a.mean / b.mean),
        _ => None,
    };
    let reduction_factor = ratio("rmse_uncalibrated", "rmse_calibrated");
    let dftti_reduction_factor = ratio("rmse_uncalibrated", "rmse_dftti");
    let degraded_trials = ok
        .iter()
        .filter(|r| matches!((r.rmse_calibrated, r.rmse_uncalibrated), (Some(c), Some(u)) if c > u))
        .map(|r| r.trial)
        .collect();
    let pairs: Vec<bool> = ok
        .iter()
        .filter_map(|r| match (r.snr_calibrated, r.snr_nominal_model) {
            (Some(c), Some(n)) => Some(c >= n),
            _ => None,
        })
        .collect();
    let calibrated_not_worse_fraction =
        (!pairs.is_empty()).then(|| pairs.iter().filter(|&&b| b).count() as f64 / pairs.len() as f64);
    StudySummary {
        trials: records.len(),
        failed: records.len() - ok.len(),
        metrics,
        reduction_factor,
        dftti_reduction_factor,
        degraded_trials,
        calibrated_not_worse_fraction,
        least_squares_trials: ok.iter().filter(|r| r.branch == Some(Branch::LeastSquares)).count(),
        tikhonov_trials: ok.iter().filter(|r| r.branch == Some(Branch::Tikhonov)).count(),
    }
}

pub fn write_records_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_versioned<R: Read, T: serde::de::DeserializeOwned>(r: R, version: u32, version_of: fn(&T) -> u32) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: T = row?;
        if version_of(&row) != version {
            return Err(Error::InvalidParameter(format!(
                "results schema version {} is not the supported {version}",
                version_of(&row)
            )));
        }
        out.push(row);
    }
    Ok(out)
}

/// Strict reader: unknown or missing columns and other schema versions fail.
pub fn read_trial_records<R: Read>(r: R) -> Result<Vec<TrialRecord>> {
    read_versioned(r, TRIAL_SCHEMA_VERSION, |t: &TrialRecord| t.schema_version)
}

pub fn read_sweep_cells<R: Read>(r: R) -> Result<Vec<SweepCell>> {
    read_versioned(r, SWEEP_SCHEMA_VERSION, |t: &SweepCell| t.schema_version)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin { lower: lo + i as f64 * width, upper: lo + (i + 1) as f64 * width, count: 0 })
        .collect();
    for v in finite {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}
